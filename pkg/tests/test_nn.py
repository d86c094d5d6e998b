"""Network stack: forward fixtures, gradient oracles, Adam, determinism."""

import math

import numpy as np
import pytest

from superosr import nn
from superosr.errors import ConfigError, InputError, NumericError


def build(specs, shape, pen=0, seed=0):
    return nn.build_model(specs, shape, pen, seed)


def test_dense_identity_weights_pass_input_through():
    model = build([nn.dense(3)], (3,))
    layer = model.layers[0]
    layer.w.value[:] = np.eye(3)
    layer.b.value[:] = 0.0
    v = np.array([[0.3, -1.2, 2.0]])
    logits, avs, _ = nn.forward_pass(model, v, rng_seed=0)
    np.testing.assert_array_equal(logits, v)
    np.testing.assert_array_equal(avs, logits)


def test_conv_identity_kernel_passes_input_through():
    layer = nn._Conv2d(nn.conv2d(1, 1, kernel=1), 0, np.random.default_rng(0))
    layer.w.value[:] = 1.0
    layer.b.value[:] = 0.0
    x = np.random.default_rng(0).random((2, 4, 4, 1))
    out, _ = layer.forward(x, train=True, rng=None)
    np.testing.assert_allclose(out, x, rtol=1e-15)


def test_two_layer_mlp_matches_hand_matrix_arithmetic():
    model = build([nn.dense(2, in_dim=3), nn.dense(2, in_dim=2)], (3,), pen=0)
    w1 = np.array([[1.0, 0.5], [-1.0, 2.0], [0.0, 1.0]])
    b1 = np.array([0.1, -0.2])
    w2 = np.array([[2.0, 0.0], [1.0, -1.0]])
    b2 = np.array([0.0, 0.3])
    model.layers[0].w.value[:] = w1
    model.layers[0].b.value[:] = b1
    model.layers[1].w.value[:] = w2
    model.layers[1].b.value[:] = b2
    v = np.array([[1.0, 2.0, -1.0]])
    expected = (v @ w1 + b1) @ w2 + b2
    logits, _, _ = nn.forward_pass(model, v, rng_seed=0)
    np.testing.assert_allclose(logits, expected, rtol=1e-15)


def test_backward_zero_upstream_gives_zero_parameter_gradients():
    model = build([nn.dense(4), nn.relu(), nn.dense(3)], (5,))
    x = np.random.default_rng(1).standard_normal((6, 5))
    logits, avs, cache = nn.forward_pass(model, x, rng_seed=0)
    grads = nn.backward_pass(model, cache, np.zeros_like(logits), np.zeros_like(avs))
    for g in grads:
        assert not g.any()


def test_dense_gradient_outer_product_structure():
    # loss = sum of outputs => dW[i, j] = sum_batch x[:, i], db = batch size
    model = build([nn.dense(3, in_dim=4)], (4,))
    x = np.random.default_rng(2).standard_normal((5, 4))
    logits, avs, cache = nn.forward_pass(model, x, rng_seed=0)
    grads = nn.backward_pass(model, cache, np.ones_like(logits), np.zeros_like(avs))
    expected_w = np.outer(x.sum(axis=0), np.ones(3))
    np.testing.assert_allclose(grads[0], expected_w, rtol=1e-12)
    np.testing.assert_allclose(grads[1], np.full(3, 5.0), rtol=1e-12)


def test_full_network_gradients_match_finite_differences():
    specs = [nn.conv2d(1, 2), nn.relu(), nn.maxpool2(), nn.dense(5), nn.relu(), nn.dense(3)]
    model = build(specs, (6, 6, 1), pen=4, seed=3)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 6, 6, 1))
    labels = rng.integers(0, 3, size=4)

    def loss_fn():
        logits, _, _ = nn.forward_pass(model, x, rng_seed=7)
        return nn.cross_entropy_loss(logits, labels)[0]

    logits, avs, cache = nn.forward_pass(model, x, rng_seed=7)
    _, grad_logits = nn.cross_entropy_loss(logits, labels)
    grads = nn.backward_pass(model, cache, grad_logits, np.zeros_like(avs))
    worst = nn.finite_diff_check(loss_fn, [p.value for p in model.params()], grads, 3e-5)
    assert worst < 1e-4


def test_cross_entropy_uniform_logits_is_log_k():
    logits = np.zeros((2, 6))
    loss, grad = nn.cross_entropy_loss(logits, [0, 3])
    assert abs(loss - math.log(6.0)) < 1e-12
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)


def test_cross_entropy_saturated_true_logit_is_stable():
    logits = np.array([[1000.0, 0.0, 0.0]])
    loss, grad = nn.cross_entropy_loss(logits, [0])
    assert 0.0 <= loss < 1e-12
    assert np.all(np.isfinite(grad))


def test_cross_entropy_hand_softmax_fixture():
    # softmax of (1,2,3) gives p[2] = 1/(1 + e^-1 + e^-2); -log = 0.40760596...
    logits = np.array([[1.0, 2.0, 3.0]])
    loss, _ = nn.cross_entropy_loss(logits, [2])
    expected = -math.log(1.0 / (1.0 + math.exp(-1.0) + math.exp(-2.0)))
    assert abs(loss - expected) < 1e-12
    assert abs(loss - 0.4076) < 5e-5


def test_cross_entropy_label_out_of_range():
    with pytest.raises(InputError):
        nn.cross_entropy_loss(np.zeros((1, 3)), [3])


def test_adam_zero_gradient_leaves_parameters_unchanged():
    val = np.array([1.0, -2.0])
    state = nn.AdamState.for_params([val])
    nn.adam_update([val], [np.zeros(2)], state)
    np.testing.assert_array_equal(val, [1.0, -2.0])
    assert state.t == 1


def test_adam_single_step_bias_corrected_fixture():
    # m_hat = v_hat = 1 after one unit-gradient step, so the step is ~lr
    val = np.array([0.0])
    state = nn.AdamState.for_params([val], lr=0.001)
    nn.adam_update([val], [np.ones(1)], state)
    assert abs(val[0] + 0.001) < 1e-9


def test_adam_identical_tensors_get_identical_updates():
    a, b = np.array([0.5, 1.5]), np.array([0.5, 1.5])
    g = np.array([0.3, -0.7])
    state = nn.AdamState.for_params([a, b])
    for _ in range(5):
        nn.adam_update([a, b], [g, g], state)
    np.testing.assert_array_equal(a, b)


def test_finite_diff_check_quadratic_polynomial_exactness():
    x = np.array([1.0, 2.0])

    def loss_fn():
        return float((x**2).sum())

    worst = nn.finite_diff_check(loss_fn, [x], [2.0 * x], 1e-5)
    assert worst < 1e-8


def test_finite_diff_check_epsilon_bounds():
    x = np.array([1.0])
    with pytest.raises(InputError):
        nn.finite_diff_check(lambda: 0.0, [x], [x], 1e-2)


def test_finite_diff_check_rejects_non_finite_loss():
    x = np.array([1.0])
    with pytest.raises(NumericError):
        nn.finite_diff_check(lambda: float("nan"), [x], [np.zeros(1)], 1e-5)


def test_dropout_frozen_mask_gradient_checks():
    model = build([nn.dense(6), nn.relu(), nn.dropout(0.5), nn.dense(3)], (4,), pen=0, seed=5)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 4))
    labels = rng.integers(0, 3, size=6)

    def loss_fn():
        logits, _, _ = nn.forward_pass(model, x, rng_seed=11)
        return nn.cross_entropy_loss(logits, labels)[0]

    logits, avs, cache = nn.forward_pass(model, x, rng_seed=11)
    _, grad_logits = nn.cross_entropy_loss(logits, labels)
    grads = nn.backward_pass(model, cache, grad_logits, np.zeros_like(avs))
    worst = nn.finite_diff_check(loss_fn, [p.value for p in model.params()], grads, 3e-5)
    assert worst < 1e-4


def test_dropout_eval_is_identity_and_train_scales_by_keep():
    model = build([nn.dropout(0.25), nn.dense(2)], (50,), pen=1)
    x = np.ones((8, 50))
    model.eval()
    _, _, cache = nn.forward_pass(model, x, rng_seed=0)
    assert cache[0] is None
    model.train()
    _, _, cache = nn.forward_pass(model, x, rng_seed=0)
    mask = cache[0]
    assert set(np.unique(mask)) <= {0.0, 4.0}  # inverted dropout scale 1/keep


def test_training_is_bit_deterministic():
    def run():
        model = build([nn.dense(8), nn.relu(), nn.dense(3)], (5,), pen=1, seed=9)
        values = [p.value for p in model.params()]
        state = nn.AdamState.for_params(values)
        rng = np.random.default_rng(42)
        x = rng.standard_normal((12, 5))
        labels = rng.integers(0, 3, size=12)
        for it in range(20):
            logits, avs, cache = nn.forward_pass(model, x, rng_seed=it)
            _, grad_logits = nn.cross_entropy_loss(logits, labels)
            grads = nn.backward_pass(model, cache, grad_logits, np.zeros_like(avs))
            nn.adam_update(values, grads, state)
        return [v.copy() for v in values]

    first, second = run(), run()
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)


def test_eval_mode_forward_is_pure():
    model = build([nn.dense(4), nn.batchnorm(), nn.relu(), nn.dense(2)], (3,), pen=0)
    x = np.random.default_rng(0).standard_normal((6, 3))
    nn.forward_pass(model, x, rng_seed=0)  # train: updates running stats
    bn = model.layers[1]
    model.eval()
    before = (bn.running_mean.copy(), bn.running_var.copy())
    nn.forward_pass(model, x, rng_seed=0)
    np.testing.assert_array_equal(bn.running_mean, before[0])
    np.testing.assert_array_equal(bn.running_var, before[1])


@pytest.mark.parametrize("k", [2, 6, 10])
def test_shape_algebra_conv_stack_on_28x28(k):
    specs = [
        nn.conv2d(1, 8), nn.batchnorm(), nn.relu(), nn.maxpool2(),
        nn.conv2d(8, 16), nn.batchnorm(), nn.relu(), nn.maxpool2(),
        nn.dense(32), nn.relu(), nn.dropout(0.2), nn.dense(k),
    ]
    model = build(specs, (28, 28, 1), pen=9)
    x = np.random.default_rng(1).random((3, 28, 28, 1))
    logits, avs, _ = nn.forward_pass(model, x, rng_seed=0)
    assert logits.shape == (3, k)
    assert avs.shape == (3, 32)


def test_batch_shape_mismatch_is_config_error():
    model = build([nn.dense(2)], (4,))
    with pytest.raises(ConfigError):
        nn.forward_pass(model, np.zeros((1, 5)), rng_seed=0)


def test_non_finite_activation_names_the_layer():
    model = build([nn.dense(2)], (2,))
    model.layers[0].w.value[:] = np.inf
    with pytest.raises(NumericError, match="dense"):
        nn.forward_pass(model, np.ones((1, 2)), rng_seed=0)


def test_penultimate_must_tap_a_dense_block():
    with pytest.raises(ConfigError):
        build([nn.relu(), nn.dense(3)], (4,), pen=0)
