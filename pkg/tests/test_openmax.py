"""Weibull tail fitting and OpenMax recalibration."""

import numpy as np
import pytest
from scipy import optimize, stats

from superosr.errors import ConfigError, DegenerateTailError, InputError
from superosr.openmax import (
    OpenMaxConfig,
    WeibullModel,
    fit_openmax,
    fit_weibull_tail,
    openmax_recalibrate,
    weibull_cdf,
    weibull_mle,
)
from superosr.representation import MeanActivationVector


def reference_mle(x):
    """Independent numeric optimizer over the Weibull log-likelihood."""

    def neg_log_lik(params):
        shape, scale = np.exp(params)  # positivity via log-parameterization
        return -np.sum(stats.weibull_min.logpdf(x, shape, scale=scale))

    res = optimize.minimize(neg_log_lik, x0=[0.0, 0.0], method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000})
    return tuple(np.exp(res.x))


@pytest.mark.parametrize("true_shape", [1.0, 2.0])
def test_mle_recovers_known_parameters_and_matches_reference(true_shape):
    rng = np.random.default_rng(42)
    x = rng.weibull(true_shape, size=10_000) * 1.0
    shape, scale = weibull_mle(x)
    assert abs(shape - true_shape) / true_shape < 0.05
    assert abs(scale - 1.0) < 0.05
    ref_shape, ref_scale = reference_mle(x)
    assert abs(shape - ref_shape) / ref_shape < 1e-3
    assert abs(scale - ref_scale) / ref_scale < 1e-3


def test_mle_rejects_constant_or_invalid_samples():
    with pytest.raises(DegenerateTailError):
        weibull_mle(np.full(50, 3.0))
    with pytest.raises(InputError):
        weibull_mle(np.array([1.0, -2.0]))
    with pytest.raises(InputError):
        weibull_mle(np.array([1.0]))


def test_fit_tail_uses_largest_distances_and_shifts_to_zero():
    rng = np.random.default_rng(7)
    dists = np.sort(rng.random(200) * 5.0)
    model = fit_weibull_tail(dists, tail_size=30, class_id=2)
    assert model.class_id == 2
    assert model.tail_size == 30
    assert model.shift == pytest.approx(dists[-30])
    assert model.shape > 0 and model.scale > 0


def test_fit_tail_input_validation():
    with pytest.raises(InputError):
        fit_weibull_tail(np.ones(5), tail_size=10)
    with pytest.raises(DegenerateTailError):
        fit_weibull_tail(np.ones(50), tail_size=20)
    with pytest.raises(InputError):
        fit_weibull_tail(np.array([-1.0, 1.0, 2.0]), tail_size=2)


def test_cdf_is_zero_at_shift_monotone_and_saturates():
    rng = np.random.default_rng(3)
    model = fit_weibull_tail(rng.random(100) * 2.0, tail_size=25)
    assert weibull_cdf(model, model.shift) == 0.0
    assert weibull_cdf(model, model.shift - 1.0) == 0.0
    grid = model.shift + np.linspace(0.0, 50.0 * model.scale, 400)
    values = weibull_cdf(model, grid)
    assert np.all(np.diff(values) >= -1e-15)
    assert model.shape >= 0.5
    assert values[-1] >= 0.999999


def _setup_recalibration(k=4, d=6, seed=0, dist_offset=0.0):
    rng = np.random.default_rng(seed)
    mavs = [MeanActivationVector(c, rng.random(d) * 4.0, 50) for c in range(k)]
    weibulls = []
    for c in range(k):
        dists = rng.random(100) * 2.0 + dist_offset
        weibulls.append(fit_weibull_tail(dists, tail_size=20, class_id=c))
    return mavs, weibulls, OpenMaxConfig(tail_size=20, alpha=3)


def test_sample_at_top_class_mean_keeps_unknown_smallest():
    # tails start beyond every inter-mean distance, so at the top class's
    # mean every top-alpha CDF is ~0 and no activation mass is removed
    mavs, weibulls, cfg = _setup_recalibration(dist_offset=20.0)
    logits = np.array([3.0, 2.0, 1.0, 0.5])
    probs = openmax_recalibrate(mavs[0].vector, logits, mavs, weibulls, cfg)
    assert probs.shape == (5,)
    assert np.argmin(probs) == 4
    assert all(probs[4] < probs[c] for c in range(4))


def test_far_sample_makes_unknown_the_argmax():
    mavs, weibulls, cfg = _setup_recalibration()
    far = mavs[0].vector + 1e6
    logits = np.array([3.0, 2.0, 1.0, 0.5])
    probs = openmax_recalibrate(far, logits, mavs, weibulls, cfg)
    assert np.argmax(probs) == 4


def test_output_is_a_probability_simplex():
    mavs, weibulls, cfg = _setup_recalibration(seed=5)
    rng = np.random.default_rng(9)
    for _ in range(25):
        av = rng.standard_normal(6) * 3.0
        logits = rng.standard_normal(4) * 2.0
        probs = openmax_recalibrate(av, logits, mavs, weibulls, cfg)
        assert abs(probs.sum() - 1.0) < 1e-12
        assert np.all(probs >= 0.0) and np.all(probs <= 1.0)


def test_unknown_probability_monotone_in_top_class_distance():
    # alpha=1 revises only the top class, so moving the sample changes the
    # top-class distance alone; everything else is held fixed by construction
    mavs, weibulls, _ = _setup_recalibration(seed=11)
    cfg = OpenMaxConfig(tail_size=20, alpha=1)
    rng = np.random.default_rng(13)
    for probe in range(100):
        direction = rng.standard_normal(6)
        direction /= np.linalg.norm(direction)
        logits = rng.random(4) * 3.0 + 0.1  # non-negative top activation
        top = int(np.argmax(logits))
        radii = np.sort(rng.random(6) * 6.0)
        unknown_probs = []
        for r in radii:
            av = mavs[top].vector + r * direction
            unknown_probs.append(openmax_recalibrate(av, logits, mavs, weibulls, cfg)[-1])
        diffs = np.diff(unknown_probs)
        assert np.all(diffs >= -1e-12), f"probe {probe} not monotone"


def test_missing_weibull_for_top_class_is_config_error():
    mavs, weibulls, cfg = _setup_recalibration()
    with pytest.raises(ConfigError):
        openmax_recalibrate(mavs[0].vector, np.array([3.0, 2.0, 1.0, 0.5]),
                            mavs, weibulls[1:], cfg)


def test_alpha_bounds_validated():
    mavs, weibulls, _ = _setup_recalibration()
    with pytest.raises(ConfigError):
        openmax_recalibrate(mavs[0].vector, np.zeros(4), mavs, weibulls,
                            OpenMaxConfig(alpha=5))


def test_fit_openmax_uses_correct_samples_and_clamps_tail():
    rng = np.random.default_rng(21)
    avs = np.concatenate([rng.normal(0, 1, (30, 4)), rng.normal(5, 1, (10, 4))])
    labels = np.array([0] * 30 + [1] * 10)
    predicted = labels.copy()
    predicted[:5] = 1  # five class-0 samples misclassified: excluded from the fit
    mavs = [
        MeanActivationVector(0, avs[labels == 0].mean(axis=0), 30),
        MeanActivationVector(1, avs[labels == 1].mean(axis=0), 10),
    ]
    models = fit_openmax(avs, labels, predicted, mavs, OpenMaxConfig(tail_size=20, alpha=2))
    assert models[0].tail_size == min(20, 25 // 2)
    assert models[1].tail_size == min(20, 10 // 2)


def test_weibull_model_is_frozen():
    model = WeibullModel(0, 2.0, 1.0, 0.0, 10)
    with pytest.raises(AttributeError):
        model.shape = 3.0
