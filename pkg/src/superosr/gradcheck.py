"""End-to-end gradient verification, exposed as the ``gradcheck`` CLI verb.

Each layer kind gets a small seeded network arranged so every parameter has
a live gradient (batchnorm sits after a relu: a bias feeding straight into
batch normalization has exactly zero effect, which makes an elementwise
relative comparison meaningless).  The feature-loss pipeline is checked on a
free activation matrix with the PCA basis frozen, and a combined check runs
cross-entropy plus injected feature-loss gradients through a full conv stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .loss import LossConfig, superlative_loss
from .representation import compute_mavs, fit_pca_basis, mav_matrix

TOLERANCE = 1e-4
_EPSILON = 3e-5
_N_SEEDS = 5


@dataclass
class CheckResult:
    component: str
    worst_rel_err: float

    @property
    def passed(self) -> bool:
        return self.worst_rel_err < TOLERANCE


def _net_check(specs, input_shape, penultimate, n_classes, seed, batch=8, corrupt=False):
    model = nn.build_model(specs, input_shape, penultimate, seed=seed)
    rng = np.random.default_rng(seed + 9000)
    x = 0.7 * rng.standard_normal((batch,) + tuple(input_shape))
    labels = rng.integers(0, n_classes, size=batch)

    def loss_fn():
        logits, _, _ = nn.forward_pass(model, x, rng_seed=seed)
        return nn.cross_entropy_loss(logits, labels)[0]

    logits, avs, cache = nn.forward_pass(model, x, rng_seed=seed)
    _, grad_logits = nn.cross_entropy_loss(logits, labels)
    grads = nn.backward_pass(model, cache, grad_logits, np.zeros_like(avs))
    if corrupt:
        grads[0] = grads[0] * 1.05 + 1e-3
    values = [p.value for p in model.params()]
    return nn.finite_diff_check(loss_fn, values, grads, _EPSILON)


_LAYER_NETS = {
    "dense": lambda: ([nn.dense(4), nn.relu(), nn.dense(3)], (5,), 0, 3),
    "conv2d": lambda: ([nn.conv2d(2, 3), nn.relu(), nn.dense(4)], (6, 6, 2), 2, 4),
    "maxpool2": lambda: ([nn.conv2d(1, 2), nn.relu(), nn.maxpool2(), nn.dense(3)], (6, 6, 1), 3, 3),
    "relu": lambda: ([nn.dense(5), nn.relu(), nn.dense(3)], (4,), 0, 3),
    "dropout": lambda: ([nn.dense(6), nn.relu(), nn.dropout(0.6), nn.dense(3)], (5,), 0, 3),
    "batchnorm": lambda: (
        [nn.dense(5), nn.relu(), nn.batchnorm(), nn.relu(), nn.dense(3)], (4,), 0, 3
    ),
    "softmax": lambda: ([nn.dense(4), nn.relu(), nn.dense(3), nn.softmax()], (5,), 0, 3),
}


def _loss_pipeline_check(seed, corrupt=False):
    rng = np.random.default_rng(seed)
    d = 8 if seed % 2 == 0 else 32
    k, per = 6, 4
    avs = 0.5 * rng.standard_normal((k * per, d))
    labels = np.repeat(np.arange(k), per)
    cfg = LossConfig(gamma=1.25)
    basis = fit_pca_basis(mav_matrix(compute_mavs(avs, labels, k)))
    report = superlative_loss(avs, labels, cfg, basis=basis)
    grad = report.grad_avs * 1.05 + 1e-3 if corrupt else report.grad_avs
    frozen_radius = report.radius  # stop-gradient quantity, fixed like the basis

    def loss_fn():
        return superlative_loss(avs, labels, cfg, basis=basis, radius=frozen_radius).l_s

    return nn.finite_diff_check(loss_fn, [avs], [grad], _EPSILON)


def _combined_check(seed, corrupt=False):
    specs = [
        nn.conv2d(1, 2),
        nn.relu(),
        nn.maxpool2(),
        nn.dense(6),
        nn.relu(),
        nn.dropout(0.8),
        nn.dense(3),
    ]
    input_shape, penultimate, k = (6, 6, 1), 4, 3
    model = nn.build_model(specs, input_shape, penultimate, seed=seed)
    rng = np.random.default_rng(seed + 9000)
    per = 2
    x = 0.7 * rng.standard_normal((k * per,) + input_shape)
    labels = np.repeat(np.arange(k), per)
    lcfg = LossConfig(gamma=1.25)
    _, avs0, _ = nn.forward_pass(model, x, rng_seed=seed)
    basis = fit_pca_basis(mav_matrix(compute_mavs(avs0, labels, k)))
    base_report = superlative_loss(avs0, labels, lcfg, basis=basis)
    frozen_radius = base_report.radius

    def loss_fn():
        logits, avs, _ = nn.forward_pass(model, x, rng_seed=seed)
        ce = nn.cross_entropy_loss(logits, labels)[0]
        return ce + superlative_loss(avs, labels, lcfg, basis=basis, radius=frozen_radius).l_s

    logits, avs, cache = nn.forward_pass(model, x, rng_seed=seed)
    _, grad_logits = nn.cross_entropy_loss(logits, labels)
    grad_avs = superlative_loss(avs, labels, lcfg, basis=basis, radius=frozen_radius).grad_avs
    grads = nn.backward_pass(model, cache, grad_logits, grad_avs)
    if corrupt:
        grads[0] = grads[0] * 1.05 + 1e-3
    values = [p.value for p in model.params()]
    return nn.finite_diff_check(loss_fn, values, grads, _EPSILON)


def run_gradcheck(base_seed: int = 0, corrupt: bool = False) -> list[CheckResult]:
    """Every layer kind, the frozen-basis loss pipeline, and the combined
    network, each over several seeds; worst relative error per component.

    ``corrupt`` deliberately perturbs one analytic gradient per component so
    callers can verify the harness actually fails (negative control).
    """
    results = []
    for kind, make in _LAYER_NETS.items():
        specs, shape, pen, k = make()
        worst = 0.0
        for s in range(_N_SEEDS):
            specs, shape, pen, k = make()
            worst = max(worst, _net_check(specs, shape, pen, k, base_seed + 31 * s, corrupt=corrupt))
        results.append(CheckResult(kind, worst))
    worst = max(_loss_pipeline_check(base_seed + s, corrupt=corrupt) for s in range(_N_SEEDS))
    results.append(CheckResult("superlative-loss-pipeline", worst))
    worst = max(_combined_check(base_seed + 101 * s, corrupt=corrupt) for s in range(_N_SEEDS))
    results.append(CheckResult("full-network-combined", worst))
    return results
