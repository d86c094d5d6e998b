"""OpenMax baseline: Weibull tails over distances to class means, and logit
recalibration into K+1 probabilities.

Per class, the largest distances between correctly classified training
samples and their class mean are shifted to start at zero and fitted with a
two-parameter Weibull by maximum likelihood (bisection on the shape
stationarity equation, closed-form scale).  At inference the top-ranked
classes have their activations discounted by the rank-weighted Weibull CDF
of the sample's distance, the discounted mass becomes the unknown-class
pseudo-activation, and a softmax over the K+1 revised activations gives the
output distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateTailError, InputError
from .representation import MeanActivationVector

_BISECT_TOL = 1e-10


@dataclass(frozen=True)
class WeibullModel:
    class_id: int
    shape: float
    scale: float
    shift: float  # location offset; the fitted tail starts at zero here
    tail_size: int


@dataclass
class OpenMaxConfig:
    tail_size: int = 20
    alpha: int = 3
    distance: str = "euclidean"

    def validate(self, n_classes: int):
        if self.tail_size < 2:
            raise ConfigError("tail_size must be >= 2")
        if not 1 <= self.alpha <= n_classes:
            raise ConfigError(f"alpha must lie in [1, {n_classes}]")
        if self.distance not in ("euclidean", "squared-euclidean"):
            raise ConfigError("distance must be euclidean or squared-euclidean")


def _shape_stationarity(k: float, x: np.ndarray, mean_log: float) -> float:
    xk = x**k
    return float((xk * np.log(x)).sum() / xk.sum() - 1.0 / k - mean_log)


def weibull_mle(samples: np.ndarray) -> tuple[float, float]:
    """Maximum-likelihood (shape, scale) for strictly positive samples.

    The shape solves the 1-D stationarity equation by bisection (the equation
    is monotone in the shape); the scale then has a closed form.  Samples are
    normalized by their maximum for overflow safety; the scale is rescaled
    back afterwards.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise InputError("Weibull MLE needs at least 2 samples")
    if np.any(x <= 0.0):
        raise InputError("Weibull MLE needs strictly positive samples")
    if float(x.max()) == float(x.min()):
        raise DegenerateTailError("all samples equal; Weibull MLE is undefined")
    xmax = float(x.max())
    x = x / xmax
    mean_log = float(np.log(x).mean())

    lo, hi = 1e-3, 1.0
    while _shape_stationarity(lo, x, mean_log) > 0.0:
        lo /= 2.0
        if lo < 1e-12:
            raise DegenerateTailError("Weibull shape bracket collapsed")
    while _shape_stationarity(hi, x, mean_log) < 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise DegenerateTailError("Weibull shape diverged")
    while hi - lo > _BISECT_TOL * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if _shape_stationarity(mid, x, mean_log) < 0.0:
            lo = mid
        else:
            hi = mid
    shape = 0.5 * (lo + hi)
    scale = float(np.mean(x**shape) ** (1.0 / shape)) * xmax
    return shape, scale


def fit_weibull_tail(distances, tail_size: int, class_id: int = -1) -> WeibullModel:
    """Fit the right tail of a distance sample.

    Takes the ``tail_size`` largest distances, shifts them by their minimum so
    the tail starts at zero, and fits the strictly positive remainder (the
    boundary point itself carries no likelihood information at zero).
    """
    d = np.sort(np.asarray(distances, dtype=np.float64))
    if tail_size < 2:
        raise InputError("tail_size must be >= 2")
    if d.size < tail_size:
        raise InputError(f"need at least tail_size={tail_size} distances, got {d.size}")
    if np.any(d < 0.0):
        raise InputError("distances must be non-negative")
    tail = d[-tail_size:]
    shift = float(tail[0])
    positive = tail[tail > shift] - shift
    if positive.size < 2:
        raise DegenerateTailError("tail has no spread; Weibull fit is undefined")
    shape, scale = weibull_mle(positive)
    return WeibullModel(class_id=class_id, shape=shape, scale=scale, shift=shift, tail_size=tail_size)


def weibull_cdf(model: WeibullModel, x) -> np.ndarray | float:
    """CDF of the shifted Weibull: zero at and below the shift."""
    x = np.asarray(x, dtype=np.float64)
    z = np.maximum(x - model.shift, 0.0) / model.scale
    out = 1.0 - np.exp(-(z**model.shape))
    return float(out) if out.ndim == 0 else out


def _distance(av: np.ndarray, mav: np.ndarray, kind: str) -> float:
    d2 = float(np.sum((av - mav) ** 2))
    return d2 if kind == "squared-euclidean" else float(np.sqrt(d2))


def fit_openmax(
    train_avs: np.ndarray,
    labels,
    predicted,
    mavs: list[MeanActivationVector],
    config: OpenMaxConfig,
) -> list[WeibullModel]:
    """Per-class tail models from correctly classified training samples.

    The tail size is clamped to half the class's correct-sample count for
    small classes (never below 2).
    """
    train_avs = np.asarray(train_avs, dtype=np.float64)
    labels = np.asarray(labels)
    predicted = np.asarray(predicted)
    config.validate(len(mavs))
    models = []
    for mav in mavs:
        mask = (labels == mav.class_id) & (predicted == mav.class_id)
        if mask.sum() < 2:
            raise InputError(
                f"class {mav.class_id}: fewer than 2 correctly classified samples"
            )
        diffs = train_avs[mask] - mav.vector
        d2 = np.sum(diffs * diffs, axis=1)
        dists = d2 if config.distance == "squared-euclidean" else np.sqrt(d2)
        tail = min(config.tail_size, max(2, int(mask.sum()) // 2))
        models.append(fit_weibull_tail(dists, tail, class_id=mav.class_id))
    return models


def openmax_recalibrate(
    av: np.ndarray,
    logits: np.ndarray,
    mavs: list[MeanActivationVector],
    weibulls: list[WeibullModel],
    config: OpenMaxConfig,
) -> np.ndarray:
    """Revised probability vector over K known classes plus unknown (last).

    For the alpha top-ranked classes the activation is scaled by
    1 - ((alpha - rank + 1) / alpha) * CDF(distance to that class's mean);
    the removed mass accumulates into the unknown pseudo-activation.
    """
    av = np.asarray(av, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.shape[0]
    if len(mavs) != k:
        raise ConfigError(f"expected {k} class means, got {len(mavs)}")
    config.validate(k)
    by_class = {m.class_id: m for m in weibulls}
    ranked = np.argsort(-logits, kind="stable")
    revised = logits.copy()
    unknown = 0.0
    for rank, cls in enumerate(ranked[: config.alpha], start=1):
        cls = int(cls)
        model = by_class.get(cls)
        if model is None:
            raise ConfigError(f"no Weibull model for top-ranked class {cls}")
        dist = _distance(av, mavs[cls].vector, config.distance)
        w = 1.0 - ((config.alpha - rank + 1) / config.alpha) * weibull_cdf(model, dist)
        revised[cls] = logits[cls] * w
        unknown += logits[cls] * (1.0 - w)
    activations = np.append(revised, unknown)
    shifted = activations - activations.max()
    e = np.exp(shifted)
    return e / e.sum()
