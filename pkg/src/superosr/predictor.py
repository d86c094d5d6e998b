"""Per-class distance thresholds and the open-set prediction rule.

Thresholds come from the nearest-rank percentile (no interpolation) of each
class's own-mean distances on the training set, so at least that fraction of
training samples lies within the class threshold by construction.  At test
time a sample whose distance to the closest class mean exceeds that class's
threshold is labeled unknown (integer K, 0-based); otherwise the label is the
nearest mean, or the best softmax class among those whose threshold test
passes when a trained probability head is available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .representation import MeanActivationVector

DISTANCE_KINDS = ("euclidean", "squared-euclidean")


@dataclass(frozen=True)
class ThresholdTable:
    thresholds: np.ndarray  # (K,), one per known class
    percentile: float
    distance_kind: str


@dataclass(frozen=True)
class Prediction:
    label: int  # in [0, K]; K means unknown
    distance_to_nearest: float
    probabilities: np.ndarray | None  # over the K known classes


def _distances_to_mavs(avs: np.ndarray, mavs: list[MeanActivationVector], kind: str) -> np.ndarray:
    if kind not in DISTANCE_KINDS:
        raise InputError(f"distance_kind must be one of {DISTANCE_KINDS}")
    centers = np.stack([m.vector for m in mavs])
    diffs = avs[:, None, :] - centers[None, :, :]
    d2 = np.einsum("nkd,nkd->nk", diffs, diffs)
    return d2 if kind == "squared-euclidean" else np.sqrt(d2)


def nearest_rank(sorted_values: np.ndarray, percentile: float) -> float:
    """Value at 1-based index ceil(percentile/100 * n) of an ascending array."""
    n = sorted_values.shape[0]
    idx = math.ceil(percentile / 100.0 * n)
    idx = min(max(idx, 1), n)
    return float(sorted_values[idx - 1])


def estimate_thresholds(
    train_avs: np.ndarray,
    labels,
    mavs: list[MeanActivationVector],
    percentile: float = 99.0,
    distance_kind: str = "euclidean",
) -> ThresholdTable:
    """Per-class nearest-rank percentile of own-mean training distances."""
    if not 0.0 < percentile <= 100.0:
        raise InputError("percentile must lie in (0, 100]")
    train_avs = np.asarray(train_avs, dtype=np.float64)
    labels = np.asarray(labels)
    thresholds = np.empty(len(mavs))
    for mav in mavs:
        mask = labels == mav.class_id
        if not mask.any():
            raise InputError(f"class {mav.class_id} has no training samples")
        diffs = train_avs[mask] - mav.vector
        d2 = np.sum(diffs * diffs, axis=1)
        dists = np.sort(d2 if distance_kind == "squared-euclidean" else np.sqrt(d2))
        thresholds[mav.class_id] = nearest_rank(dists, percentile)
    return ThresholdTable(thresholds=thresholds, percentile=percentile, distance_kind=distance_kind)


def predict_batch(
    avs: np.ndarray,
    mavs: list[MeanActivationVector],
    table: ThresholdTable,
    softmax_probs: np.ndarray | None = None,
) -> np.ndarray:
    """Vectorized open-set labels for a batch of activation vectors."""
    avs = np.asarray(avs, dtype=np.float64)
    k = len(mavs)
    dists = _distances_to_mavs(avs, mavs, table.distance_kind)
    nearest = np.argmin(dists, axis=1)  # ties: lowest class index
    rows = np.arange(avs.shape[0])
    rejected = dists[rows, nearest] > table.thresholds[nearest]
    labels = nearest.copy()
    if softmax_probs is not None:
        within = dists <= table.thresholds[None, :]
        masked = np.where(within, softmax_probs, -np.inf)
        has_any = within.any(axis=1)
        best = np.argmax(masked, axis=1)
        labels = np.where(has_any, best, nearest)
    labels[rejected] = k
    return labels


def predict(
    av: np.ndarray,
    mavs: list[MeanActivationVector],
    table: ThresholdTable,
    softmax_probs: np.ndarray | None = None,
) -> Prediction:
    """Single-sample prediction with distance and class probabilities."""
    av = np.asarray(av, dtype=np.float64)
    dists = _distances_to_mavs(av[None, :], mavs, table.distance_kind)[0]
    nearest = int(np.argmin(dists))
    label = int(
        predict_batch(av[None, :], mavs, table,
                      None if softmax_probs is None else np.asarray(softmax_probs)[None, :])[0]
    )
    if softmax_probs is not None:
        probs = np.asarray(softmax_probs, dtype=np.float64)
    else:
        shifted = -dists - (-dists).max()
        e = np.exp(shifted)
        probs = e / e.sum()
    return Prediction(label=label, distance_to_nearest=float(dists[nearest]), probabilities=probs)
