"""Open-set evaluation: K+1 confusion matrices, grouped macro metrics,
openness, multi-run aggregation, and Welch's t-test.

Metric groups follow the report schema: ``overall`` and ``incl_unknown`` are
the unweighted macro over all K+1 classes (two names, two candidate readings
of the same table column), ``known`` averages the K known classes, and
``unknown_class`` is the unknown class alone.  Any metric with a zero
denominator is 0, never skipped, so macro averages stay comparable across
methods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

GROUPS = ("overall", "known", "unknown_class", "incl_unknown")
METRIC_NAMES = ("precision", "recall", "f1", "accuracy")


@dataclass(frozen=True)
class GroupMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float

    def get(self, name: str) -> float:
        return getattr(self, name)


@dataclass
class RunMetrics:
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    groups: dict[str, GroupMetrics]
    seed: int = 0
    method: str = ""
    set_name: str = ""


@dataclass(frozen=True)
class OpennessSpec:
    c_train: int
    c_test: int
    c_target: int

    def __post_init__(self):
        if min(self.c_train, self.c_test, self.c_target) <= 0:
            raise InputError("openness class counts must be positive")
        if self.c_test + self.c_target < 2 * self.c_train:
            raise InputError("openness would be negative: c_test + c_target < 2*c_train")


def confusion(preds, truths, n_known: int) -> np.ndarray:
    """(K+1) x (K+1) count grid, rows = truth, columns = prediction."""
    preds = np.asarray(preds)
    truths = np.asarray(truths)
    if preds.shape != truths.shape:
        raise InputError("prediction/truth length mismatch")
    k1 = n_known + 1
    if preds.min() < 0 or preds.max() > n_known or truths.min() < 0 or truths.max() > n_known:
        raise InputError(f"labels must lie in [0, {n_known}]")
    cm = np.zeros((k1, k1), dtype=np.int64)
    np.add.at(cm, (truths, preds), 1)
    return cm


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def metrics(cm: np.ndarray) -> RunMetrics:
    """Per-class and grouped precision/recall/F1/accuracy from a confusion grid."""
    cm = np.asarray(cm)
    k1 = cm.shape[0]
    k = k1 - 1
    diag = np.diag(cm).astype(np.float64)
    col = cm.sum(axis=0).astype(np.float64)
    row = cm.sum(axis=1).astype(np.float64)
    total = float(cm.sum())
    if total == 0:
        raise InputError("empty confusion matrix")

    precision = np.array([_safe_div(diag[i], col[i]) for i in range(k1)])
    recall = np.array([_safe_div(diag[i], row[i]) for i in range(k1)])
    f1 = np.array(
        [_safe_div(2 * precision[i] * recall[i], precision[i] + recall[i]) for i in range(k1)]
    )

    overall = GroupMetrics(
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
        accuracy=_safe_div(diag.sum(), total),
    )
    known = GroupMetrics(
        precision=float(precision[:k].mean()) if k else 0.0,
        recall=float(recall[:k].mean()) if k else 0.0,
        f1=float(f1[:k].mean()) if k else 0.0,
        accuracy=_safe_div(diag[:k].sum(), row[:k].sum()),
    )
    unknown_class = GroupMetrics(
        precision=float(precision[k]),
        recall=float(recall[k]),
        f1=float(f1[k]),
        accuracy=_safe_div(diag[k], row[k]),
    )
    groups = {
        "overall": overall,
        "known": known,
        "unknown_class": unknown_class,
        "incl_unknown": overall,
    }
    return RunMetrics(precision, recall, f1, groups)


def openness(spec: OpennessSpec) -> float:
    """1 - sqrt(2*C_train / (C_test + C_target))."""
    return 1.0 - math.sqrt(2.0 * spec.c_train / (spec.c_test + spec.c_target))


@dataclass
class AggregateSummary:
    stats: dict[str, dict[str, tuple[float, float, float]]]  # group -> metric -> (mean, median, std)
    cumulative_f1: np.ndarray  # running mean of overall F1 by run count
    n_runs: int


def aggregate(runs: list[RunMetrics]) -> AggregateSummary:
    """Mean/median/sample-std per (group, metric) plus the cumulative-F1 series."""
    if not runs:
        raise InputError("aggregate needs at least one run")
    stats: dict[str, dict[str, tuple[float, float, float]]] = {}
    for group in GROUPS:
        stats[group] = {}
        for name in METRIC_NAMES:
            values = np.array([r.groups[group].get(name) for r in runs])
            std = float(values.std(ddof=1)) if values.size > 1 else 0.0
            stats[group][name] = (float(values.mean()), float(np.median(values)), std)
    f1s = np.array([r.groups["overall"].f1 for r in runs])
    cumulative = np.cumsum(f1s) / np.arange(1, f1s.size + 1)
    return AggregateSummary(stats=stats, cumulative_f1=cumulative, n_runs=len(runs))


# --- Welch's t-test -------------------------------------------------------
# Student-t CDF through the regularized incomplete beta function, evaluated
# with the Lentz continued fraction.

_CF_MAX_ITER = 300
_CF_EPS = 1e-15
_CF_TINY = 1e-300


def _beta_cont_frac(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cont_frac(a, b, x) / a
    return 1.0 - front * _beta_cont_frac(b, a, 1.0 - x) / b


def welch_t_test(a, b) -> float:
    """Two-sided Welch p-value with Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise InputError("each sample needs at least 2 values")
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    na, nb = a.size, b.size
    se2 = va / na + vb / nb
    if se2 == 0.0:
        # both samples constant: identical means are indistinguishable
        return 1.0 if float(a.mean()) == float(b.mean()) else 0.0
    t = (float(a.mean()) - float(b.mean())) / math.sqrt(se2)
    df = se2**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
