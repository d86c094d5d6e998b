"""Feature-shaping loss for open-set training, plus the staged schedule.

The loss acts on a 3-D PCA projection of the batch: it pulls each projected
class mean toward a shell whose radius is a multiple of the first principal
coordinate's spread (boundary term), pushes the closest pair of class means
apart (separation term, subtracted), and pulls every projected sample toward
its own class mean (compactness term).  Total = boundary - separation +
compactness.

Two formula variants exist for the boundary and separation terms; the
defaults (``shell-squared``, ``min-pairwise``) are the bounded/nearest-
neighbor readings, with the literal alternatives kept behind flags.

Gradients are taken with the PCA basis and center held constant
(stop-gradient); they flow through the projection, through each class mean
with weight 1/N_i, through each sample's own projection, and through the
radius via its extreme samples.  The finite-difference oracle in the test
suite freezes the basis the same way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, StratificationError
from .representation import PcaBasis, compute_mavs, fit_pca_basis, mav_matrix, project

BD_FORMS = ("shell-squared", "literal")
IS_FORMS = ("min-pairwise", "literal-max")
COMPANIONS = ("none", "cross-entropy", "openmax-backbone")


@dataclass
class LossConfig:
    gamma: float = 1.5
    bd_form: str = "shell-squared"
    is_form: str = "min-pairwise"
    switch_iteration: int = 1500
    companion_loss: str = "none"

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ConfigError("gamma must be > 1")
        if self.bd_form not in BD_FORMS:
            raise ConfigError(f"bd_form must be one of {BD_FORMS}")
        if self.is_form not in IS_FORMS:
            raise ConfigError(f"is_form must be one of {IS_FORMS}")
        if self.switch_iteration < 0:
            raise ConfigError("switch_iteration must be >= 0")
        if self.companion_loss not in COMPANIONS:
            raise ConfigError(f"companion_loss must be one of {COMPANIONS}")


@dataclass
class LossReport:
    bd: float
    is_: float
    ic: float
    l_s: float
    radius: float
    grad_avs: np.ndarray


def boundary_radius(projected_samples: np.ndarray, gamma: float) -> float:
    """gamma times the spread of the first projected coordinate."""
    pts = np.atleast_2d(np.asarray(projected_samples, dtype=np.float64))
    if pts.shape[0] == 0:
        raise InputError("boundary radius needs at least one projected sample")
    pc1 = pts[:, 0]
    return float(gamma * (pc1.max() - pc1.min()))


def boundary_distance(class_points: np.ndarray, radius: float, form: str = "shell-squared") -> float:
    """Boundary term over the projected class means.

    ``shell-squared``: sum of (radius - |M_i|)^2, a bounded shell attraction.
    ``literal``: sum of (radius - |M_i|^2), unbounded below.
    """
    m = np.atleast_2d(np.asarray(class_points, dtype=np.float64))
    norms = np.linalg.norm(m, axis=1)
    if form == "shell-squared":
        return float(np.sum((radius - norms) ** 2))
    if form == "literal":
        return float(np.sum(radius - norms**2))
    raise ConfigError(f"unknown bd_form {form!r}")


def _pair_distances_sq(m: np.ndarray):
    diff = m[:, None, :] - m[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def inter_separation(class_points: np.ndarray, form: str = "min-pairwise") -> float:
    """Pairwise squared distance between class means: nearest pair by
    default, farthest pair in the literal-max variant."""
    value, _ = _inter_separation_with_pair(class_points, form)
    return value


def _inter_separation_with_pair(class_points: np.ndarray, form: str):
    m = np.atleast_2d(np.asarray(class_points, dtype=np.float64))
    k = m.shape[0]
    if k < 2:
        raise InputError("inter-separation needs at least 2 class points")
    d2 = _pair_distances_sq(m)
    best = None
    pair = (0, 1)
    for i in range(k - 1):
        for j in range(i + 1, k):
            v = d2[i, j]
            if best is None or (form == "min-pairwise" and v < best) or (
                form == "literal-max" and v > best
            ):
                best = v
                pair = (i, j)
    if form not in IS_FORMS:
        raise ConfigError(f"unknown is_form {form!r}")
    return float(best), pair


def intra_compactness(class_points: np.ndarray, sample_points: np.ndarray, labels) -> float:
    """Sum of squared distances of projected samples to their own class mean."""
    m = np.atleast_2d(np.asarray(class_points, dtype=np.float64))
    p = np.atleast_2d(np.asarray(sample_points, dtype=np.float64))
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= m.shape[0]:
        raise InputError("sample labels a class point that does not exist")
    resid = m[labels] - p
    return float(np.sum(resid * resid))


def superlative_loss(
    avs: np.ndarray,
    labels,
    config: LossConfig,
    basis: PcaBasis | None = None,
    n_classes: int | None = None,
    radius: float | None = None,
) -> LossReport:
    """Evaluate the loss on a batch of activation vectors with gradients.

    The pipeline: per-class means -> PCA basis on the means (unless a frozen
    ``basis`` is supplied) -> project means and samples -> radius, boundary,
    separation, compactness.  ``grad_avs`` holds d(loss)/d(AV) for every
    sample.

    The basis, its center, and the boundary radius are all treated as
    constants of the evaluation (stop-gradient): gradients flow only through
    the projection, through each class mean with weight 1/N_i, and through
    each sample's own projection.  Differentiating the radius through its two
    extreme samples would make shrinking the projected spread the dominant
    descent direction, collapsing the representation instead of shaping it.
    Pass ``radius`` to pin the boundary externally (e.g. the full-training-set
    spread); by default it is recomputed from the batch projections.
    """
    avs = np.asarray(avs, dtype=np.float64)
    labels = np.asarray(labels)
    if avs.ndim != 2 or avs.shape[1] < 3:
        raise InputError("activation vectors must be (batch, d) with d >= 3")
    k = int(labels.max()) + 1 if n_classes is None else n_classes
    if labels.min() < 0 or labels.max() >= k:
        raise InputError(f"labels must lie in [0, {k})")
    counts = np.bincount(labels, minlength=k)
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0])
        raise StratificationError(f"class {missing} absent from the batch")

    mavs = compute_mavs(avs, labels, k)
    if basis is None:
        basis = fit_pca_basis(mav_matrix(mavs))
    m = project(basis, mav_matrix(mavs))  # (k, 3)
    p = project(basis, avs)  # (n, 3)

    if radius is None:
        radius = boundary_radius(p, config.gamma)

    bd = boundary_distance(m, radius, config.bd_form)
    is_, (pi, pj) = _inter_separation_with_pair(m, config.is_form)
    ic = intra_compactness(m, p, labels)
    l_s = bd - is_ + ic

    # gradients in projected space (radius held constant)
    grad_m = np.zeros_like(m)
    grad_p = np.zeros_like(p)
    norms = np.linalg.norm(m, axis=1)
    if config.bd_form == "shell-squared":
        safe = norms > 0.0
        grad_m[safe] += (-2.0 * (radius - norms[safe]) / norms[safe])[:, None] * m[safe]
        # |M_i| = 0 has no direction; the subgradient there is zero
    else:
        grad_m += -2.0 * m

    sep_dir = 2.0 * (m[pi] - m[pj])
    grad_m[pi] -= sep_dir
    grad_m[pj] += sep_dir

    resid = m[labels] - p
    np.add.at(grad_m, labels, 2.0 * resid)
    grad_p += -2.0 * resid

    grad_p += grad_m[labels] / counts[labels][:, None]

    grad_avs = grad_p @ basis.components
    return LossReport(bd=bd, is_=is_, ic=ic, l_s=l_s, radius=radius, grad_avs=grad_avs)


def loss_schedule(iteration: int, config: LossConfig) -> str:
    """Name of the loss active at ``iteration``: ``"ls"`` or the companion.

    With a companion configured, the feature-shaping loss runs for iterations
    strictly below the switch point and the companion takes over from the
    switch iteration onward (half-open interval).
    """
    if iteration < 0:
        raise InputError("iteration must be >= 0")
    if config.companion_loss == "none" or iteration < config.switch_iteration:
        return "ls"
    return config.companion_loss
