"""Per-class mean activation vectors and the top-3 PCA feature basis.

The basis is fitted with a cyclic Jacobi eigensolver (see
:mod:`superosr.kernels`) on the population covariance of the fitted points.
Components follow a deterministic sign convention (largest-magnitude entry
positive) so repeated fits are bit-stable; when the covariance has rank < 3
the missing directions come from the eigensolver's orthonormal completion
with eigenvalue 0 and the basis is flagged rank-deficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InputError


@dataclass(frozen=True)
class MeanActivationVector:
    class_id: int
    vector: np.ndarray
    count: int


@dataclass(frozen=True)
class PcaBasis:
    center: np.ndarray  # (d,)
    components: np.ndarray  # (3, d), rows orthonormal, variance-descending
    eigenvalues: np.ndarray  # (3,), non-negative, descending
    rank_deficient: bool


def compute_mavs(avs: np.ndarray, labels, n_classes: int) -> list[MeanActivationVector]:
    """Per-class means of the activation vectors, one entry per class id."""
    avs = np.asarray(avs, dtype=np.float64)
    labels = np.asarray(labels)
    out = []
    for cls in range(n_classes):
        mask = labels == cls
        count = int(mask.sum())
        if count == 0:
            raise InputError(f"class {cls} has no samples; its mean is undefined")
        out.append(MeanActivationVector(cls, avs[mask].mean(axis=0), count))
    return out


def mav_matrix(mavs: list[MeanActivationVector]) -> np.ndarray:
    return np.stack([m.vector for m in mavs])


_RANK_TOL = 1e-12


def fit_pca_basis(points: np.ndarray) -> PcaBasis:
    """Fit center + top-3 principal directions of ``points`` (n, d).

    Covariance uses the population divisor (1/n).  Eigenvalue ties keep the
    solver's first-occurrence order (stable sort).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise InputError("PCA fit needs at least 2 points of equal width")
    n, d = points.shape
    if d < 3:
        raise InputError(f"point width {d} < 3; a 3-component basis does not exist")
    center = points.mean(axis=0)
    centered = points - center
    cov = (centered.T @ centered) / n
    eigvals, eigvecs = kernels.jacobi_eigh(cov)
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order[:3]].copy()
    comps = eigvecs[:, order[:3]].T.copy()
    # roundoff can leave tiny negative eigenvalues on null directions
    floor = _RANK_TOL * max(1.0, float(eigvals[0]))
    deficient = bool(eigvals[2] <= floor)
    eigvals[eigvals <= floor] = 0.0
    for k in range(3):
        j = int(np.argmax(np.abs(comps[k])))
        if comps[k, j] < 0:
            comps[k] = -comps[k]
    return PcaBasis(center, comps, eigvals, deficient)


def project(basis: PcaBasis, vectors: np.ndarray) -> np.ndarray:
    """Coordinates of ``vectors`` (n, d) or (d,) in the basis, shape (n, 3) or (3,)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    single = vectors.ndim == 1
    mat = vectors[None, :] if single else vectors
    if mat.shape[1] != basis.center.shape[0]:
        raise InputError(
            f"vector width {mat.shape[1]} does not match basis width {basis.center.shape[0]}"
        )
    coords = (mat - basis.center) @ basis.components.T
    return coords[0] if single else coords
