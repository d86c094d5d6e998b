"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Three kernel families dominate training time: convolution patch
gather/scatter (im2col / col2im), 2x2 max pooling, and the cyclic Jacobi
eigensolver that the PCA fit calls every loss evaluation.  Each has two
builds:

* ``_nb`` -- numba ``@njit`` loops (default when numba imports cleanly),
* ``_np`` -- vectorized numpy with identical semantics.

Set ``SUPEROSR_NO_NUMBA=1`` to force the numpy path; ``BACKEND`` records
which one is live.  ``benchmarks/bench_kernels.py`` times both.

Conventions: images are NHWC float64; im2col flattens each patch in
(kh, kw, channel) row-major order; max-pool windows are fixed 2x2 stride 2
with ties won by the first candidate in row-major scan order.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def _numba_disabled() -> bool:
    return os.environ.get("SUPEROSR_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")


USE_NUMBA = _HAVE_NUMBA and not _numba_disabled()
BACKEND = "numba" if USE_NUMBA else "numpy"

# Jacobi convergence: off-diagonal Frobenius norm below this ends the sweep
# loop; the sweep cap is a safety guard that normal inputs never reach.
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


# ---------------------------------------------------------------------------
# im2col / col2im


def _im2col_np(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    n, h, w, c = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = np.empty((n, oh, ow, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = x[
                :, i : i + oh * stride : stride, j : j + ow * stride : stride, :
            ]
    return cols.reshape(n * oh * ow, kh * kw * c)


@njit(cache=True)
def _im2col_nb(x, kh, kw, stride):  # pragma: no cover - timed via tests on output
    n, h, w, c = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = np.empty((n * oh * ow, kh * kw * c), dtype=x.dtype)
    for img in range(n):
        for oi in range(oh):
            for oj in range(ow):
                row = (img * oh + oi) * ow + oj
                col = 0
                for i in range(kh):
                    for j in range(kw):
                        for ch in range(c):
                            cols[row, col] = x[img, oi * stride + i, oj * stride + j, ch]
                            col += 1
    return cols


def _col2im_np(
    cols: np.ndarray, n: int, h: int, w: int, c: int, kh: int, kw: int, stride: int
) -> np.ndarray:
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols6 = cols.reshape(n, oh, ow, kh, kw, c)
    out = np.zeros((n, h, w, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i : i + oh * stride : stride, j : j + ow * stride : stride, :] += cols6[
                :, :, :, i, j, :
            ]
    return out


@njit(cache=True)
def _col2im_nb(cols, n, h, w, c, kh, kw, stride):  # pragma: no cover
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    out = np.zeros((n, h, w, c), dtype=cols.dtype)
    for img in range(n):
        for oi in range(oh):
            for oj in range(ow):
                row = (img * oh + oi) * ow + oj
                col = 0
                for i in range(kh):
                    for j in range(kw):
                        for ch in range(c):
                            out[img, oi * stride + i, oj * stride + j, ch] += cols[row, col]
                            col += 1
    return out


# ---------------------------------------------------------------------------
# 2x2 max pooling (stride 2, trailing odd row/column dropped)


def _maxpool2_forward_np(x: np.ndarray):
    n, h, w, c = x.shape
    oh, ow = h // 2, w // 2
    windows = (
        x[:, : oh * 2, : ow * 2, :]
        .reshape(n, oh, 2, ow, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, oh, ow, 4, c)
    )
    idx = np.argmax(windows, axis=3).astype(np.int8)
    out = np.take_along_axis(windows, idx[:, :, :, None, :].astype(np.int64), axis=3)[
        :, :, :, 0, :
    ]
    return out, idx


@njit(cache=True)
def _maxpool2_forward_nb(x):  # pragma: no cover
    n, h, w, c = x.shape
    oh, ow = h // 2, w // 2
    out = np.empty((n, oh, ow, c), dtype=x.dtype)
    idx = np.empty((n, oh, ow, c), dtype=np.int8)
    for img in range(n):
        for oi in range(oh):
            for oj in range(ow):
                for ch in range(c):
                    best = x[img, 2 * oi, 2 * oj, ch]
                    best_k = 0
                    k = 0
                    for di in range(2):
                        for dj in range(2):
                            v = x[img, 2 * oi + di, 2 * oj + dj, ch]
                            if v > best:
                                best = v
                                best_k = k
                            k += 1
                    out[img, oi, oj, ch] = best
                    idx[img, oi, oj, ch] = best_k
    return out, idx


def _maxpool2_backward_np(grad: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    n, oh, ow, c = grad.shape
    out = np.zeros((n, h, w, c), dtype=grad.dtype)
    for corner in range(4):
        di, dj = divmod(corner, 2)
        view = out[:, di : oh * 2 : 2, dj : ow * 2 : 2, :]
        np.copyto(view, grad, where=(idx == corner))
    return out


@njit(cache=True)
def _maxpool2_backward_nb(grad, idx, h, w):  # pragma: no cover
    n, oh, ow, c = grad.shape
    out = np.zeros((n, h, w, c), dtype=grad.dtype)
    for img in range(n):
        for oi in range(oh):
            for oj in range(ow):
                for ch in range(c):
                    k = idx[img, oi, oj, ch]
                    di = k // 2
                    dj = k % 2
                    out[img, 2 * oi + di, 2 * oj + dj, ch] = grad[img, oi, oj, ch]
    return out


# ---------------------------------------------------------------------------
# Cyclic Jacobi eigensolver for symmetric matrices


def _off_diag_norm(a: np.ndarray) -> float:
    d = a.shape[0]
    acc = 0.0
    for p in range(d - 1):
        for q in range(p + 1, d):
            acc += a[p, q] * a[p, q]
    return math.sqrt(2.0 * acc)


def _jacobi_eigh_np(a_in: np.ndarray):
    a = a_in.astype(np.float64).copy()
    d = a.shape[0]
    v = np.eye(d)
    for _ in range(JACOBI_MAX_SWEEPS):
        if _off_diag_norm(a) <= JACOBI_TOL:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                elif theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                cos = 1.0 / math.sqrt(t * t + 1.0)
                sin = t * cos
                app = a[p, p]
                aqq = a[q, q]
                colp = a[:, p].copy()
                colq = a[:, q].copy()
                newp = cos * colp - sin * colq
                newq = sin * colp + cos * colq
                a[:, p] = newp
                a[p, :] = newp
                a[:, q] = newq
                a[q, :] = newq
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = cos * vp - sin * vq
                v[:, q] = sin * vp + cos * vq
    return np.diag(a).copy(), v


@njit(cache=True)
def _jacobi_eigh_nb(a_in):  # pragma: no cover
    a = a_in.copy()
    d = a.shape[0]
    v = np.eye(d)
    for _ in range(JACOBI_MAX_SWEEPS):
        acc = 0.0
        for p in range(d - 1):
            for q in range(p + 1, d):
                acc += a[p, q] * a[p, q]
        if math.sqrt(2.0 * acc) <= JACOBI_TOL:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                elif theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                cos = 1.0 / math.sqrt(t * t + 1.0)
                sin = t * cos
                app = a[p, p]
                aqq = a[q, q]
                for k in range(d):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = cos * akp - sin * akq
                    a[k, q] = sin * akp + cos * akq
                for k in range(d):
                    a[p, k] = a[k, p]
                    a[q, k] = a[k, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(d):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = cos * vkp - sin * vkq
                    v[k, q] = sin * vkp + cos * vkq
    return np.diag(a).copy(), v


# ---------------------------------------------------------------------------
# backend binding

if USE_NUMBA:
    im2col = _im2col_nb
    col2im_add = _col2im_nb
    maxpool2_forward = _maxpool2_forward_nb
    maxpool2_backward = _maxpool2_backward_nb
    jacobi_eigh = _jacobi_eigh_nb
else:
    im2col = _im2col_np
    col2im_add = _col2im_np
    maxpool2_forward = _maxpool2_forward_np
    maxpool2_backward = _maxpool2_backward_np
    jacobi_eigh = _jacobi_eigh_np
