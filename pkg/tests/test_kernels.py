"""Kernel correctness and numba/numpy path agreement."""

import numpy as np
import pytest

from superosr import kernels

RNG = np.random.default_rng(1234)


def naive_im2col(x, kh, kw, stride):
    n, h, w, c = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    rows = []
    for img in range(n):
        for oi in range(oh):
            for oj in range(ow):
                patch = x[img, oi * stride : oi * stride + kh, oj * stride : oj * stride + kw, :]
                rows.append(patch.reshape(-1))
    return np.stack(rows)


@pytest.mark.parametrize("shape,k,stride", [((2, 5, 5, 3), 3, 1), ((1, 8, 6, 2), 3, 2), ((3, 4, 4, 1), 2, 1)])
def test_im2col_matches_naive_patch_extraction(shape, k, stride):
    x = RNG.standard_normal(shape)
    got = kernels.im2col(x, k, k, stride)
    np.testing.assert_array_equal(got, naive_im2col(x, k, k, stride))


def test_col2im_is_adjoint_of_im2col():
    # <im2col(x), c> == <x, col2im_add(c)> characterizes the scatter exactly
    x = RNG.standard_normal((2, 6, 5, 3))
    cols = kernels.im2col(x, 3, 3, 1)
    c = RNG.standard_normal(cols.shape)
    lhs = float((cols * c).sum())
    back = kernels.col2im_add(c, 2, 6, 5, 3, 3, 3, 1)
    rhs = float((x * back).sum())
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_maxpool_forward_values_and_backward_scatter():
    x = RNG.standard_normal((2, 6, 6, 3))
    out, idx = kernels.maxpool2_forward(x)
    assert out.shape == (2, 3, 3, 3)
    windows = x.reshape(2, 3, 2, 3, 2, 3).transpose(0, 1, 3, 2, 4, 5).reshape(2, 3, 3, 4, 3)
    np.testing.assert_array_equal(out, windows.max(axis=3))
    grad = RNG.standard_normal(out.shape)
    back = kernels.maxpool2_backward(grad, idx, 6, 6)
    # every pooled gradient lands exactly once, on a maximal entry
    assert back.shape == x.shape
    np.testing.assert_allclose(np.abs(back).sum(), np.abs(grad).sum(), rtol=1e-12)


def test_maxpool_tie_break_is_first_in_scan_order():
    x = np.zeros((1, 2, 2, 1))
    out, idx = kernels.maxpool2_forward(x)
    assert out[0, 0, 0, 0] == 0.0
    assert idx[0, 0, 0, 0] == 0  # all equal: top-left candidate wins


def test_maxpool_odd_dimensions_drop_trailing_row_col():
    x = RNG.standard_normal((1, 5, 7, 2))
    out, _ = kernels.maxpool2_forward(x)
    assert out.shape == (1, 2, 3, 2)


@pytest.mark.parametrize("d", [2, 3, 8, 32])
def test_jacobi_matches_reference_eigensolver(d):
    x = RNG.standard_normal((d, d))
    a = (x + x.T) / 2.0
    vals, vecs = kernels.jacobi_eigh(a)
    np.testing.assert_allclose(np.sort(vals), np.linalg.eigvalsh(a), atol=1e-10)
    np.testing.assert_allclose(vecs @ vecs.T, np.eye(d), atol=1e-10)
    np.testing.assert_allclose(a @ vecs, vecs * vals, atol=1e-9)


def test_jacobi_diagonal_input_is_fixed_point():
    a = np.diag([3.0, 1.0, 2.0])
    vals, vecs = kernels.jacobi_eigh(a)
    np.testing.assert_array_equal(np.sort(vals), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(np.abs(vecs), np.eye(3), atol=1e-12)


def test_numba_and_numpy_paths_agree():
    x = RNG.standard_normal((2, 7, 6, 3))
    cols_nb = kernels._im2col_nb(x, 3, 3, 1) if kernels._HAVE_NUMBA else None
    cols_np = kernels._im2col_np(x, 3, 3, 1)
    if cols_nb is not None:
        np.testing.assert_array_equal(cols_nb, cols_np)
        c = RNG.standard_normal(cols_np.shape)
        np.testing.assert_allclose(
            kernels._col2im_nb(c, 2, 7, 6, 3, 3, 3, 1),
            kernels._col2im_np(c, 2, 7, 6, 3, 3, 3, 1),
            rtol=1e-12,
            atol=1e-14,
        )
        out_nb, idx_nb = kernels._maxpool2_forward_nb(x)
        out_np, idx_np = kernels._maxpool2_forward_np(x)
        np.testing.assert_array_equal(out_nb, out_np)
        np.testing.assert_array_equal(idx_nb, idx_np)
        g = RNG.standard_normal(out_np.shape)
        np.testing.assert_array_equal(
            kernels._maxpool2_backward_nb(g, idx_nb, 7, 6),
            kernels._maxpool2_backward_np(g, idx_np, 7, 6),
        )
        m = RNG.standard_normal((12, 12))
        a = (m + m.T) / 2.0
        vals_nb, vecs_nb = kernels._jacobi_eigh_nb(a)
        vals_np, vecs_np = kernels._jacobi_eigh_np(a)
        np.testing.assert_allclose(vals_nb, vals_np, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(vecs_nb, vecs_np, rtol=1e-10, atol=1e-10)
