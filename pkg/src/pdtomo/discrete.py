"""Sparse discrete operators on Cartesian grids.

Builders here return scipy.sparse matrices acting on flat row-major node
vectors. Conventions:

* ``diff_matrix`` matches ``np.gradient(..., edge_order=2)``: central
  differences at interior nodes, one-sided 3-point stencils on the faces.
* ``second_diff_matrix`` is the compact 3-point second derivative inside
  and the 4-point one-sided stencil on the faces (both O(h^2)).
* ``conservative_operator`` discretizes div(gamma grad u) in flux form with
  harmonic face averages of gamma; rows exist at interior nodes only (other
  rows are zero).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .fields import Grid

__all__ = [
    "diff_matrix",
    "second_diff_matrix",
    "conservative_operator",
    "conservative_gamma_jacobian",
    "conservative_gamma_jacobian_apply",
    "conservative_apply",
    "flux_form_operator",
    "flux_form_apply",
    "interior_indices",
]


def _diff_1d(n, h):
    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v / h)

    put(0, 0, -1.5)
    put(0, 1, 2.0)
    put(0, 2, -0.5)
    for i in range(1, n - 1):
        put(i, i - 1, -0.5)
        put(i, i + 1, 0.5)
    put(n - 1, n - 3, 0.5)
    put(n - 1, n - 2, -2.0)
    put(n - 1, n - 1, 1.5)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _second_diff_1d(n, h):
    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v / h**2)

    for c, v in ((0, 2.0), (1, -5.0), (2, 4.0), (3, -1.0)):
        put(0, c, v)
    for i in range(1, n - 1):
        put(i, i - 1, 1.0)
        put(i, i, -2.0)
        put(i, i + 1, 1.0)
    for c, v in ((n - 1, 2.0), (n - 2, -5.0), (n - 3, 4.0), (n - 4, -1.0)):
        put(n - 1, c, v)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _lift(grid: Grid, axis, mat1d):
    """Kronecker-embed a 1D operator along ``axis`` (row-major ordering)."""
    out = None
    for k in range(grid.dim):
        f = mat1d if k == axis else sp.identity(grid.shape[k], format="csr")
        out = f if out is None else sp.kron(out, f, format="csr")
    return out


def diff_matrix(grid: Grid, axis):
    return _lift(grid, axis, _diff_1d(grid.shape[axis], grid.spacing[axis]))


def second_diff_matrix(grid: Grid, axis):
    return _lift(grid, axis, _second_diff_1d(grid.shape[axis], grid.spacing[axis]))


def interior_indices(grid: Grid, depth=1):
    return np.flatnonzero(grid.interior_mask(depth))


def _axis_neighbors(grid: Grid, axis):
    """Flat index offset of a +1 step along ``axis``."""
    stride = 1
    for k in range(axis + 1, grid.dim):
        stride *= grid.shape[k]
    return stride


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def conservative_operator(grid: Grid, gamma):
    """div(gamma grad .) with harmonic face averages, 5/7-point stencil.

    Rows are populated at interior nodes only; boundary rows are zero.
    The interior sub-block is a (negative definite) M-matrix for gamma > 0,
    so the discrete maximum principle holds.
    """
    gamma = np.asarray(gamma, dtype=float).ravel()
    n = grid.node_count
    inner = interior_indices(grid)
    rows, cols, vals = [], [], []
    for axis in range(grid.dim):
        step = _axis_neighbors(grid, axis)
        h2 = grid.spacing[axis] ** 2
        for sign in (+1, -1):
            nb = inner + sign * step
            a = _harmonic(gamma[inner], gamma[nb]) / h2
            rows.extend(inner)
            cols.extend(nb)
            vals.extend(a)
            rows.extend(inner)
            cols.extend(inner)
            vals.extend(-a)
    return sp.coo_matrix((np.array(vals), (rows, cols)), shape=(n, n)).tocsr()


def conservative_apply(grid: Grid, gamma, u):
    """Matrix-free twin of ``conservative_operator`` built from array slicing.

    Kept deliberately independent of the sparse assembly so the two can be
    checked against each other.
    """
    gam = np.asarray(gamma, dtype=float).reshape(grid.shape)
    uu = np.asarray(u, dtype=float).reshape(grid.shape)
    out = np.zeros(grid.shape)
    core = tuple(slice(1, -1) for _ in range(grid.dim))
    for axis in range(grid.dim):
        h2 = grid.spacing[axis] ** 2

        def shift(arr, s):
            sl = [slice(1, -1)] * grid.dim
            sl[axis] = slice(1 + s, arr.shape[axis] - 1 + s) if s >= 0 else slice(0, -2)
            return arr[tuple(sl)]

        g0 = shift(gam, 0)
        up = shift(uu, 1) - shift(uu, 0)
        um = shift(uu, 0) - shift(uu, -1)
        ap = _harmonic(g0, shift(gam, 1))
        am = _harmonic(g0, shift(gam, -1))
        out[core] += (ap * up - am * um) / h2
    return out.ravel()


def conservative_gamma_jacobian_apply(grid: Grid, gamma, u, dgamma):
    """Matrix-free twin of ``conservative_gamma_jacobian`` (slicing based)."""
    gam = np.asarray(gamma, dtype=float).reshape(grid.shape)
    uu = np.asarray(u, dtype=float).reshape(grid.shape)
    dg = np.asarray(dgamma, dtype=float).reshape(grid.shape)
    out = np.zeros(grid.shape)
    core = tuple(slice(1, -1) for _ in range(grid.dim))
    for axis in range(grid.dim):
        h2 = grid.spacing[axis] ** 2

        def shift(arr, s):
            sl = [slice(1, -1)] * grid.dim
            sl[axis] = slice(1 + s, arr.shape[axis] - 1 + s) if s >= 0 else slice(0, -2)
            return arr[tuple(sl)]

        g0, d0 = shift(gam, 0), shift(dg, 0)
        for s in (+1, -1):
            gn, dn = shift(gam, s), shift(dg, s)
            du = (shift(uu, s) - shift(uu, 0)) / h2
            dharm = 2.0 * (gn**2 * d0 + g0**2 * dn) / (g0 + gn) ** 2
            out[core] += dharm * du
    return out.ravel()


def conservative_gamma_jacobian(grid: Grid, gamma, u):
    """d/d(gamma) of ``conservative_operator(gamma) @ u`` at fixed u.

    Exact chain rule through the harmonic face averages; this is the
    discrete realization of div(dgamma grad u) used by the linearizations.
    Rows at interior nodes only.
    """
    gamma = np.asarray(gamma, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    n = grid.node_count
    inner = interior_indices(grid)
    rows, cols, vals = [], [], []
    for axis in range(grid.dim):
        step = _axis_neighbors(grid, axis)
        h2 = grid.spacing[axis] ** 2
        for sign in (+1, -1):
            nb = inner + sign * step
            gi, gn = gamma[inner], gamma[nb]
            du = (u[nb] - u[inner]) / h2
            # harmonic(a, b): d/da = 2 b^2/(a+b)^2, d/db = 2 a^2/(a+b)^2
            denom = (gi + gn) ** 2
            rows.extend(inner)
            cols.extend(inner)
            vals.extend(du * 2.0 * gn**2 / denom)
            rows.extend(inner)
            cols.extend(nb)
            vals.extend(du * 2.0 * gi**2 / denom)
    return sp.coo_matrix((np.array(vals), (rows, cols)), shape=(n, n)).tocsr()


def flux_form_apply(grid: Grid, coeff_matrix_field, u):
    """Matrix-free twin of ``flux_form_operator`` using np.gradient slices."""
    B = np.asarray(coeff_matrix_field, dtype=float)
    uu = np.asarray(u, dtype=float).reshape(grid.shape)
    out = np.zeros(grid.shape)
    core = tuple(slice(1, -1) for _ in range(grid.dim))
    for k in range(grid.dim):
        h2 = grid.spacing[k] ** 2

        def shift(arr, s):
            sl = [slice(1, -1)] * grid.dim
            sl[k] = slice(1 + s, arr.shape[k] - 1 + s) if s >= 0 else slice(0, -2)
            return arr[tuple(sl)]

        b = B[:, k, k].reshape(grid.shape)
        for s in (+1, -1):
            a = 0.5 * (shift(b, 0) + shift(b, s)) / h2
            out[core] += a * (shift(uu, s) - shift(uu, 0))
        for l in range(grid.dim):
            if l == k:
                continue
            inner = B[:, k, l].reshape(grid.shape) * np.gradient(
                uu, grid.spacing[l], axis=l, edge_order=2
            )
            mixed = np.gradient(inner, grid.spacing[k], axis=k, edge_order=2)
            out[core] += mixed[core]
    return out.ravel()


def flux_form_operator(grid: Grid, coeff_matrix_field):
    """div(B(x) grad .) for a symmetric coefficient field B.

    ``coeff_matrix_field`` has shape (node_count, dim, dim). Diagonal terms
    use the compact conservative stencil with arithmetic face means (the
    coefficients may change sign); mixed terms compose first-derivative
    matrices around a diagonal coefficient. Rows at interior nodes only.
    """
    B = np.asarray(coeff_matrix_field, dtype=float)
    n = grid.node_count
    inner = interior_indices(grid)
    mask_rows = np.zeros(n)
    mask_rows[inner] = 1.0
    restrict = sp.diags(mask_rows)

    total = sp.csr_matrix((n, n))
    for k in range(grid.dim):
        step = _axis_neighbors(grid, k)
        h2 = grid.spacing[k] ** 2
        rows, cols, vals = [], [], []
        b = B[:, k, k]
        for sign in (+1, -1):
            nb = inner + sign * step
            a = 0.5 * (b[inner] + b[nb]) / h2
            rows.extend(inner)
            cols.extend(nb)
            vals.extend(a)
            rows.extend(inner)
            cols.extend(inner)
            vals.extend(-a)
        total = total + sp.coo_matrix((np.array(vals), (rows, cols)), shape=(n, n)).tocsr()
        for l in range(grid.dim):
            if l == k:
                continue
            Dk = diff_matrix(grid, k)
            Dl = diff_matrix(grid, l)
            total = total + restrict @ (Dk @ sp.diags(B[:, k, l]) @ Dl)
    return total.tocsr()
