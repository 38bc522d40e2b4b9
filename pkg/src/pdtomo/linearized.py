"""Discrete linearized systems of the power-density problem and their
Cauchy-constrained normal forms.

Four system variants over one grid, all exposed as sparse operators with
tagged equation blocks:

* ``first_order``  -- the raw linearization in (dgamma, {du_j}): per
  functional a PDE row div(dgamma grad u_j) + div(gamma grad du_j) = 0 and an
  algebraic row |F_j|^2 dgamma + 2 gamma F_j . grad du_j = dH_j.
* ``eliminated``   -- dgamma eliminated; principal rows
  div(gamma(-grad du_j + 2 Fhat_j Fhat_j . grad du_j)) with scalar first-order
  compatibility constraints between pairs of functionals.
* ``eliminated2``  -- same principal rows, constraints differentiated once so
  every equation is second order.
* ``triangular``   -- per functional the PDE row plus the transformed row
  obtained by literally composing the discrete operators
  L_gamma |F_j|^-2 (functional row) - K_j (PDE row), K_j = 2 gamma |F_j|^-2 F_j . grad.

The dgamma coupling of every PDE row is the exact Jacobian of the discrete
conservative stencil with respect to gamma (chain rule through the harmonic
face averages), so Taylor tests against the nonlinear forward residuals are
clean. Row blocks are rescaled so each block's median max-abs row entry is
one; right-hand sides go through the same scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discrete import (
    conservative_apply,
    conservative_gamma_jacobian,
    conservative_gamma_jacobian_apply,
    conservative_operator,
    diff_matrix,
    flux_form_apply,
    flux_form_operator,
    interior_indices,
)
from .errors import (
    CharacteristicBoundaryNormal,
    GradientFloorViolation,
    GridMismatch,
    LinearSolveFailure,
    MissingCauchyData,
    NeedAtLeastTwoFunctionals,
    NonPositiveConductivity,
    PreconditionError,
)
from .fields import BoundaryData, Grid, ScalarField, gradient, normal_trace, side_name
from .forward import DEFAULT_C0

__all__ = [
    "UnknownLayout",
    "RowBlock",
    "LinearOperator",
    "CauchyData",
    "BoundaryConditionSet",
    "NormalSystem",
    "assemble_first_order_linearization",
    "assemble_eliminated_system",
    "assemble_triangular_system",
    "apply_matrix_free",
    "normal_system",
    "recover_boundary_dgamma",
]


@dataclass(frozen=True)
class UnknownLayout:
    """Ordered unknown blocks (dgamma first when present, then du_j) with one
    grid function per block."""

    grid: Grid
    J: int
    has_gamma: bool = True

    @property
    def block_names(self):
        du = tuple(f"du{j + 1}" for j in range(self.J))
        return (("dgamma",) + du) if self.has_gamma else du

    @property
    def n_blocks(self):
        return len(self.block_names)

    @property
    def total(self):
        return self.n_blocks * self.grid.node_count

    def offset(self, name):
        return self.block_names.index(name) * self.grid.node_count

    def block(self, vec, name):
        o = self.offset(name)
        return vec[o : o + self.grid.node_count]

    def pack(self, parts: dict):
        out = np.zeros(self.total)
        for name, arr in parts.items():
            o = self.offset(name)
            out[o : o + self.grid.node_count] = np.asarray(arr, dtype=float).ravel()
        return out


@dataclass
class RowBlock:
    tag: str  # pde | functional | principal | constraint | constraint_grad | transformed
    index: tuple  # functional index/pair (1-based), plus axis for gradient rows
    nodes: np.ndarray  # flat node indices the rows live on
    start: int
    stop: int
    scale: float = 1.0


class LinearOperator:
    """Sparse block operator with tagged equation blocks and an attached
    right-hand-side map from measured dH_j fields."""

    def __init__(self, matrix, layout, row_blocks, rhs_rules, kind, coeffs):
        self.matrix = matrix.tocsr()
        self.layout = layout
        self.row_blocks = row_blocks
        self._rhs_rules = rhs_rules
        self.kind = kind
        self.coeffs = coeffs
        scale = np.ones(matrix.shape[0])
        for rb in row_blocks:
            scale[rb.start : rb.stop] = rb.scale
        self.row_scale = scale

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, w):
        return self.matrix @ np.asarray(w, dtype=float)

    def apply_transpose(self, y):
        return self.matrix.T @ np.asarray(y, dtype=float)

    def rhs(self, dH) -> np.ndarray:
        """Scaled row-space right-hand side from the dH_j fields."""
        grid = self.layout.grid
        for f in dH:
            if f.grid != grid:
                raise GridMismatch("dH fields must live on the operator grid")
        out = np.zeros(self.shape[0])
        for rb, rule in zip(self.row_blocks, self._rhs_rules):
            vals = rule([f.values for f in dH])
            out[rb.start : rb.stop] = vals / rb.scale
        return out

    def scale_rowspace(self, unscaled):
        """Apply the per-block row scaling to an unscaled row-space vector."""
        return np.asarray(unscaled, dtype=float) / self.row_scale


def _coefficients(gamma: ScalarField, us, c0):
    grid = gamma.grid
    if float(np.min(gamma.values)) <= 0.0:
        raise NonPositiveConductivity("gamma must be positive for linearization")
    F, mag2, fhat = [], [], []
    for u in us:
        if u.grid != grid:
            raise GridMismatch("u_j fields must share the gamma grid")
        g = gradient(u).values
        m = np.linalg.norm(g, axis=1)
        if float(np.min(m)) < c0:
            raise GradientFloorViolation(
                f"min |F_j| = {float(np.min(m)):.3e} below the floor c0 = {c0:.3e}"
            )
        F.append(g)
        mag2.append(m**2)
        fhat.append(g / m[:, None])
    return {
        "grid": grid,
        "gamma": gamma.values,
        "u": [u.values for u in us],
        "F": F,
        "mag2": mag2,
        "fhat": fhat,
    }


def _median_row_scale(mat, start, stop):
    sub = abs(mat[start:stop]).max(axis=1).toarray().ravel()
    nz = sub[sub > 0]
    return float(np.median(nz)) if nz.size else 1.0


def _finish(blocks, layout, kind, coeffs):
    """Stack (tag, index, nodes, matrix, rhs_rule) rows, rescale per block."""
    mats, row_blocks, rules = [], [], []
    start = 0
    for tag, index, nodes, mat, rule in blocks:
        stop = start + mat.shape[0]
        row_blocks.append(RowBlock(tag, index, nodes, start, stop))
        mats.append(mat)
        rules.append(rule)
        start = stop
    full = sp.vstack(mats, format="csr")
    pieces = []
    for rb in row_blocks:
        s = _median_row_scale(full, rb.start, rb.stop)
        rb.scale = s
        pieces.append(full[rb.start : rb.stop] / s)
    return LinearOperator(sp.vstack(pieces, format="csr"), layout, row_blocks, rules, kind, coeffs)


def _grad_dot_matrix(grid, weights):
    """sum_k diag(weights[:, k]) D_k, rows at every node."""
    out = None
    for k in range(grid.dim):
        term = sp.diags(weights[:, k]) @ diff_matrix(grid, k)
        out = term if out is None else out + term
    return out.tocsr()


def _div_weighted_matrix(grid, weights):
    """sum_k D_k diag(weights[:, k]): the discrete div(weights * scalar)."""
    out = None
    for k in range(grid.dim):
        term = diff_matrix(grid, k) @ sp.diags(weights[:, k])
        out = term if out is None else out + term
    return out.tocsr()


def _hstack_blocks(layout, entries):
    """entries: dict block name -> sparse (m x N); absent blocks are zero."""
    m = next(iter(entries.values())).shape[0]
    n = layout.grid.node_count
    cols = []
    for name in layout.block_names:
        cols.append(entries.get(name, sp.csr_matrix((m, n))))
    return sp.hstack(cols, format="csr")


def _pde_blocks(coeffs):
    """Interior-row PDE matrices per functional: (dgamma block, du block)."""
    grid = coeffs["grid"]
    L = conservative_operator(grid, coeffs["gamma"])
    out = []
    for u in coeffs["u"]:
        out.append((conservative_gamma_jacobian(grid, coeffs["gamma"], u), L))
    return out, L


def _functional_blocks(coeffs):
    grid = coeffs["grid"]
    out = []
    for j in range(len(coeffs["u"])):
        dgam = sp.diags(coeffs["mag2"][j])
        du = _grad_dot_matrix(grid, 2.0 * coeffs["gamma"][:, None] * coeffs["F"][j])
        out.append((dgam, du))
    return out


def assemble_first_order_linearization(gamma, us, c0=DEFAULT_C0) -> LinearOperator:
    """Raw linearization over (dgamma, {du_j}): 2J equation blocks, PDE rows
    at interior nodes, functional rows at every node. RHS slots: zeros for
    the PDE rows, dH_j for the functional rows."""
    coeffs = _coefficients(gamma, us, c0)
    grid = coeffs["grid"]
    layout = UnknownLayout(grid, len(us), has_gamma=True)
    inner = interior_indices(grid)
    all_nodes = np.arange(grid.node_count)

    pdes, _ = _pde_blocks(coeffs)
    funcs = _functional_blocks(coeffs)

    blocks = []
    for j in range(len(us)):
        Bj, L = pdes[j]
        row = _hstack_blocks(layout, {"dgamma": Bj[inner], f"du{j + 1}": L[inner]})
        blocks.append(("pde", (j + 1,), inner, row, lambda dH: np.zeros(inner.size)))
        Gj, Du = funcs[j]
        row = _hstack_blocks(layout, {"dgamma": Gj, f"du{j + 1}": Du})
        blocks.append(
            ("functional", (j + 1,), all_nodes, row, (lambda jj: lambda dH: dH[jj])(j))
        )
    return _finish(blocks, layout, "first_order", coeffs)


def _principal_matrices(coeffs, principal="flux"):
    """Anisotropic principal part div(gamma (-grad + 2 Fhat Fhat^t grad) .),
    rows at interior nodes.

    ``flux``     -- flux form: compact conservative diagonal terms plus
                    composed mixed terms; best discrete-symbol fidelity.
    ``jacobian`` -- the composition dL/dgamma . K_j - L_gamma, the exact
                    derivative of the conservative residual with the
                    conductivity eliminated through the functional identity;
                    this is what the nonlinear fixed point must be paired
                    with.
    """
    grid = coeffs["grid"]
    dim = grid.dim
    out = []
    if principal == "flux":
        for fh in coeffs["fhat"]:
            B = 2.0 * fh[:, :, None] * fh[:, None, :] - np.eye(dim)[None, :, :]
            B = B * coeffs["gamma"][:, None, None]
            out.append(flux_form_operator(grid, B))
        return out
    if principal != "jacobian":
        raise PreconditionError(f"unknown principal discretization {principal!r}")
    L = conservative_operator(grid, coeffs["gamma"])
    Ks = _constraint_matrices(coeffs)
    for j, u in enumerate(coeffs["u"]):
        B = conservative_gamma_jacobian(grid, coeffs["gamma"], u)
        out.append((B @ Ks[j] - L).tocsr())
    return out


def _constraint_matrices(coeffs):
    """K_j = 2 gamma |F_j|^-2 F_j . grad, rows at every node."""
    grid = coeffs["grid"]
    out = []
    for j in range(len(coeffs["u"])):
        w = 2.0 * (coeffs["gamma"] / coeffs["mag2"][j])[:, None] * coeffs["F"][j]
        out.append(_grad_dot_matrix(grid, w))
    return out


def assemble_eliminated_system(
    gamma, us, order="first", c0=DEFAULT_C0, principal="flux"
) -> LinearOperator:
    """System over {du_j} only: J principal rows plus pairwise compatibility
    constraints (scalar for ``order='first'``, one row per axis for
    ``order='second'``)."""
    if order not in ("first", "second"):
        raise PreconditionError(f"order must be 'first' or 'second', got {order!r}")
    if len(us) < 2:
        raise NeedAtLeastTwoFunctionals("the eliminated system needs J >= 2")
    coeffs = _coefficients(gamma, us, c0)
    grid = coeffs["grid"]
    J = len(us)
    layout = UnknownLayout(grid, J, has_gamma=False)
    inner = interior_indices(grid)
    all_nodes = np.arange(grid.node_count)

    principals = _principal_matrices(coeffs, principal)
    Ks = _constraint_matrices(coeffs)
    inv2 = [1.0 / m for m in coeffs["mag2"]]
    rhs_div = [
        _div_weighted_matrix(grid, coeffs["F"][j] * inv2[j][:, None])[interior_indices(grid)]
        for j in range(J)
    ]

    blocks = []
    for j in range(J):
        row = _hstack_blocks(layout, {f"du{j + 1}": principals[j][inner]})
        blocks.append(
            (
                "principal",
                (j + 1,),
                inner,
                row,
                (lambda jj: lambda dH: rhs_div[jj] @ dH[jj])(j),
            )
        )
    for j in range(J):
        for k in range(j + 1, J):
            base = _hstack_blocks(layout, {f"du{j + 1}": Ks[j], f"du{k + 1}": -Ks[k]})

            def scalar_rule(jj, kk):
                return lambda dH: dH[jj] * inv2[jj] - dH[kk] * inv2[kk]

            if order == "first":
                blocks.append(("constraint", (j + 1, k + 1), all_nodes, base, scalar_rule(j, k)))
            else:
                for axis in range(grid.dim):
                    D = diff_matrix(grid, axis)
                    blocks.append(
                        (
                            "constraint_grad",
                            (j + 1, k + 1, axis),
                            all_nodes,
                            (D @ base).tocsr(),
                            (lambda jj, kk, DD: lambda dH: DD @ (dH[jj] * inv2[jj] - dH[kk] * inv2[kk]))(
                                j, k, D
                            ),
                        )
                    )
    kind = "eliminated" if order == "first" else "eliminated2"
    coeffs["principal"] = principal
    coeffs["frozen"] = {
        "inner": inner,
        "diff": [diff_matrix(grid, m) for m in range(grid.dim)] if order == "second" else None,
    }
    return _finish(blocks, layout, kind, coeffs)


def assemble_triangular_system(gamma, us, c0=DEFAULT_C0) -> LinearOperator:
    """Per functional: the PDE row and the transformed second-order row
    built by composing the assembled first-order blocks,

        L_gamma |F_j|^-2 (functional row) - K_j (PDE row),

    which carries a dgamma principal part proportional to the quadratic form
    of Fhat_j. Transformed rows live two layers inside the boundary so every
    composed stencil only reads well-defined rows."""
    coeffs = _coefficients(gamma, us, c0)
    grid = coeffs["grid"]
    J = len(us)
    layout = UnknownLayout(grid, J, has_gamma=True)
    inner = interior_indices(grid)
    deep = interior_indices(grid, depth=2)

    pdes, L = _pde_blocks(coeffs)
    funcs = _functional_blocks(coeffs)
    Ks = _constraint_matrices(coeffs)
    inv2 = [1.0 / m for m in coeffs["mag2"]]

    blocks = []
    data_ops = []
    for j in range(J):
        Bj, _ = pdes[j]
        pde_row = _hstack_blocks(layout, {"dgamma": Bj, f"du{j + 1}": L})
        blocks.append(
            ("pde", (j + 1,), inner, pde_row[inner], lambda dH: np.zeros(inner.size))
        )

        Gj, Du = funcs[j]
        func_row = _hstack_blocks(layout, {"dgamma": Gj, f"du{j + 1}": Du})
        Lw = (L @ sp.diags(inv2[j])).tocsr()
        transformed = (Lw @ func_row - Ks[j] @ pde_row).tocsr()
        data_ops.append(Lw[deep])
        blocks.append(
            (
                "transformed",
                (j + 1,),
                deep,
                transformed[deep],
                (lambda jj, M: lambda dH: M @ dH[jj])(j, Lw[deep]),
            )
        )
    coeffs["frozen"] = {"K": Ks, "data_ops": data_ops, "inner": inner, "deep": deep}
    return _finish(blocks, layout, "triangular", coeffs)


def apply_matrix_free(A: LinearOperator, w) -> np.ndarray:
    """Apply the assembled operator without its sparse matrix.

    Built from np.gradient calls and stencil slicing only, as an independent
    route against the Kronecker-product assembly; agrees with ``A.apply`` to
    machine precision.
    """
    layout, coeffs = A.layout, A.coeffs
    grid = layout.grid
    gamma, F, mag2 = coeffs["gamma"], coeffs["F"], coeffs["mag2"]
    w = np.asarray(w, dtype=float)

    def grad_mf(v):
        arr = v.reshape(grid.shape)
        return np.stack(
            [
                np.gradient(arr, grid.spacing[k], axis=k, edge_order=2).ravel()
                for k in range(grid.dim)
            ],
            axis=1,
        )

    def K_mf(j, v):
        return (2.0 * gamma / mag2[j]) * np.einsum("nd,nd->n", F[j], grad_mf(v))

    def du(j):
        return layout.block(w, f"du{j + 1}")

    def pde_field(j):
        dg = layout.block(w, "dgamma")
        return conservative_gamma_jacobian_apply(
            grid, gamma, coeffs["u"][j], dg
        ) + conservative_apply(grid, gamma, du(j))

    def func_field(j):
        dg = layout.block(w, "dgamma")
        return mag2[j] * dg + 2.0 * gamma * np.einsum("nd,nd->n", F[j], grad_mf(du(j)))

    out = np.zeros(A.shape[0])
    for rb in A.row_blocks:
        if rb.tag == "pde":
            vals = pde_field(rb.index[0] - 1)[rb.nodes]
        elif rb.tag == "functional":
            vals = func_field(rb.index[0] - 1)[rb.nodes]
        elif rb.tag == "principal":
            j = rb.index[0] - 1
            if coeffs.get("principal") == "jacobian":
                field = conservative_gamma_jacobian_apply(
                    grid, gamma, coeffs["u"][j], K_mf(j, du(j))
                ) - conservative_apply(grid, gamma, du(j))
            else:
                fh = coeffs["fhat"][j]
                B = gamma[:, None, None] * (
                    2.0 * fh[:, :, None] * fh[:, None, :] - np.eye(grid.dim)[None, :, :]
                )
                field = flux_form_apply(grid, B, du(j))
            vals = field[rb.nodes]
        elif rb.tag == "constraint":
            j, k = rb.index[0] - 1, rb.index[1] - 1
            vals = (K_mf(j, du(j)) - K_mf(k, du(k)))[rb.nodes]
        elif rb.tag == "constraint_grad":
            j, k, axis = rb.index[0] - 1, rb.index[1] - 1, rb.index[2]
            field = (K_mf(j, du(j)) - K_mf(k, du(k))).reshape(grid.shape)
            vals = np.gradient(field, grid.spacing[axis], axis=axis, edge_order=2).ravel()[
                rb.nodes
            ]
        elif rb.tag == "transformed":
            j = rb.index[0] - 1
            lw = conservative_apply(grid, gamma, func_field(j) / mag2[j])
            vals = (lw - K_mf(j, pde_field(j)))[rb.nodes]
        else:
            raise PreconditionError(f"unknown row tag {rb.tag!r}")
        out[rb.start : rb.stop] = vals / rb.scale
    return out


@dataclass
class CauchyData:
    """Trace and normal-derivative trace of one unknown block."""

    value: BoundaryData
    normal: BoundaryData

    def __post_init__(self):
        if self.value.kind != BoundaryData.DIRICHLET:
            raise MissingCauchyData("Cauchy value part must be a Dirichlet trace")
        if self.normal.kind != BoundaryData.NEUMANN:
            raise MissingCauchyData("Cauchy normal part must be a normal-derivative trace")
        if self.value.grid != self.normal.grid:
            raise GridMismatch("Cauchy traces live on different grids")

    @classmethod
    def zero(cls, grid):
        return cls(
            BoundaryData.zero(grid, BoundaryData.DIRICHLET),
            BoundaryData.zero(grid, BoundaryData.NEUMANN),
        )


class BoundaryConditionSet:
    """Boundary condition kind per unknown block: none, Dirichlet, or Cauchy."""

    def __init__(self, entries: dict):
        self.entries = dict(entries)

    @classmethod
    def cauchy_zero(cls, layout: UnknownLayout):
        return cls({name: CauchyData.zero(layout.grid) for name in layout.block_names})

    def kind(self, name):
        e = self.entries.get(name)
        if e is None:
            return "none"
        if isinstance(e, CauchyData):
            return "cauchy"
        return "dirichlet"

    def cauchy(self, name) -> CauchyData:
        e = self.entries.get(name)
        if not isinstance(e, CauchyData):
            raise MissingCauchyData(f"block {name!r} needs Cauchy data (value and normal trace)")
        return e


def _one_sided_normal_row(grid, axis, high, face_node):
    """Stencil (cols, vals) of the outward normal derivative at a face node,
    matching ``normal_trace``."""
    step = 1
    for k in range(axis + 1, grid.dim):
        step *= grid.shape[k]
    h = grid.spacing[axis]
    sgn = -1 if high else +1
    cols = np.array([face_node, face_node + sgn * step, face_node + 2 * sgn * step])
    vals = np.array([3.0, -4.0, 1.0]) / (2.0 * h)
    return cols, vals


class NormalSystem:
    """A^t A with its two boundary layers replaced by Cauchy constraint rows:
    identity rows carrying the trace at boundary nodes, one-sided
    normal-derivative rows (scaled by h) at the first interior ring. A ring
    node adjacent to several faces averages the adjacent constraints."""

    def __init__(self, op: LinearOperator, bc: BoundaryConditionSet, tikhonov=0.0):
        self.op = op
        self.layout = op.layout
        grid = self.layout.grid
        M = (op.matrix.T @ op.matrix).tocsr()
        if tikhonov:
            M = M + tikhonov * sp.identity(M.shape[0], format="csr")

        boundary = np.flatnonzero(grid.boundary_mask())
        ring = np.flatnonzero(grid.interior_mask(1) & ~grid.interior_mask(2))
        shape_arr = np.array(grid.shape)

        rows, cols, vals = [], [], []
        replaced = np.zeros(self.layout.total, dtype=bool)
        self._dirichlet_slots = []  # (global row, node index)
        self._neumann_slots = []  # (global row, [(axis, high, face node, weight)])

        for name in self.layout.block_names:
            off = self.layout.offset(name)
            for i in boundary:
                r = off + int(i)
                replaced[r] = True
                rows.append(r)
                cols.append(r)
                vals.append(1.0)
                self._dirichlet_slots.append((r, name, int(i)))

            for p in ring:
                multi = np.unravel_index(int(p), grid.shape)
                constraints = []
                for axis in range(grid.dim):
                    step = 1
                    for k in range(axis + 1, grid.dim):
                        step *= grid.shape[k]
                    if multi[axis] == 1:
                        constraints.append((axis, False, int(p) - step))
                    if multi[axis] == shape_arr[axis] - 2:
                        constraints.append((axis, True, int(p) + step))
                if not constraints:
                    raise PreconditionError("ring node without an adjacent face")
                r = off + int(p)
                replaced[r] = True
                w = 1.0 / len(constraints)
                slot = []
                for axis, hi, fn in constraints:
                    c, v = _one_sided_normal_row(grid, axis, hi, fn)
                    rows.extend([r] * len(c))
                    cols.extend((off + c).tolist())
                    vals.extend((w * v * grid.spacing[axis]).tolist())
                    slot.append((axis, hi, fn, w * grid.spacing[axis]))
                self._neumann_slots.append((r, name, slot))

        keep = sp.diags((~replaced).astype(float))
        C = sp.coo_matrix((vals, (rows, cols)), shape=M.shape).tocsr()
        self.matrix = (keep @ M + C).tocsr()
        self.replaced = replaced
        self._keep = keep
        self._lu = None
        self.constraint_data = None
        self.set_boundary_data(bc)

    def set_boundary_data(self, bc: BoundaryConditionSet):
        """Fill the constraint-row data from Cauchy traces; the factorized
        matrix is unchanged, so sweeping many data sets is cheap."""
        for name in self.layout.block_names:
            if bc.kind(name) != "cauchy":
                raise MissingCauchyData(
                    f"the normal system needs Cauchy data on every block; {name!r} has "
                    f"{bc.kind(name)!r}"
                )
        grid = self.layout.grid
        data = np.zeros(self.layout.total)
        dir_vals = {name: bc.cauchy(name).value.node_values() for name in self.layout.block_names}
        for r, name, i in self._dirichlet_slots:
            data[r] = dir_vals[name][i]
        face_values = {}
        for name in self.layout.block_names:
            nrm = bc.cauchy(name).normal
            for axis, hi in grid.sides():
                idx = grid.face_indices(axis, hi).ravel()
                v = nrm.side(axis, hi).ravel()
                face_values[(name, axis, hi)] = dict(zip(idx.tolist(), v.tolist()))
        for r, name, slot in self._neumann_slots:
            data[r] = sum(w * face_values[(name, axis, hi)][fn] for axis, hi, fn, w in slot)
        self.constraint_data = data

    def gram(self):
        """A^t A before constraint substitution (symmetric PSD)."""
        return (self.op.matrix.T @ self.op.matrix).tocsr()

    def _factor(self):
        if self._lu is None:
            try:
                self._lu = spla.splu(self.matrix.tocsc())
            except RuntimeError as exc:
                raise LinearSolveFailure(f"normal-system factorization failed: {exc}") from exc
        return self._lu

    def solve_rowspace(self, S, with_bc=True):
        """Solve for the unknown vector given a scaled row-space load S: the
        kept rows read A^t A v = A^t S, the constraint rows carry the Cauchy
        data (or zero when ``with_bc`` is false)."""
        rhs = self._keep @ (self.op.matrix.T @ np.asarray(S, dtype=float))
        if with_bc:
            rhs = rhs + self.constraint_data
        sol = self._factor().solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise LinearSolveFailure("normal-system solve produced non-finite values")
        return sol

    def solve(self, dH, with_bc=True):
        return self.solve_rowspace(self.op.rhs(dH), with_bc=with_bc)


def normal_system(A: LinearOperator, bc: BoundaryConditionSet, tikhonov=0.0) -> NormalSystem:
    return NormalSystem(A, bc, tikhonov=tikhonov)


def _tangential_axes(grid, axis):
    return [k for k in range(grid.dim) if k != axis]


def _face_derivative(grid, axis, face_arr, t_axis):
    """First tangential derivative of a face array (np.gradient stencils)."""
    pos = _tangential_axes(grid, axis).index(t_axis)
    return np.gradient(face_arr, grid.spacing[t_axis], axis=pos, edge_order=2)


def _face_second_derivative(grid, axis, face_arr, t_axis):
    pos = _tangential_axes(grid, axis).index(t_axis)
    h = grid.spacing[t_axis]
    arr = np.moveaxis(np.asarray(face_arr, dtype=float), pos, 0)
    out = np.empty_like(arr)
    out[1:-1] = (arr[2:] - 2.0 * arr[1:-1] + arr[:-2]) / h**2
    out[0] = (2.0 * arr[0] - 5.0 * arr[1] + 4.0 * arr[2] - arr[3]) / h**2
    out[-1] = (2.0 * arr[-1] - 5.0 * arr[-2] + 4.0 * arr[-3] - arr[-4]) / h**2
    return np.moveaxis(out, 0, pos)


def _second_normal_trace(u: ScalarField, axis, high):
    """One-sided 4-point second normal derivative on a face, O(h^2)."""
    arr = u.as_grid_array()
    h = u.grid.spacing[axis]

    def layer(i):
        sl = [slice(None)] * u.grid.dim
        sl[axis] = -(i + 1) if high else i
        return arr[tuple(sl)]

    return (2.0 * layer(0) - 5.0 * layer(1) + 4.0 * layer(2) - layer(3)) / h**2


def recover_boundary_dgamma(
    dH1: ScalarField,
    u1: ScalarField,
    gamma: ScalarField,
    du1: CauchyData,
    tolerance=1e-8,
) -> CauchyData:
    """Cauchy data for dgamma from the Cauchy data of du_1 and the measured
    dH_1 field.

    The trace comes from the functional identity
        dgamma = (dH_1 - 2 gamma F_1 . grad du_1) / |F_1|^2,
    whose boundary gradient needs only tangential derivatives of the known
    traces. The normal trace follows by eliminating the one unknown second
    normal derivative of du_1 between the normal derivative of that identity
    and the PDE row; the elimination divides by gamma (1 - 2 (Fhat_1 . nu)^2),
    so every face node must be non-characteristic for the leading form.
    """
    grid = dH1.grid
    if u1.grid != grid or gamma.grid != grid or du1.value.grid != grid:
        raise GridMismatch("recovery inputs must share one grid")

    dHn_all = normal_trace(dH1)
    gam_n_all = normal_trace(gamma)
    u1_n_all = normal_trace(u1)

    value_sides, normal_sides = {}, {}
    bad_nodes = []
    for axis, high in grid.sides():
        name = side_name(axis, high)
        idx = grid.face_indices(axis, high)
        taxes = _tangential_axes(grid, axis)

        dH_b = dH1.values[idx]
        dHn = dHn_all.side(axis, high)
        gam_b = gamma.values[idx]
        dgam_n = gam_n_all.side(axis, high)
        dgam_t = {t: _face_derivative(grid, axis, gam_b, t) for t in taxes}

        Fnu = u1_n_all.side(axis, high)
        u1_b = u1.values[idx]
        Ft = {t: _face_derivative(grid, axis, u1_b, t) for t in taxes}
        mag2 = Fnu**2 + sum(Ft[t] ** 2 for t in taxes)
        U2 = _second_normal_trace(u1, axis, high)
        T2 = {t: _face_second_derivative(grid, axis, u1_b, t) for t in taxes}
        Mu = {t: _face_derivative(grid, axis, Fnu, t) for t in taxes}

        d = du1.value.side(axis, high)
        gq = du1.normal.side(axis, high)
        d1 = {t: _face_derivative(grid, axis, d, t) for t in taxes}
        d2 = {t: _face_second_derivative(grid, axis, d, t) for t in taxes}
        g1 = {t: _face_derivative(grid, axis, gq, t) for t in taxes}

        coef = 1.0 - 2.0 * Fnu**2 / mag2
        bad = np.abs(coef) <= tolerance
        if np.any(bad):
            for flat in np.flatnonzero(bad.ravel()):
                bad_nodes.append((name, int(flat)))
            continue

        f_dot_grad = Fnu * gq + sum(Ft[t] * d1[t] for t in taxes)
        dgamma_trace = (dH_b - 2.0 * gam_b * f_dot_grad) / mag2
        value_sides[name] = dgamma_trace

        dmag = 2.0 * (Fnu * U2 + sum(Ft[t] * Mu[t] for t in taxes))
        known_a = (
            dgam_n * f_dot_grad
            + gam_b * (U2 * gq + sum(Mu[t] * d1[t] for t in taxes))
            + gam_b * sum(Ft[t] * g1[t] for t in taxes)
        )
        a_theta = (dHn - 2.0 * known_a) / mag2 - dmag * (dH_b - 2.0 * gam_b * f_dot_grad) / mag2**2
        b_theta = -2.0 * gam_b * Fnu / mag2

        trace_t = {t: _face_derivative(grid, axis, dgamma_trace, t) for t in taxes}
        div_F = U2 + sum(T2[t] for t in taxes)
        known = (
            a_theta * Fnu
            + sum(Ft[t] * trace_t[t] for t in taxes)
            + dgamma_trace * div_F
            + gam_b * sum(d2[t] for t in taxes)
            + dgam_n * gq
            + sum(dgam_t[t] * d1[t] for t in taxes)
        )
        phi = -known / (gam_b * coef)
        normal_sides[name] = a_theta + b_theta * phi

    if bad_nodes:
        raise CharacteristicBoundaryNormal(
            f"boundary normal is characteristic for F_1 at {len(bad_nodes)} nodes",
            nodes=bad_nodes,
        )
    return CauchyData(
        BoundaryData(grid, value_sides, BoundaryData.DIRICHLET),
        BoundaryData(grid, normal_sides, BoundaryData.NEUMANN),
    )
