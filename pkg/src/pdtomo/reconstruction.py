"""Nonlinear conductivity reconstruction by fixed-point iteration.

The iteration works on the modified residual map whose linearization at the
initial guess is the assembled system: with A frozen at v0 and the normal
system carrying Cauchy boundary data, the update is

    w^{k+1} = A^{-1}(H - H0, g - g0) - A^{-1}(G(w^k; v0), 0),

realized as one factorized solve per iterate. Boundary data for dgamma are
always derived from the du Cauchy data and the measured dH field via
``recover_boundary_dgamma``; the Neumann increments come straight from
g - g0. Contraction constants are estimated empirically along the run and
reported, never assumed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discrete import conservative_apply, conservative_operator
from .errors import PreconditionError
from .fields import (
    BoundaryData,
    ScalarField,
    gradient,
    node_weights,
    normal_trace,
)
from .forward import DEFAULT_C0, synthesize_dataset
from .linearized import (
    BoundaryConditionSet,
    CauchyData,
    LinearOperator,
    assemble_eliminated_system,
    assemble_triangular_system,
    normal_system,
    recover_boundary_dgamma,
)

__all__ = [
    "ReconstructionConfig",
    "ReconstructionReport",
    "modified_forward",
    "fixed_point_reconstruct",
    "local_injectivity_probe",
    "InjectivityProbeReport",
]


@dataclass
class ReconstructionConfig:
    system_variant: str = "triangular"  # or "eliminated2"
    max_iter: int = 50
    tol_rel: float = 1e-8
    c0: float = DEFAULT_C0
    tikhonov: float = 0.0
    refresh_linearization: bool = False
    divergence_patience: int = 3
    solver_tol: float = 1e-12

    def __post_init__(self):
        if self.system_variant not in ("triangular", "eliminated2"):
            raise PreconditionError(f"unknown system variant {self.system_variant!r}")
        if self.max_iter < 1:
            raise PreconditionError("max_iter must be >= 1")
        if self.tol_rel <= 0 or self.solver_tol <= 0:
            raise PreconditionError("tolerances must be positive")


@dataclass
class ReconstructionReport:
    iterate_count: int
    increments: list
    residuals: list
    data_misfits: list
    boundary_misfits: list
    verdict: str  # converged | stalled | diverged
    gamma: ScalarField
    u: list
    c1_estimate: float
    c2_estimate: float
    config: ReconstructionConfig
    boundary_misfit0: float = 0.0
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "iterate_count": int(self.iterate_count),
            "increments": [float(v) for v in self.increments],
            "residuals": [float(v) for v in self.residuals],
            "data_misfits": [float(v) for v in self.data_misfits],
            "boundary_misfits": [float(v) for v in self.boundary_misfits],
            "verdict": self.verdict,
            "c1_estimate": float(self.c1_estimate),
            "c2_estimate": float(self.c2_estimate),
            "boundary_misfit0": float(self.boundary_misfit0),
            "variant": self.config.system_variant,
        }


def modified_forward(system: LinearOperator, gamma: ScalarField, us) -> np.ndarray:
    """Nonlinear residual blocks of the transformed system at v = (gamma, {u_j}),
    in the scaled row space of ``system``.

    Per functional: the conservative PDE residual of (gamma, u_j) on the
    interior rows, and on the transformed rows the frozen composition
    L0 |F0_j|^-2 applied to gamma |grad u_j|^2 minus K0_j applied to the PDE
    residual field. The linearization of this map at the system's expansion
    point is the system matrix itself.
    """
    if system.kind != "triangular":
        raise PreconditionError("modified_forward expects a triangular system")
    grid = system.layout.grid
    frozen = system.coeffs["frozen"]
    out = np.zeros(system.shape[0])
    L_now = conservative_operator(grid, gamma.values)
    for rb in system.row_blocks:
        j = rb.index[0] - 1
        u = us[j]
        pde_field = L_now @ u.values  # zero outside interior rows
        if rb.tag == "pde":
            out[rb.start : rb.stop] = pde_field[frozen["inner"]]
        else:
            H_now = gamma.values * np.sum(gradient(u).values ** 2, axis=1)
            vals = frozen["data_ops"][j] @ H_now - (frozen["K"][j] @ pde_field)[frozen["deep"]]
            out[rb.start : rb.stop] = vals
    return out / system.row_scale


def _transformed_data(system: LinearOperator, H) -> np.ndarray:
    """Target row-space values hit by ``modified_forward`` at the exact
    solution: zero PDE rows, L0 |F0|^-2 applied to the measured H_j."""
    out = np.zeros(system.shape[0])
    frozen = system.coeffs["frozen"]
    for rb in system.row_blocks:
        if rb.tag == "transformed":
            j = rb.index[0] - 1
            out[rb.start : rb.stop] = frozen["data_ops"][j] @ H[j].values
    return out / system.row_scale


def _eliminated_residual(system: LinearOperator, us, H) -> np.ndarray:
    """Residual stack of the dgamma-free system at u, with measured H inside:
    -div((H_j / |grad u_j|^2) grad u_j) on principal rows and the
    differentiated pairwise identities on constraint rows. The sign makes the
    linearization at the expansion point equal the system matrix; the target
    value of every block is zero."""
    if system.kind != "eliminated2":
        raise PreconditionError("expected the second-order eliminated system")
    grid = system.layout.grid
    frozen = system.coeffs["frozen"]
    b = []
    for j, u in enumerate(us):
        mag2 = np.sum(gradient(u).values ** 2, axis=1)
        b.append(H[j].values / mag2)
    out = np.zeros(system.shape[0])
    for rb in system.row_blocks:
        if rb.tag == "principal":
            j = rb.index[0] - 1
            r = conservative_apply(grid, b[j], us[j].values)
            out[rb.start : rb.stop] = -r[frozen["inner"]]
        else:
            j, k, axis = rb.index[0] - 1, rb.index[1] - 1, rb.index[2]
            out[rb.start : rb.stop] = -(frozen["diff"][axis] @ (b[j] - b[k]))
    return out / system.row_scale


def _block_l2(layout, vec):
    w = node_weights(layout.grid)
    total = 0.0
    for name in layout.block_names:
        part = layout.block(vec, name)
        total += float(np.sum(w * part**2))
    return np.sqrt(total)


def _boundary_norm(bdatas):
    return float(
        np.sqrt(
            sum(
                float(np.sum(b.sides[s] ** 2)) / b.sides[s].size
                for b in bdatas
                for s in b.sides
            )
        )
    )


def _assemble_at(variant, gamma, us, c0):
    if variant == "triangular":
        return assemble_triangular_system(gamma, us, c0=c0)
    # the fixed point needs the principal rows to be the exact derivative of
    # the discrete residual it iterates on
    return assemble_eliminated_system(gamma, us, order="second", c0=c0, principal="jacobian")


def _boundary_conditions(variant, system, gamma0, us0, H, H0, g, g0):
    grid = gamma0.grid
    entries = {}
    du_cauchy = []
    for j in range(len(us0)):
        cd = CauchyData(BoundaryData.zero(grid), g[j] - g0[j])
        du_cauchy.append(cd)
        entries[f"du{j + 1}"] = cd
    if variant == "triangular":
        dH1 = H[0] - H0[0]
        entries["dgamma"] = recover_boundary_dgamma(dH1, us0[0], gamma0, du_cauchy[0])
    return BoundaryConditionSet(entries)


def fixed_point_reconstruct(
    H, g, gamma_guess: ScalarField, dirichlet, cfg: ReconstructionConfig | None = None
) -> ReconstructionReport:
    """Reconstruct gamma from power densities H_j and Neumann traces g_j.

    ``dirichlet`` carries the known boundary conditions f_j that produced the
    data; the expansion point v0 solves the forward problem at the guess, so
    g0 is computed, not supplied. Iterates with the frozen normal system
    until the increment drops below ``tol_rel`` (relative to the iterate
    norm), the iteration budget runs out, or the increments grow
    ``divergence_patience`` times in a row.
    """
    cfg = cfg or ReconstructionConfig()
    if not (len(H) == len(g) == len(dirichlet)):
        raise PreconditionError("H, g and dirichlet must have matching lengths")
    J = len(H)
    if J < 2:
        raise PreconditionError("reconstruction needs at least two functionals")

    gamma0, us0 = gamma_guess, None
    data0 = synthesize_dataset(gamma0, dirichlet, c0=cfg.c0, tol=cfg.solver_tol)
    us0, H0, g0 = data0.u, data0.H, data0.g

    system = _assemble_at(cfg.system_variant, gamma0, us0, cfg.c0)
    bc = _boundary_conditions(cfg.system_variant, system, gamma0, us0, H, H0, g, g0)
    NS = normal_system(system, bc, tikhonov=cfg.tikhonov)
    layout = system.layout

    if cfg.system_variant == "triangular":
        target = _transformed_data(system, H)
        residual_at = lambda us_k, gam_k: modified_forward(system, gam_k, us_k)
    else:
        target = np.zeros(system.shape[0])
        residual_at = lambda us_k, gam_k: _eliminated_residual(system, us_k, H)
    F0 = residual_at(us0, gamma0)

    boundary_misfit0 = _boundary_norm([g[j] - g0[j] for j in range(J)])
    data_misfit0 = np.sqrt(
        sum(_block_l2_scalar(H[j] - H0[j]) ** 2 for j in range(J))
    )

    w = np.zeros(layout.total)
    increments, residuals, data_misfits, boundary_misfits = [], [], [], []
    c1s, c2s = [], []
    grow_streak = 0
    verdict = "stalled"
    prev_w = None
    prev_inc = None
    peak_norm = 0.0

    for it in range(cfg.max_iter):
        gam_k, us_k = _current_fields(layout, gamma0, us0, w, cfg.system_variant, H)
        Fk = residual_at(us_k, gam_k)
        residuals.append(float(np.linalg.norm(Fk - target)))
        data_misfits.append(_h_misfit(gam_k, us_k, H))
        boundary_misfits.append(
            _boundary_norm([g[j] - normal_trace(us_k[j]) for j in range(J)])
        )

        w_next = NS.solve_rowspace(system.apply(w) - Fk + target, with_bc=True)
        inc = _block_l2(layout, w_next - w)
        increments.append(inc)

        norm_w = _block_l2(layout, w_next)
        if prev_w is not None and prev_inc is not None and prev_inc > 0:
            # contraction estimate along consecutive iterates
            denom = (_block_l2(layout, w) + _block_l2(layout, prev_w)) * prev_inc
            if denom > 0:
                c2s.append(inc / denom)
        norm_wk = _block_l2(layout, w)
        if norm_wk > 0:
            Gk = Fk - F0 - system.apply(w)  # quadratic remainder of the modified map
            zg = NS.solve_rowspace(Gk, with_bc=False)
            c1s.append(_block_l2(layout, zg) / norm_wk**2)

        prev_w, prev_inc = w, inc
        w = w_next
        peak_norm = max(peak_norm, norm_w)
        scale = max(peak_norm, 1e-12)

        if inc <= cfg.tol_rel * scale:
            verdict = "converged"
            break
        # growth counts toward divergence only when clearly above floor wiggle
        # and above the stopping scale
        if len(increments) >= 2 and inc > 1.2 * increments[-2] and inc > 10.0 * cfg.tol_rel * scale:
            grow_streak += 1
            if grow_streak >= cfg.divergence_patience:
                verdict = "diverged"
                break
        else:
            grow_streak = 0

        if cfg.refresh_linearization:
            # Newton-like refresh: fold the iterate into the expansion point,
            # re-solve the forward problems there, re-linearize, restart w.
            gam_k, _ = _current_fields(layout, gamma0, us0, w, cfg.system_variant, H)
            gamma0 = gam_k
            data0 = synthesize_dataset(gamma0, dirichlet, c0=cfg.c0, tol=cfg.solver_tol)
            us0, H0, g0 = data0.u, data0.H, data0.g
            system = _assemble_at(cfg.system_variant, gamma0, us0, cfg.c0)
            bc = _boundary_conditions(cfg.system_variant, system, gamma0, us0, H, H0, g, g0)
            NS = normal_system(system, bc, tikhonov=cfg.tikhonov)
            if cfg.system_variant == "triangular":
                target = _transformed_data(system, H)
                residual_at = lambda us_k, gam_k: modified_forward(system, gam_k, us_k)
            else:
                target = np.zeros(system.shape[0])
                residual_at = lambda us_k, gam_k: _eliminated_residual(system, us_k, H)
            F0 = residual_at(us0, gamma0)
            w = np.zeros(layout.total)

    gam_f, us_f = _current_fields(layout, gamma0, us0, w, cfg.system_variant, H)
    return ReconstructionReport(
        iterate_count=len(increments),
        increments=increments,
        residuals=residuals,
        data_misfits=data_misfits,
        boundary_misfits=boundary_misfits,
        verdict=verdict,
        gamma=gam_f,
        u=us_f,
        c1_estimate=float(max(c1s)) if c1s else 0.0,
        c2_estimate=float(max(c2s)) if c2s else 0.0,
        config=cfg,
        boundary_misfit0=boundary_misfit0,
        detail={"data_misfit0": float(data_misfit0)},
    )


def _block_l2_scalar(f: ScalarField):
    w = node_weights(f.grid)
    return float(np.sqrt(np.sum(w * f.values**2)))


def _h_misfit(gamma, us, H):
    total = 0.0
    for j, u in enumerate(us):
        Hj = gamma.values * np.sum(gradient(u).values ** 2, axis=1)
        d = ScalarField(H[j].grid, Hj - H[j].values)
        total += _block_l2_scalar(d) ** 2
    return float(np.sqrt(total))


def _current_fields(layout, gamma0, us0, w, variant, H):
    grid = layout.grid
    us_k = [
        ScalarField(grid, us0[j].values + layout.block(w, f"du{j + 1}"))
        for j in range(len(us0))
    ]
    if variant == "triangular":
        gam_k = ScalarField(grid, gamma0.values + layout.block(w, "dgamma"))
    else:
        # gamma implied by the functional identity, averaged over functionals
        acc = np.zeros(grid.node_count)
        for j, u in enumerate(us_k):
            mag2 = np.sum(gradient(u).values ** 2, axis=1)
            acc += H[j].values / mag2
        gam_k = ScalarField(grid, acc / len(us_k))
    return gam_k, us_k


@dataclass
class InjectivityProbeReport:
    lhs: float
    rhs_interior: float
    rhs_boundary: float
    ratio: float
    flagged: bool

    def to_dict(self):
        return {
            "lhs": self.lhs,
            "rhs_interior": self.rhs_interior,
            "rhs_boundary": self.rhs_boundary,
            "ratio": self.ratio,
            "flagged": self.flagged,
        }


def local_injectivity_probe(
    gamma0: ScalarField, us0, w, w_tilde, ceiling=1e6, c0=DEFAULT_C0
) -> InjectivityProbeReport:
    """Empirical stability constant of the modified map around v0.

    Compares ||w - w_tilde|| against the residual-plus-boundary distance of
    the two perturbed states, an empirical realization of the local stability
    estimate for the nonlinear problem. Ratios above ``ceiling`` are flagged.
    """
    system = assemble_triangular_system(gamma0, us0, c0=c0)
    layout = system.layout
    w = np.asarray(w, dtype=float)
    w_tilde = np.asarray(w_tilde, dtype=float)
    lhs = _block_l2(layout, w - w_tilde)
    if lhs == 0.0:
        return InjectivityProbeReport(0.0, 0.0, 0.0, 0.0, False)

    grid = layout.grid

    def fields(vec):
        gam = ScalarField(grid, gamma0.values + layout.block(vec, "dgamma"))
        us = [
            ScalarField(grid, us0[j].values + layout.block(vec, f"du{j + 1}"))
            for j in range(len(us0))
        ]
        return gam, us

    ga, ua = fields(w)
    gb, ub = fields(w_tilde)
    dF = modified_forward(system, ga, ua) - modified_forward(system, gb, ub)
    rhs_interior = float(np.linalg.norm(dF))

    diff = w - w_tilde
    acc = 0.0
    for name in layout.block_names:
        f = ScalarField(grid, layout.block(diff, name))
        tr = BoundaryData.from_field_trace(f)
        nt = normal_trace(f)
        acc += sum(float(np.sum(a**2)) / a.size for a in tr.sides.values())
        acc += sum(float(np.sum(a**2)) / a.size for a in nt.sides.values())
    rhs_boundary = float(np.sqrt(acc))

    rhs = np.hypot(rhs_interior, rhs_boundary)
    ratio = lhs / rhs if rhs > 0 else np.inf
    return InjectivityProbeReport(
        lhs=lhs,
        rhs_interior=rhs_interior,
        rhs_boundary=rhs_boundary,
        ratio=float(ratio),
        flagged=bool(ratio > ceiling),
    )
