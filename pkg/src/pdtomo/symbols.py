"""Pointwise algebraic verdicts for families of power-density quadratic forms.

Each measurement direction fhat carries the quadratic form

    q(xi) = 2 (fhat . xi)^2 - |xi|^2,

whose null cone is the pair of 45-degree lines (2D) or the 45-degree cone
(3D) around fhat. The checks here decide, point by point:

* collective ellipticity -- do the null cones of the family intersect only
  at the origin (``check_ellipticity_point`` / ``check_ellipticity_field``);
* boundary covering -- is some q_j(nu) nonzero at each boundary node
  (``check_lopatinskii_boundary``);
* unique continuation -- do the tangential restrictions q_{j;N} share no
  nonzero zero (``check_ucp_point``), and globally, can the family be
  recombined so this holds for every (x, N) (``check_global_ucp``);
* root structure of tau -> q(xi' + tau N) (``classify_roots``).

Verdicts are computed by sphere sampling plus closed-form null-direction
seeds and local descent refinement; the seeds make the degenerate cases
exact instead of merely well-sampled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import (
    GradientFloorViolation,
    NonOrthogonalPair,
    NonUnitDirection,
    PreconditionError,
    RankDeficiency,
)
from .fields import Grid, VectorField, side_name
from .kernels import field_margin_scan, margin_scan

__all__ = [
    "FormFamily",
    "EllipticityVerdict",
    "FieldEllipticityReport",
    "UcpVerdict",
    "GlobalUcpReport",
    "RootClassification",
    "BoundaryCoveringReport",
    "quadratic_form",
    "unit_circle",
    "fibonacci_sphere",
    "default_sample_count",
    "check_ellipticity_point",
    "check_ellipticity_field",
    "check_lopatinskii_boundary",
    "check_ucp_point",
    "check_global_ucp",
    "classify_roots",
    "pair_null_witness_3d",
]

UNIT_TOL = 1e-12
DEFAULT_TOLERANCE = 1e-6
DEFAULT_SAMPLES = {2: 720, 3: 10_000}


def default_sample_count(dim):
    return DEFAULT_SAMPLES[dim]


def _require_unit(v, what="direction"):
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise NonUnitDirection(f"{what} must be a unit vector, |v| = {np.linalg.norm(v)!r}")
    return v


def quadratic_form(fhat, xi):
    """2 (fhat . xi)^2 - |xi|^2, homogeneous of degree 2 in xi.

    ``xi`` may be a single vector or an (m, dim) stack.
    """
    fhat = _require_unit(fhat, "fhat")
    xi = np.asarray(xi, dtype=float)
    dots = xi @ fhat
    return 2.0 * dots**2 - np.sum(xi**2, axis=-1)


def _forms_at(vectors, xi):
    """max_j |q_j(xi)| and the per-form values, no unit check."""
    dots = vectors @ xi
    q = 2.0 * dots**2 - float(xi @ xi)
    return q


def unit_circle(m):
    th = np.linspace(0.0, np.pi, m, endpoint=False)  # antipodal pairs are redundant
    return np.stack([np.cos(th), np.sin(th)], axis=1)


def fibonacci_sphere(m):
    i = np.arange(m) + 0.5
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / m
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def sample_directions(dim, m):
    return unit_circle(m) if dim == 2 else fibonacci_sphere(m)


class FormFamily:
    """Family of unit measurement directions, pointwise or field-valued.

    Either a single (J, dim) array of unit vectors, or per-node unit fields
    of shape (node_count, J, dim) attached to a grid.
    """

    def __init__(self, vectors=None, node_vectors=None, grid: Grid | None = None):
        if (vectors is None) == (node_vectors is None):
            raise PreconditionError("give exactly one of vectors / node_vectors")
        if vectors is not None:
            vectors = np.asarray(vectors, dtype=float)
            if vectors.ndim != 2 or vectors.shape[1] not in (2, 3):
                raise PreconditionError("vectors must have shape (J, dim), dim 2 or 3")
            norms = np.linalg.norm(vectors, axis=1)
            if np.max(np.abs(norms - 1.0)) > UNIT_TOL:
                raise NonUnitDirection("family directions must be unit vectors")
            self.vectors = vectors
            self.node_vectors = None
            self.grid = None
            self.dim = vectors.shape[1]
            self.J = vectors.shape[0]
        else:
            node_vectors = np.asarray(node_vectors, dtype=float)
            if grid is None or node_vectors.ndim != 3:
                raise PreconditionError("node_vectors requires a grid and shape (N, J, dim)")
            if node_vectors.shape[0] != grid.node_count or node_vectors.shape[2] != grid.dim:
                raise PreconditionError("node_vectors shape does not match the grid")
            norms = np.linalg.norm(node_vectors, axis=2)
            if np.max(np.abs(norms - 1.0)) > UNIT_TOL:
                raise NonUnitDirection("family directions must be unit at every node")
            self.vectors = None
            self.node_vectors = node_vectors
            self.grid = grid
            self.dim = grid.dim
            self.J = node_vectors.shape[1]
        if self.J < 1:
            raise PreconditionError("a form family needs J >= 1")

    @classmethod
    def from_directions(cls, vectors):
        """Pointwise family from (J, dim) vectors, normalized here."""
        vectors = np.asarray(vectors, dtype=float)
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise PreconditionError("zero vector cannot be normalized")
        return cls(vectors=vectors / norms)

    @classmethod
    def from_gradient_fields(cls, grads, c0=1e-3):
        """Field family from gradient fields F_j, normalized nodewise.

        Raises GradientFloorViolation if min_j min_x |F_j| < c0.
        """
        if not grads:
            raise PreconditionError("need at least one gradient field")
        grid = grads[0].grid
        arrs = []
        for g in grads:
            if not isinstance(g, VectorField) or g.grid != grid:
                raise PreconditionError("gradient fields must be VectorFields on one grid")
            mags = np.linalg.norm(g.values, axis=1)
            floor = float(np.min(mags))
            if floor < c0:
                raise GradientFloorViolation(
                    f"min |F_j| = {floor:.3e} below the floor c0 = {c0:.3e}"
                )
            arrs.append(g.values / mags[:, None])
        return cls(node_vectors=np.stack(arrs, axis=1), grid=grid)

    def at_node(self, i):
        if self.node_vectors is None:
            return self.vectors
        return self.node_vectors[i]

    def node_array(self):
        if self.node_vectors is not None:
            return self.node_vectors
        raise PreconditionError("pointwise family has no node array")


@dataclass
class EllipticityVerdict:
    elliptic: bool
    margin: float
    witness: np.ndarray | None = None

    def to_dict(self):
        return {
            "elliptic": bool(self.elliptic),
            "margin": float(self.margin),
            "witness": None if self.witness is None else [float(v) for v in self.witness],
        }


@dataclass
class FieldEllipticityReport:
    elliptic: bool
    margins: np.ndarray
    worst_node: int
    worst_margin: float
    witness: np.ndarray | None = None

    def to_dict(self):
        return {
            "elliptic": bool(self.elliptic),
            "worst_node": int(self.worst_node),
            "worst_margin": float(self.worst_margin),
            "witness": None if self.witness is None else [float(v) for v in self.witness],
        }


def _tangent_basis(n):
    """Orthonormal basis of the plane orthogonal to unit n."""
    n = np.asarray(n, dtype=float)
    if n.size == 2:
        return [np.array([-n[1], n[0]])]
    k = int(np.argmin(np.abs(n)))
    e = np.zeros(3)
    e[k] = 1.0
    t1 = np.cross(n, e)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return [t1, t2]


def _rotate2d(v, angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def _null_directions_2d(fhat):
    """The two null lines of q in 2D: fhat rotated by +-45 degrees."""
    return [_rotate2d(fhat, np.pi / 4), _rotate2d(fhat, -np.pi / 4)]


def pair_null_witness_3d(f1, f2):
    """A common unit zero of (q_1, q_2) in 3D, which always exists.

    With f1 . f2 >= 0 (flip f2 otherwise; the forms do not see the sign) and
    f3 a unit normal to both, xi = f1 + f2 + lambda f3 with
    lambda^2 = 2 f1.f2 + 2 (f1.f2)^2 annihilates both forms exactly.
    """
    f1 = _require_unit(f1, "f1")
    f2 = np.asarray(f2, dtype=float)
    if f1.size != 3:
        raise PreconditionError("pair witness construction is three-dimensional")
    if f1 @ f2 < 0:
        f2 = -f2
    c = float(f1 @ f2)
    cross = np.cross(f1, f2)
    ncross = np.linalg.norm(cross)
    if ncross < 1e-14:
        # parallel fields: any 45-degree direction off the shared axis
        t = _tangent_basis(f1)[0]
        xi = (f1 + t) / np.sqrt(2.0)
        return xi
    f3 = cross / ncross
    lam = np.sqrt(max(0.0, 2.0 * c + 2.0 * c * c))
    xi = f1 + f2 + lam * f3
    return xi / np.linalg.norm(xi)


def _analytic_seeds(vectors):
    """Exact null candidates harvested from the family's geometry."""
    J, dim = vectors.shape
    seeds = []
    if dim == 2:
        for j in range(J):
            seeds.extend(_null_directions_2d(vectors[j]))
    else:
        for j in range(J):
            # a point on the cone of q_j
            t = _tangent_basis(vectors[j])[0]
            seeds.append((vectors[j] + t) / np.sqrt(2.0))
        for j in range(J):
            for k in range(j + 1, J):
                seeds.append(pair_null_witness_3d(vectors[j], vectors[k]))
    return np.array(seeds)


def _refine_direction(vectors, seed, max_iter=120):
    """Local descent of xi -> max_j |q_j(xi/|xi|)| around a seed direction."""
    tangent = _tangent_basis(seed)

    def objective(s):
        xi = seed + sum(si * ti for si, ti in zip(s, tangent))
        xi = xi / np.linalg.norm(xi)
        return float(np.max(np.abs(_forms_at(vectors, xi))))

    x0 = np.zeros(len(tangent))
    res = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={"maxiter": max_iter, "xatol": 1e-12, "fatol": 1e-14, "initial_simplex": None},
    )
    xi = seed + sum(si * ti for si, ti in zip(res.x, tangent))
    xi = xi / np.linalg.norm(xi)
    return float(res.fun), xi


def check_ellipticity_point(
    family, tolerance=DEFAULT_TOLERANCE, samples=None, refine=True
) -> EllipticityVerdict:
    """Collective ellipticity of {q_j} at one point.

    Scans the unit sphere, adds the family's closed-form null candidates as
    seeds, refines the best candidates by local descent, and declares the
    family elliptic iff the refined margin min_xi max_j |q_j(xi)| exceeds
    ``tolerance``.
    """
    vectors = family.vectors if isinstance(family, FormFamily) else np.asarray(family, float)
    if vectors is None:
        raise PreconditionError("check_ellipticity_point needs a pointwise family")
    J, dim = vectors.shape
    if samples is None:
        samples = default_sample_count(dim)
    dirs = samples if isinstance(samples, np.ndarray) else sample_directions(dim, samples)

    scan_margin, scan_idx = margin_scan(vectors, dirs)
    candidates = [(scan_margin, dirs[scan_idx])]
    for seed in _analytic_seeds(vectors):
        candidates.append((float(np.max(np.abs(_forms_at(vectors, seed)))), seed))
    candidates.sort(key=lambda t: t[0])

    best_val, best_dir = candidates[0]
    # |grad of max_j q_j| <= 4 on the sphere, so the sampled minimum bounds
    # the true one within a mesh-width slack; descend only when the verdict
    # could actually change.
    mesh = np.pi / len(dirs) if dim == 2 else 2.0 / np.sqrt(len(dirs))
    decidable = best_val - 4.0 * mesh > tolerance or best_val < 0.1 * tolerance
    if refine and not decidable:
        for val, seed in candidates[: min(4, len(candidates))]:
            rv, rd = _refine_direction(vectors, seed)
            if rv < best_val:
                best_val, best_dir = rv, rd
    margin = max(best_val, 0.0)
    if margin > tolerance:
        return EllipticityVerdict(elliptic=True, margin=margin)
    return EllipticityVerdict(elliptic=False, margin=margin, witness=best_dir)


def check_ellipticity_field(
    family: FormFamily, tolerance=DEFAULT_TOLERANCE, samples=None
) -> FieldEllipticityReport:
    """Nodewise ellipticity over a whole grid; the global verdict is the
    conjunction and the per-node margin field is returned for inspection."""
    nv = family.node_array()
    n, J, dim = nv.shape
    if samples is None:
        samples = default_sample_count(dim)
    dirs = samples if isinstance(samples, np.ndarray) else sample_directions(dim, samples)

    margins, _ = field_margin_scan(nv, dirs)

    # closed-form seeds, vectorized over nodes
    seed_stacks = []
    if dim == 2:
        c, s = np.cos(np.pi / 4), np.sin(np.pi / 4)
        rot_p = np.array([[c, -s], [s, c]])
        rot_m = rot_p.T
        for j in range(J):
            seed_stacks.append(nv[:, j, :] @ rot_p.T)
            seed_stacks.append(nv[:, j, :] @ rot_m.T)
    else:
        for j in range(J):
            for k in range(j + 1, J):
                seed_stacks.append(
                    np.stack(
                        [pair_null_witness_3d(nv[i, j], nv[i, k]) for i in range(n)]
                    )
                )
    for seeds in seed_stacks:
        dots = np.einsum("njd,nd->nj", nv, seeds)
        q = np.abs(2.0 * dots**2 - 1.0)
        margins = np.minimum(margins, q.max(axis=1))

    worst = int(np.argmin(margins))
    verdict = check_ellipticity_point(
        FormFamily(vectors=nv[worst]), tolerance=tolerance, samples=dirs
    )
    margins[worst] = min(margins[worst], verdict.margin)
    elliptic = bool(np.all(margins > tolerance)) and verdict.elliptic
    return FieldEllipticityReport(
        elliptic=elliptic,
        margins=margins,
        worst_node=worst,
        worst_margin=float(margins[worst]),
        witness=None if verdict.elliptic else verdict.witness,
    )


@dataclass
class BoundaryCoveringReport:
    covered: bool
    sides: dict
    margins: dict

    def to_dict(self):
        return {
            "covered": bool(self.covered),
            "sides": {k: [bool(b) for b in v.ravel()] for k, v in sorted(self.sides.items())},
        }


def check_lopatinskii_boundary(
    family: FormFamily, grid: Grid | None = None, tolerance=DEFAULT_TOLERANCE
) -> BoundaryCoveringReport:
    """Reduced covering criterion for Dirichlet data: at a boundary node x
    with outward normal nu, the conditions cover the system iff
    max_j |q_j(x, nu)| > tolerance. Axis faces carry their own normals;
    corner nodes are judged once per adjacent face."""
    if grid is None:
        grid = family.grid
    if grid is None:
        raise PreconditionError("a grid is required for the boundary check")
    nv = family.node_array() if family.node_vectors is not None else None
    sides = {}
    margins = {}
    for axis, high in grid.sides():
        nu = np.zeros(grid.dim)
        nu[axis] = 1.0 if high else -1.0
        idx = grid.face_indices(axis, high)
        if nv is not None:
            vecs = nv[idx.ravel()]  # (m, J, dim)
            q = np.abs(2.0 * (vecs @ nu) ** 2 - 1.0)
            marg = q.max(axis=1).reshape(idx.shape)
        else:
            q = np.abs(_forms_at(family.vectors, nu))
            marg = np.full(idx.shape, float(q.max()))
        sides[side_name(axis, high)] = marg > tolerance
        margins[side_name(axis, high)] = marg
    covered = all(bool(np.all(v)) for v in sides.values())
    return BoundaryCoveringReport(covered=covered, sides=sides, margins=margins)


@dataclass
class UcpVerdict:
    holds: bool
    active_set: list
    deltas: np.ndarray
    witness_xi_prime: np.ndarray | None = None
    margin: float = 0.0
    diagnostic: str = ""

    def to_dict(self):
        return {
            "holds": bool(self.holds),
            "active_set": [int(j) for j in self.active_set],
            "deltas": [float(d) for d in self.deltas],
            "witness_xi_prime": None
            if self.witness_xi_prime is None
            else [float(v) for v in self.witness_xi_prime],
            "margin": float(self.margin),
            "diagnostic": self.diagnostic,
        }


def _delta_prime(vectors, N, xi_prime):
    """-1 + 2 ((fhat.N)^2 + (fhat.xi')^2) per form; the discriminant scale of
    tau -> q(xi' + tau N) and the unit-circle value of q_{j;N}."""
    return -1.0 + 2.0 * ((vectors @ N) ** 2 + (vectors @ xi_prime) ** 2)


def check_ucp_point(
    family, N, tolerance=DEFAULT_TOLERANCE, scan=64
) -> UcpVerdict:
    """Unique-continuation verdict for the family at normal direction N.

    Restricts to the active forms (those with q_j(N) != 0), then asks
    whether some tangential unit xi' annihilates all active restricted forms
    q_{j;N}. Candidate xi' are the closed-form circle zeros of each active
    form plus a coarse scan, so a common zero is found exactly when present.
    Active-form indices are reported 1-based.
    """
    vectors = family.vectors if isinstance(family, FormFamily) else np.asarray(family, float)
    N = _require_unit(N, "N")
    J, dim = vectors.shape
    qN = 2.0 * (vectors @ N) ** 2 - 1.0
    active = np.flatnonzero(np.abs(qN) > tolerance)
    tangent = _tangent_basis(N)

    if active.size == 0:
        xi0 = tangent[0]
        return UcpVerdict(
            holds=False,
            active_set=[],
            deltas=_delta_prime(vectors, N, xi0),
            witness_xi_prime=xi0,
            margin=0.0,
            diagnostic="N is characteristic for every form; the root analysis degenerates",
        )

    act = vectors[active]
    if dim == 2:
        t = tangent[0]
        deltas_all = _delta_prime(vectors, N, t)
        margin = float(np.max(np.abs(deltas_all[active])))
        holds = margin > tolerance
        return UcpVerdict(
            holds=holds,
            active_set=[int(j) + 1 for j in active],
            deltas=deltas_all,
            witness_xi_prime=None if holds else t,
            margin=margin,
        )

    t1, t2 = tangent
    a = act @ t1
    b = act @ t2
    c = 1.0 - 2.0 * (act @ N) ** 2
    # closed-form zeros of 2 (a cos + b sin)^2 = c on the tangential circle
    angles = list(np.linspace(0.0, np.pi, scan, endpoint=False))
    R = np.hypot(a, b)
    phi0 = np.arctan2(b, a)
    for j in range(active.size):
        if c[j] < 0.0 or R[j] ** 2 * 2.0 < c[j]:
            continue
        u = np.sqrt(c[j] / 2.0) / max(R[j], 1e-300)
        u = min(u, 1.0)
        for sgn in (+1.0, -1.0):
            base = np.arccos(sgn * u)
            angles.extend([phi0[j] + base, phi0[j] - base])

    best_margin, best_xi = np.inf, None
    for psi in angles:
        xi = np.cos(psi) * t1 + np.sin(psi) * t2
        vals = 2.0 * (act @ xi) ** 2 - c
        m = float(np.max(np.abs(vals)))
        if m < best_margin:
            best_margin, best_xi = m, xi
    holds = best_margin > tolerance
    return UcpVerdict(
        holds=holds,
        active_set=[int(j) + 1 for j in active],
        deltas=_delta_prime(vectors, N, best_xi),
        witness_xi_prime=None if holds else best_xi,
        margin=best_margin,
    )


@dataclass
class GlobalUcpReport:
    holds: bool
    mode: str
    failed: list = field(default_factory=list)
    undetermined: list = field(default_factory=list)
    checked: int = 0
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "holds": bool(self.holds),
            "mode": self.mode,
            "checked": int(self.checked),
            "failed": self.failed[:64],
            "undetermined": self.undetermined[:64],
        }


def _plane_form_coordinates(a, b):
    """Coefficient row of q for a unit direction a*e1 + b*e2 in the basis
    ((e1.xi)^2, (e1.xi)(e2.xi), (e2.xi)^2, |xi|^2)."""
    return np.array([2.0 * a * a, 4.0 * a * b, 2.0 * b * b, -1.0])


def check_global_ucp(
    family: FormFamily,
    tolerance=DEFAULT_TOLERANCE,
    normals=16,
    max_nodes=128,
    c_grid=64,
    seed=0,
) -> GlobalUcpReport:
    """Global unique-continuation criterion over a field family.

    2D: nodewise rank(F1, F2) = 2 and F1 . F2 != 0 (equivalently pointwise
    ellipticity). Rank failures raise RankDeficiency; dot-product failures
    are reported.

    3D: nodewise rank(F1, F2) = 2, then for sampled (node, N) pairs a search
    for three plane recombinations F_c = c e1 + s e2 (s = sqrt(1 - c^2), c on
    a ``c_grid``-point grid in (-1, 1)) that are admissible (|q_c(N)| above
    tolerance) and invertibly expressible through the given forms. A failed
    search is reported as undetermined, not false.
    """
    nv = family.node_array()
    n, J, dim = nv.shape

    if dim == 2:
        if J < 2:
            raise PreconditionError("the 2D criterion needs at least two functionals")
        f1, f2 = nv[:, 0, :], nv[:, 1, :]
        cross = f1[:, 0] * f2[:, 1] - f1[:, 1] * f2[:, 0]
        dots = np.sum(f1 * f2, axis=1)
        bad_rank = np.flatnonzero(np.abs(cross) <= tolerance)
        if bad_rank.size:
            raise RankDeficiency(
                f"rank(F1, F2) < 2 at node {int(bad_rank[0])}", node=int(bad_rank[0])
            )
        failed = [int(i) for i in np.flatnonzero(np.abs(dots) <= tolerance)]
        return GlobalUcpReport(
            holds=not failed,
            mode="corollary-2d",
            failed=failed,
            checked=n,
            detail={"dot": dots, "cross": cross},
        )

    if J < 3:
        return GlobalUcpReport(
            holds=False,
            mode="recombination-3d",
            undetermined=[(int(i), None) for i in range(min(n, 8))],
            checked=0,
            detail={"reason": "recombination needs three in-plane forms"},
        )

    rng = np.random.default_rng(seed)
    nodes = np.arange(n) if n <= max_nodes else rng.choice(n, size=max_nodes, replace=False)
    Ns = fibonacci_sphere(normals)
    cs = -1.0 + 2.0 * (np.arange(c_grid) + 0.5) / c_grid
    ss = np.sqrt(1.0 - cs**2)

    failed, undetermined = [], []
    checked = 0
    for i in nodes:
        f1, f2 = nv[i, 0], nv[i, 1]
        e1 = f1
        res = f2 - (f2 @ e1) * e1
        r = np.linalg.norm(res)
        if r <= tolerance:
            raise RankDeficiency(f"rank(F1, F2) < 2 at node {int(i)}", node=int(i))
        e2 = res / r
        ab = np.stack([nv[i] @ e1, nv[i] @ e2], axis=1)  # (J, 2)
        plane_resid = np.linalg.norm(nv[i] - ab[:, :1] * e1 - ab[:, 1:2] * e2, axis=1)
        if np.max(plane_resid) > 1e-9:
            undetermined.append((int(i), None))
            continue
        V = np.stack([_plane_form_coordinates(a, b) for a, b in ab])  # (J, 4)
        plane = np.stack([cs, ss], axis=1)  # candidates in (e1, e2) coordinates
        Fc = plane[:, :1] * e1 + plane[:, 1:2] * e2
        for N in Ns:
            checked += 1
            qn = 2.0 * (Fc @ N) ** 2 - 1.0
            admissible = np.flatnonzero(np.abs(qn) > tolerance)
            ok = False
            if admissible.size >= 3:
                order = admissible[np.argsort(-np.abs(qn[admissible]))]
                pick = order[:3]
                rows, good = [], True
                for c_idx in pick:
                    row, resid, *_ = np.linalg.lstsq(V.T, _plane_form_coordinates(*plane[c_idx]), rcond=None)
                    if np.linalg.norm(V.T @ row - _plane_form_coordinates(*plane[c_idx])) > 1e-8:
                        good = False
                        break
                    rows.append(row)
                if good and abs(np.linalg.det(np.stack(rows)[:, :3])) > 1e-10:
                    sub = check_ucp_point(Fc[pick], N, tolerance=tolerance)
                    ok = sub.holds
            if not ok:
                undetermined.append((int(i), [float(v) for v in N]))
    return GlobalUcpReport(
        holds=not failed and not undetermined,
        mode="recombination-3d",
        failed=failed,
        undetermined=undetermined,
        checked=checked,
    )


@dataclass
class RootClassification:
    roots: tuple
    satisfies_i: bool
    satisfies_ii: bool
    satisfies_iii: bool
    satisfies_iv: bool
    epsilon: float
    degenerate: bool
    leading_coeff: float
    discriminant: float
    delta_prime: float

    def to_dict(self):
        return {
            "roots": [[r.real, r.imag] for r in self.roots],
            "satisfies_i": self.satisfies_i,
            "satisfies_ii": self.satisfies_ii,
            "satisfies_iii": self.satisfies_iii,
            "satisfies_iv": self.satisfies_iv,
            "epsilon": self.epsilon,
            "degenerate": self.degenerate,
            "leading_coeff": self.leading_coeff,
            "discriminant": self.discriminant,
            "delta_prime": self.delta_prime,
        }


def classify_roots(fhat, N, xi_prime, epsilon=1e-3) -> RootClassification:
    """Root structure of the real quadratic tau -> q(xi' + tau N).

    The polynomial is
        (2 (f.N)^2 - 1) tau^2 + 4 (f.N)(f.xi') tau + 2 (f.xi')^2 - 1,
    with discriminant 4 * delta', delta' = -1 + 2((f.N)^2 + (f.xi')^2).
    Flags:
      i   -- at most simple real roots, at most double complex roots;
      ii  -- distinct roots separated by at least epsilon;
      iii -- non-real roots have |Im tau| >= epsilon;
      iv  -- all roots simple, non-real, with |Im tau| >= epsilon.
    """
    fhat = _require_unit(fhat, "fhat")
    N = _require_unit(N, "N")
    xi_prime = _require_unit(xi_prime, "xi_prime")
    if abs(float(N @ xi_prime)) > 1e-10:
        raise NonOrthogonalPair("xi_prime must be tangential: N . xi_prime = 0")

    alpha = float(fhat @ N)
    beta = float(fhat @ xi_prime)
    a = 2.0 * alpha**2 - 1.0
    b = 4.0 * alpha * beta
    c = 2.0 * beta**2 - 1.0
    delta_prime = -1.0 + 2.0 * (alpha**2 + beta**2)
    disc = b * b - 4.0 * a * c  # equals 4 * delta_prime

    degenerate = abs(a) < 1e-12
    if degenerate:
        roots = (-c / b,) if abs(b) > 1e-12 else ()
        roots = tuple(complex(r) for r in roots)
    else:
        roots = tuple(np.roots([a, b, c]).astype(complex))

    scale = 1.0 + max((abs(r) for r in roots), default=0.0)
    fp_tol = 1e-7 * scale
    re_roots = [r for r in roots if abs(r.imag) <= fp_tol]
    im_roots = [r for r in roots if abs(r.imag) > fp_tol]
    double = len(roots) == 2 and abs(roots[0] - roots[1]) <= fp_tol

    sat_i = not (double and len(re_roots) == 2)
    if len(roots) == 2 and not double:
        sat_ii = abs(roots[0] - roots[1]) >= epsilon
    else:
        sat_ii = True
    sat_iii = all(abs(r.imag) >= epsilon for r in im_roots)
    sat_iv = (
        len(roots) > 0
        and not double
        and not re_roots
        and all(abs(r.imag) >= epsilon for r in im_roots)
    )
    return RootClassification(
        roots=roots,
        satisfies_i=sat_i,
        satisfies_ii=sat_ii,
        satisfies_iii=sat_iii,
        satisfies_iv=sat_iv,
        epsilon=epsilon,
        degenerate=degenerate,
        leading_coeff=a,
        discriminant=disc,
        delta_prime=delta_prime,
    )
