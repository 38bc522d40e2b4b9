"""Scripted experiments: stability sweeps and the ellipticity catalog.

``stability_sweep`` measures how a sinusoidal perturbation of the internal
data propagates to the reconstructed conductivity increment, contrasting a
well-posed measurement family (flat amplification across frequencies, no
derivative loss) with the orthogonal-gradient family whose shared null cone
costs one derivative (amplification growing with frequency). The J = 1
family is exercised through the same linearized machinery, not through a
hyperbolic solver.

``family_catalog`` sweeps the analytic ellipticity cases (parallel,
orthogonal, generic pairs; 3D pairs, which are never elliptic; 3D in-plane
triples, which are) and verifies every verdict and witness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError
from .fields import BoundaryData, Grid, ScalarField, node_weights
from .forward import synthesize_dataset
from .linearized import (
    BoundaryConditionSet,
    CauchyData,
    assemble_triangular_system,
    normal_system,
    recover_boundary_dgamma,
)
from .symbols import (
    FormFamily,
    check_ellipticity_point,
    quadratic_form,
)

__all__ = [
    "SweepSpec",
    "SweepResult",
    "stability_sweep",
    "CatalogEntry",
    "CatalogReport",
    "family_catalog",
    "FAMILIES",
]

FAMILIES = ("elliptic", "orthogonal-2d", "single-J1")


def _family_boundaries(grid, family):
    fx = BoundaryData.from_function(grid, lambda x, y: x)
    if family == "elliptic":
        return [fx, BoundaryData.from_function(grid, lambda x, y: (x + y) / np.sqrt(2.0))]
    if family == "orthogonal-2d":
        return [fx, BoundaryData.from_function(grid, lambda x, y: y)]
    if family == "single-J1":
        return [fx]
    raise PreconditionError(f"unknown sweep family {family!r}")


@dataclass
class SweepSpec:
    frequencies: list
    family: str = "elliptic"
    grid_size: int = 64
    noise: float = 0.0
    amplitude: float = 1.0
    seed: int = 0

    def __post_init__(self):
        freqs = [int(k) for k in self.frequencies]
        if not freqs or any(k < 1 for k in freqs):
            raise PreconditionError("frequencies must be integers >= 1")
        if sorted(freqs) != freqs:
            raise PreconditionError("frequencies must be sorted ascending")
        if self.family not in FAMILIES:
            raise PreconditionError(f"family must be one of {FAMILIES}")
        h = 1.0 / (self.grid_size - 1)
        if max(freqs) * np.pi * h > 1.0 + 1e-12:
            raise PreconditionError(
                f"frequency {max(freqs)} is unresolved on a {self.grid_size}^2 grid "
                "(requires k*pi*h <= 1)"
            )
        self.frequencies = freqs


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list  # (k, input l2, response l2, amplification)

    def amplification(self):
        return {k: a for k, _, _, a in self.rows}

    def to_dict(self):
        return {
            "family": self.spec.family,
            "grid_size": self.spec.grid_size,
            "noise": self.spec.noise,
            "seed": self.spec.seed,
            "rows": [
                {"k": int(k), "input_l2": i, "response_l2": r, "amplification": a}
                for k, i, r, a in self.rows
            ],
        }

    def csv_lines(self):
        out = ["k,input_l2,response_l2,amplification"]
        for k, i, r, a in self.rows:
            out.append(f"{k},{i!r},{r!r},{a!r}")
        return out


def stability_sweep(spec: SweepSpec) -> SweepResult:
    """Amplification table |dgamma_k| / |dH_k| over perturbation frequencies.

    The linearized normal system is frozen at gamma = 1 with the family's
    boundary conditions; each frequency perturbs every dH_j by the same
    sine mode with unchanged du Cauchy data (dgamma traces follow from the
    recovery identity), so the table isolates the interior response.
    """
    grid = Grid.unit(spec.grid_size)
    gamma0 = ScalarField.constant(grid, 1.0)
    bset = _family_boundaries(grid, spec.family)
    data0 = synthesize_dataset(gamma0, bset)
    system = assemble_triangular_system(gamma0, data0.u)
    layout = system.layout

    NS = None
    rng = np.random.default_rng(spec.seed)
    X, Y = grid.meshgrid()
    w = node_weights(grid)
    rows = []
    for k in spec.frequencies:
        mode = spec.amplitude * np.sin(k * np.pi * X) * np.sin(k * np.pi * Y)
        vals = mode.ravel().copy()
        if spec.noise:
            vals = vals + spec.noise * spec.amplitude * rng.standard_normal(grid.node_count)
        dH = [ScalarField(grid, vals) for _ in bset]

        entries = {}
        for j in range(len(bset)):
            entries[f"du{j + 1}"] = CauchyData.zero(grid)
        entries["dgamma"] = recover_boundary_dgamma(
            dH[0], data0.u[0], gamma0, CauchyData.zero(grid)
        )
        bc = BoundaryConditionSet(entries)
        if NS is None:
            NS = normal_system(system, bc)
        else:
            NS.set_boundary_data(bc)

        sol = NS.solve(dH)
        dgamma = layout.block(sol, "dgamma")
        resp = float(np.sqrt(np.sum(w * dgamma**2)))
        inp = float(np.sqrt(np.sum(w * vals**2)))
        rows.append((k, inp, resp, resp / inp if inp > 0 else 0.0))
    return SweepResult(spec=spec, rows=rows)


@dataclass
class CatalogEntry:
    name: str
    dim: int
    expected_elliptic: bool
    verdict_elliptic: bool
    margin: float
    witness_max_q: float | None = None

    @property
    def ok(self):
        if self.expected_elliptic != self.verdict_elliptic:
            return False
        if not self.expected_elliptic and self.witness_max_q is not None:
            return self.witness_max_q <= 1e-9
        return True

    def to_dict(self):
        return {
            "name": self.name,
            "dim": self.dim,
            "expected_elliptic": self.expected_elliptic,
            "verdict_elliptic": self.verdict_elliptic,
            "margin": self.margin,
            "witness_max_q": self.witness_max_q,
            "ok": self.ok,
        }


@dataclass
class CatalogReport:
    entries: list = field(default_factory=list)

    @property
    def all_match(self):
        return all(e.ok for e in self.entries)

    def to_dict(self):
        return {"all_match": self.all_match, "entries": [e.to_dict() for e in self.entries]}


def _unit2(theta):
    return np.array([np.cos(theta), np.sin(theta)])


def _entry(name, vectors, expected):
    fam = FormFamily(vectors=np.asarray(vectors, dtype=float))
    v = check_ellipticity_point(fam)
    wq = None
    if not v.elliptic and v.witness is not None:
        wq = float(max(abs(quadratic_form(f, v.witness)) for f in fam.vectors))
    return CatalogEntry(
        name=name,
        dim=fam.dim,
        expected_elliptic=expected,
        verdict_elliptic=v.elliptic,
        margin=v.margin,
        witness_max_q=wq,
    )


def family_catalog(seed=0, pair_draws_3d=100, generic_draws_2d=50, triple_draws_3d=25) -> CatalogReport:
    """Analytic ellipticity catalog with randomized instances.

    2D pairs are elliptic exactly when neither parallel nor orthogonal; 3D
    pairs never are (their common null direction is reported and verified to
    1e-9); in-plane 3D triples with both combination weights nonzero are.
    """
    rng = np.random.default_rng(seed)
    rep = CatalogReport()

    th = rng.uniform(0.0, 2.0 * np.pi)
    rep.entries.append(_entry("2d-parallel", [_unit2(th), _unit2(th + np.pi)], False))
    rep.entries.append(_entry("2d-orthogonal", [_unit2(th), _unit2(th + np.pi / 2)], False))
    rep.entries.append(_entry("2d-single", [_unit2(th)], False))
    rep.entries.append(_entry("3d-single", [[0.0, 0.0, 1.0]], False))

    count = 0
    while count < generic_draws_2d:
        a, b = rng.uniform(0.0, np.pi, size=2)
        d = a - b
        # stay away from the ambiguous parallel/orthogonal boundary
        if min(abs(np.sin(d)), abs(np.cos(d))) < 1e-3:
            continue
        rep.entries.append(_entry(f"2d-generic-{count}", [_unit2(a), _unit2(b)], True))
        count += 1

    for i in range(pair_draws_3d):
        f = rng.standard_normal((2, 3))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        rep.entries.append(_entry(f"3d-pair-{i}", f, False))

    for i in range(triple_draws_3d):
        f = rng.standard_normal((2, 3))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        while abs(f[0] @ f[1]) > 1.0 - 1e-6:
            f = rng.standard_normal((2, 3))
            f /= np.linalg.norm(f, axis=1, keepdims=True)
        alpha = rng.uniform(0.3, 1.7) * rng.choice([-1.0, 1.0])
        beta = rng.uniform(0.3, 1.7) * rng.choice([-1.0, 1.0])
        f3 = alpha * f[0] + beta * f[1]
        f3 /= np.linalg.norm(f3)
        rep.entries.append(_entry(f"3d-triple-{i}", np.vstack([f, f3]), True))

    # the canonical gradient triple for unit boundary fields
    e1, e2 = np.eye(3)[0], np.eye(3)[1]
    rep.entries.append(
        _entry("3d-triple-xy-sum", [e1, e2, (e1 + e2) / np.sqrt(2.0)], True)
    )
    return rep
