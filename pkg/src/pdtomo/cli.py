"""Command-line entry point: job parsing, dispatch, artifact writing.

Subcommands: forward, check, linearize, reconstruct, sweep, catalog. Each
consumes a JSON job file (paths are resolved relative to the job file) plus
a few flag overrides, writes its artifacts into the job's output directory,
and exits with 0 on success, 2 on parse errors, 3 on precondition
violations, 4 on solver failures, and 5 when a check verdict is negative.
All errors are also emitted as one JSON object on stderr. Reports avoid
timestamps and unordered containers, so identical jobs and seeds produce
byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import ParseError, PdtomoError, PreconditionError, SolverError
from .expressions import parse_expression
from .fields import (
    BoundaryData,
    Grid,
    ScalarField,
    read_boundary_data,
    read_field,
    write_boundary_data,
    write_field,
)
from .forward import ConductivityProblem, solve_conductivity, synthesize_dataset
from .linearized import (
    BoundaryConditionSet,
    CauchyData,
    assemble_eliminated_system,
    assemble_first_order_linearization,
    assemble_triangular_system,
    normal_system,
)
from .reconstruction import ReconstructionConfig, fixed_point_reconstruct
from .symbols import (
    FormFamily,
    check_ellipticity_field,
    check_ellipticity_point,
    check_global_ucp,
    check_lopatinskii_boundary,
    check_ucp_point,
    classify_roots,
)
from .experiments import SweepSpec, family_catalog, stability_sweep

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_PRECONDITION = 3
EXIT_SOLVER = 4
EXIT_VERDICT = 5


class VerdictFailure(PdtomoError):
    """A check ran fine and the verdict is negative."""


def _load_job(path):
    try:
        with open(path) as f:
            return json.load(f), os.path.dirname(os.path.abspath(path))
    except OSError as exc:
        raise ParseError(f"cannot read job file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed job file {path}: {exc}", offset=exc.pos) from exc


def _grid_from_job(job) -> Grid:
    spec = job.get("grid")
    if spec is None:
        raise ParseError("job needs a 'grid' entry")
    if "n" in spec:
        return Grid.unit(int(spec["n"]), dim=int(spec.get("dim", 2)))
    return Grid(tuple(spec["shape"]), tuple(spec["spacing"]), tuple(spec.get("origin", [])) or None)


def _scalar_from_spec(spec, grid, base) -> ScalarField:
    if isinstance(spec, dict) and "path" in spec:
        f = read_field(os.path.join(base, spec["path"]))
        if f.grid != grid:
            raise PreconditionError(f"field {spec['path']} is not on the job grid")
        return f
    if isinstance(spec, (int, float)):
        return ScalarField.constant(grid, float(spec))
    if isinstance(spec, str):
        return ScalarField.from_function(grid, parse_expression(spec))
    raise ParseError(f"cannot interpret field spec {spec!r}")


def _boundary_from_spec(spec, grid, base, kind=BoundaryData.DIRICHLET) -> BoundaryData:
    if isinstance(spec, dict) and "path" in spec:
        b = read_boundary_data(os.path.join(base, spec["path"]))
        if b.grid != grid:
            raise PreconditionError(f"boundary {spec['path']} is not on the job grid")
        return b
    if isinstance(spec, str):
        return BoundaryData.from_function(grid, parse_expression(spec), kind)
    raise ParseError(f"cannot interpret boundary spec {spec!r}")


def _outdir(job, base):
    out = os.path.join(base, job.get("output_dir", "."))
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")


def _write_csv(path, lines):
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def cmd_forward(job, base, args):
    grid = _grid_from_job(job)
    gamma = _scalar_from_spec(job["gamma"], grid, base)
    boundaries = [_boundary_from_spec(s, grid, base) for s in job["boundary"]]
    sources = [
        None if s is None else _scalar_from_spec(s, grid, base)
        for s in job.get("sources", [None] * len(boundaries))
    ]
    data = synthesize_dataset(
        gamma, boundaries, sources=sources, c0=float(job.get("c0", 1e-3))
    )
    out = _outdir(job, base)
    for j in range(len(boundaries)):
        write_field(os.path.join(out, f"u_{j + 1}.csv"), data.u[j])
        write_field(os.path.join(out, f"H_{j + 1}.csv"), data.H[j])
        write_boundary_data(os.path.join(out, f"g_{j + 1}.json"), data.g[j])
    _write_json(
        os.path.join(out, "forward_report.json"),
        {
            "functionals": len(boundaries),
            "min_gradient": data.min_gradient,
            "grid": {"shape": list(grid.shape), "spacing": list(grid.spacing)},
        },
    )
    return EXIT_OK


def _family_from_job(job, base):
    if "vectors" in job:
        return FormFamily(vectors=np.asarray(job["vectors"], dtype=float)), None
    grid = _grid_from_job(job)
    gamma = _scalar_from_spec(job["gamma"], grid, base)
    boundaries = [_boundary_from_spec(s, grid, base) for s in job["boundary"]]
    data = synthesize_dataset(gamma, boundaries, c0=float(job.get("c0", 1e-3)))
    from .fields import gradient

    fam = FormFamily.from_gradient_fields(
        [gradient(u) for u in data.u], c0=float(job.get("c0", 1e-3))
    )
    return fam, grid


def cmd_check(job, base, args):
    mode = args.mode or job.get("mode")
    tolerance = args.tolerance if args.tolerance is not None else float(job.get("tolerance", 1e-6))
    out = _outdir(job, base)

    if mode == "roots":
        cls = classify_roots(
            np.asarray(job["fhat"], dtype=float),
            np.asarray(job["normal"], dtype=float),
            np.asarray(job["tangential"], dtype=float),
            epsilon=float(job.get("epsilon", 1e-3)),
        )
        report = cls.to_dict()
        ok = cls.satisfies_i and cls.satisfies_ii and cls.satisfies_iii
    elif mode == "ellipticity":
        fam, grid = _family_from_job(job, base)
        if fam.node_vectors is None:
            samples = args.sphere_samples or job.get("sphere_samples")
            verdict = check_ellipticity_point(
                fam, tolerance=tolerance, samples=int(samples) if samples else None
            )
            report = verdict.to_dict()
            ok = verdict.elliptic
        else:
            rep = check_ellipticity_field(fam, tolerance=tolerance)
            report = rep.to_dict()
            ok = rep.elliptic
            write_field(
                os.path.join(out, "ellipticity_margin.csv"),
                ScalarField(grid, rep.margins),
            )
    elif mode == "lopatinskii":
        fam, grid = _family_from_job(job, base)
        rep = check_lopatinskii_boundary(fam, grid)
        report = rep.to_dict()
        ok = rep.covered
    elif mode == "ucp":
        fam, grid = _family_from_job(job, base)
        if fam.node_vectors is None:
            verdict = check_ucp_point(
                fam, np.asarray(job["normal"], dtype=float), tolerance=tolerance
            )
            report = verdict.to_dict()
            ok = verdict.holds
        else:
            rep = check_global_ucp(fam, tolerance=tolerance, seed=int(job.get("seed", 0)))
            report = rep.to_dict()
            ok = rep.holds
    else:
        raise ParseError(f"unknown check mode {mode!r}")

    report = {"mode": mode, "tolerance": tolerance, **report}
    _write_json(os.path.join(out, "check_report.json"), report)
    if not ok:
        raise VerdictFailure(f"check mode {mode}: negative verdict (see check_report.json)")
    return EXIT_OK


_SYSTEMS = {
    "first": lambda gamma, us, c0: assemble_first_order_linearization(gamma, us, c0=c0),
    "eliminated": lambda gamma, us, c0: assemble_eliminated_system(gamma, us, "first", c0=c0),
    "eliminated2": lambda gamma, us, c0: assemble_eliminated_system(gamma, us, "second", c0=c0),
    "triangular": lambda gamma, us, c0: assemble_triangular_system(gamma, us, c0=c0),
}


def cmd_linearize(job, base, args):
    grid = _grid_from_job(job)
    gamma = _scalar_from_spec(job["gamma"], grid, base)
    boundaries = [_boundary_from_spec(s, grid, base) for s in job["boundary"]]
    c0 = float(job.get("c0", 1e-3))
    system_name = args.system or job.get("system", "triangular")
    if system_name not in _SYSTEMS:
        raise ParseError(f"unknown system {system_name!r}")
    data = synthesize_dataset(gamma, boundaries, c0=c0)
    A = _SYSTEMS[system_name](gamma, data.u, c0)
    out = _outdir(job, base)

    coo = A.matrix.tocoo()
    lines = [f"% {A.shape[0]} {A.shape[1]} {coo.nnz}"]
    order = np.lexsort((coo.col, coo.row))
    for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        lines.append(f"{r} {c} {v!r}")
    _write_csv(os.path.join(out, f"system_{system_name}.coo"), lines)

    dH = [
        _scalar_from_spec(s, grid, base)
        for s in job.get("dH", ["0"] * 0)
    ]
    report = {
        "system": system_name,
        "rows": int(A.shape[0]),
        "cols": int(A.shape[1]),
        "nnz": int(coo.nnz),
        "blocks": [
            {"tag": rb.tag, "index": list(rb.index), "rows": int(rb.stop - rb.start), "scale": rb.scale}
            for rb in A.row_blocks
        ],
    }
    bc_kind = args.bc or job.get("bc", "dirichlet")
    if dH:
        rhs = A.rhs(dH)
        _write_csv(
            os.path.join(out, "rhs.csv"),
            ["value"] + [repr(float(v)) for v in rhs],
        )
        if bc_kind == "cauchy":
            NS = normal_system(A, BoundaryConditionSet.cauchy_zero(A.layout))
            sol = NS.solve(dH)
            for name in A.layout.block_names:
                write_field(
                    os.path.join(out, f"solution_{name}.csv"),
                    ScalarField(grid, A.layout.block(sol, name)),
                )
            report["solved"] = True
    _write_json(os.path.join(out, "linearize_report.json"), report)
    return EXIT_OK


def cmd_reconstruct(job, base, args):
    grid = _grid_from_job(job)
    H = [_scalar_from_spec(s, grid, base) for s in job["H"]]
    g = [
        _boundary_from_spec(s, grid, base, kind=BoundaryData.NEUMANN)
        for s in job["g"]
    ]
    dirichlet = [_boundary_from_spec(s, grid, base) for s in job["dirichlet"]]
    guess = _scalar_from_spec(job["gamma_guess"], grid, base)
    cfg = ReconstructionConfig(**job.get("config", {}))
    report = fixed_point_reconstruct(H, g, guess, dirichlet, cfg)
    out = _outdir(job, base)
    write_field(os.path.join(out, "gamma_reconstructed.csv"), report.gamma)
    for j, u in enumerate(report.u):
        write_field(os.path.join(out, f"u_rec_{j + 1}.csv"), u)
    lines = ["iterate,increment,residual,data_misfit,boundary_misfit"]
    for i in range(report.iterate_count):
        lines.append(
            f"{i},{report.increments[i]!r},{report.residuals[i]!r},"
            f"{report.data_misfits[i]!r},{report.boundary_misfits[i]!r}"
        )
    _write_csv(os.path.join(out, "iterates.csv"), lines)
    _write_json(os.path.join(out, "reconstruction_report.json"), report.to_dict())
    return EXIT_OK


def cmd_sweep(job, base, args):
    seed = args.seed if args.seed is not None else int(job.get("seed", 0))
    spec = SweepSpec(
        frequencies=job.get("frequencies", [2, 4, 8, 16]),
        family=job.get("family", "elliptic"),
        grid_size=int(job.get("grid_size", 64)),
        noise=float(job.get("noise", 0.0)),
        amplitude=float(job.get("amplitude", 1.0)),
        seed=seed,
    )
    res = stability_sweep(spec)
    out = _outdir(job, base)
    _write_csv(os.path.join(out, f"sweep_{spec.family}.csv"), res.csv_lines())
    _write_json(os.path.join(out, "sweep_report.json"), res.to_dict())
    return EXIT_OK


def cmd_catalog(job, base, args):
    seed = args.seed if args.seed is not None else int(job.get("seed", 0))
    rep = family_catalog(seed=seed)
    out = _outdir(job, base)
    lines = ["name,dim,expected_elliptic,verdict_elliptic,ok"]
    for e in rep.entries:
        lines.append(f"{e.name},{e.dim},{e.expected_elliptic},{e.verdict_elliptic},{e.ok}")
    _write_csv(os.path.join(out, "catalog.csv"), lines)
    _write_json(os.path.join(out, "catalog_report.json"), rep.to_dict())
    if not rep.all_match:
        raise VerdictFailure("catalog verdicts disagree with the analytic cases")
    return EXIT_OK


_COMMANDS = {
    "forward": cmd_forward,
    "check": cmd_check,
    "linearize": cmd_linearize,
    "reconstruct": cmd_reconstruct,
    "sweep": cmd_sweep,
    "catalog": cmd_catalog,
}


def build_parser():
    p = argparse.ArgumentParser(
        prog="pdtomo",
        description="Power-density tomography toolkit: forward synthesis, symbol "
        "checks, linearized systems, reconstruction, experiments.",
    )
    p.add_argument("--version", action="version", version=f"pdtomo {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_job=True):
        sp = sub.add_parser(name, help=help_text)
        if needs_job:
            sp.add_argument("job", help="path to the JSON job description")
        else:
            sp.add_argument("job", nargs="?", help="optional JSON job description")
        return sp

    add("forward", "solve the conductivity problems and synthesize H_j, g_j")

    sp = add("check", "algebraic verdicts on a measurement family")
    sp.add_argument("--mode", choices=["ellipticity", "lopatinskii", "ucp", "roots"])
    sp.add_argument("--tolerance", type=float)
    sp.add_argument("--sphere-samples", type=int, dest="sphere_samples")

    sp = add("linearize", "assemble a linearized system, export it, optionally solve")
    sp.add_argument("--system", choices=sorted(_SYSTEMS))
    sp.add_argument("--bc", choices=["dirichlet", "cauchy"])

    add("reconstruct", "fixed-point reconstruction from H_j and g_j data")

    sp = add("sweep", "stability sweep over perturbation frequencies", needs_job=False)
    sp.add_argument("--seed", type=int)

    sp = add("catalog", "run the analytic ellipticity catalog", needs_job=False)
    sp.add_argument("--seed", type=int)

    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.job:
        job, base = _load_job(args.job)
    else:
        job, base = {}, os.getcwd()
    return _COMMANDS[args.command](job, base, args)


def main(argv=None) -> int:
    try:
        return run(argv)
    except ParseError as exc:
        _emit_error("parse", exc)
        return EXIT_PARSE
    except VerdictFailure as exc:
        _emit_error("verdict", exc)
        return EXIT_VERDICT
    except SolverError as exc:
        _emit_error("solver", exc)
        return EXIT_SOLVER
    except PreconditionError as exc:
        _emit_error("precondition", exc)
        return EXIT_PRECONDITION
    except PdtomoError as exc:
        _emit_error("precondition", exc)
        return EXIT_PRECONDITION


def _emit_error(family, exc):
    payload = {"error": family, "type": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "offset", None) is not None:
        payload["offset"] = exc.offset
    if getattr(exc, "nodes", None):
        payload["nodes"] = [list(n) for n in exc.nodes[:32]]
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
