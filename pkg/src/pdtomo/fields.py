"""Grids, scalar/vector fields, discrete differential operators, traces.

Everything lives on a uniform Cartesian grid over an axis-aligned box
(unit square/cube by default). Node values are stored flat in row-major
order; axis 0 is the outermost index. Fields are immutable: constructors
copy their input and mark the array read-only, so concurrent read-only
sharing is safe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, ParseError, PreconditionError

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "BoundaryData",
    "gradient",
    "normal_trace",
    "discrete_norms",
    "side_name",
    "read_field",
    "write_field",
    "read_field_bundle",
    "write_field_bundle",
]

MIN_NODES_PER_AXIS = 5


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid on an axis-aligned box.

    shape   -- node counts per axis (each >= 5)
    spacing -- mesh widths per axis (> 0)
    origin  -- coordinates of node (0, ..., 0)
    """

    shape: tuple
    spacing: tuple
    origin: tuple = None

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        spacing = tuple(float(h) for h in self.spacing)
        origin = self.origin
        if origin is None:
            origin = (0.0,) * len(shape)
        origin = tuple(float(x) for x in origin)
        if len(shape) not in (2, 3):
            raise PreconditionError(f"grid dimension must be 2 or 3, got {len(shape)}")
        if len(spacing) != len(shape) or len(origin) != len(shape):
            raise PreconditionError("shape, spacing and origin must share a length")
        if any(n < MIN_NODES_PER_AXIS for n in shape):
            raise PreconditionError(f"every axis needs >= {MIN_NODES_PER_AXIS} nodes, got {shape}")
        if any(h <= 0 for h in spacing):
            raise PreconditionError(f"spacings must be positive, got {spacing}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def unit(cls, n, dim=2):
        """n-per-axis grid on the unit square/cube, nodes on the boundary."""
        return cls((n,) * dim, (1.0 / (n - 1),) * dim)

    @property
    def dim(self):
        return len(self.shape)

    @property
    def node_count(self):
        return int(np.prod(self.shape))

    @property
    def extents(self):
        return tuple(
            (o, o + (n - 1) * h) for o, n, h in zip(self.origin, self.shape, self.spacing)
        )

    def axis_coords(self, k):
        return self.origin[k] + self.spacing[k] * np.arange(self.shape[k])

    def meshgrid(self):
        """Coordinate arrays of shape ``self.shape``, one per axis."""
        return np.meshgrid(*(self.axis_coords(k) for k in range(self.dim)), indexing="ij")

    def coords_flat(self):
        """(node_count, dim) array of node coordinates in row-major order."""
        return np.stack([x.ravel() for x in self.meshgrid()], axis=1)

    def boundary_mask(self):
        m = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            sl_lo = [slice(None)] * self.dim
            sl_lo[k] = 0
            sl_hi = [slice(None)] * self.dim
            sl_hi[k] = -1
            m[tuple(sl_lo)] = True
            m[tuple(sl_hi)] = True
        return m.ravel()

    def interior_mask(self, depth=1):
        """Nodes at least ``depth`` layers away from every face."""
        m = np.zeros(self.shape, dtype=bool)
        core = tuple(slice(depth, n - depth) for n in self.shape)
        m[core] = True
        return m.ravel()

    def face_indices(self, axis, high):
        """Flat indices of the face of nodes with extreme coordinate on ``axis``.

        The returned array is shaped like the face (the grid shape with
        ``axis`` removed), so face data can be treated as a lower-dimensional
        grid function. Corners/edges belong to every adjacent face.
        """
        idx = np.arange(self.node_count).reshape(self.shape)
        sl = [slice(None)] * self.dim
        sl[axis] = -1 if high else 0
        return idx[tuple(sl)]

    def sides(self):
        """(axis, high) pairs for all 2*dim faces, in a fixed order."""
        return [(k, hi) for k in range(self.dim) for hi in (False, True)]


def side_name(axis, high):
    return "xyz"[axis] + ("hi" if high else "lo")


class ScalarField:
    """One real value per grid node, flat row-major storage."""

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=float).ravel()
        if values.size != grid.node_count:
            raise PreconditionError(
                f"value count {values.size} != node count {grid.node_count}"
            )
        if not np.all(np.isfinite(values)):
            raise PreconditionError("field values must be finite")
        self.grid = grid
        self.values = _frozen(values)

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn(x, y[, z])`` at the nodes."""
        return cls(grid, fn(*grid.meshgrid()) + np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.node_count, float(value)))

    def as_grid_array(self):
        return self.values.reshape(self.grid.shape)

    def __add__(self, other):
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return ScalarField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__


class VectorField:
    """``dim`` real components per node, stored as an (node_count, dim) array."""

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.node_count, grid.dim):
            raise PreconditionError(
                f"vector values must have shape {(grid.node_count, grid.dim)}, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise PreconditionError("field values must be finite")
        self.grid = grid
        self.values = _frozen(values)

    def component(self, k):
        return ScalarField(self.grid, self.values[:, k])

    def magnitude(self):
        return ScalarField(self.grid, np.sqrt(np.sum(self.values**2, axis=1)))

    def __add__(self, other):
        _check_same_grid(self, other)
        return VectorField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return VectorField(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return VectorField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__


class BoundaryData:
    """Side-indexed boundary values: a Dirichlet or normal-derivative trace.

    ``sides`` maps ``side_name(axis, high)`` to an array shaped like that
    face. Corner nodes appear in each adjacent side with that side's value.
    """

    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"

    def __init__(self, grid: Grid, sides: dict, kind: str):
        if kind not in (self.DIRICHLET, self.NEUMANN):
            raise PreconditionError(f"unknown boundary data kind {kind!r}")
        self.grid = grid
        self.kind = kind
        self.sides = {}
        for axis, high in grid.sides():
            name = side_name(axis, high)
            if name not in sides:
                raise PreconditionError(f"missing boundary side {name}")
            face_shape = grid.face_indices(axis, high).shape
            arr = np.asarray(sides[name], dtype=float).reshape(face_shape)
            if not np.all(np.isfinite(arr)):
                raise PreconditionError(f"non-finite boundary values on side {name}")
            self.sides[name] = _frozen(arr)

    @classmethod
    def from_field_trace(cls, u: ScalarField):
        """Dirichlet trace of a grid function."""
        g = u.grid
        vals = u.values
        sides = {
            side_name(a, hi): vals[g.face_indices(a, hi)] for a, hi in g.sides()
        }
        return cls(g, sides, cls.DIRICHLET)

    @classmethod
    def from_function(cls, grid, fn, kind="dirichlet"):
        coords = grid.coords_flat()
        sides = {}
        for a, hi in grid.sides():
            idx = grid.face_indices(a, hi)
            pts = coords[idx.ravel()]
            sides[side_name(a, hi)] = fn(*pts.T).reshape(idx.shape) + np.zeros(idx.shape)
        return cls(grid, sides, kind)

    @classmethod
    def zero(cls, grid, kind="dirichlet"):
        sides = {
            side_name(a, hi): np.zeros(grid.face_indices(a, hi).shape)
            for a, hi in grid.sides()
        }
        return cls(grid, sides, kind)

    def side(self, axis, high):
        return self.sides[side_name(axis, high)]

    def node_values(self):
        """Per-boundary-node values as a flat dict ``index -> value``.

        Nodes shared by several faces (corners, 3D edges) report the average
        of the adjacent sides; such nodes are excluded from all tolerance
        guarantees.
        """
        acc = {}
        for a, hi in self.grid.sides():
            idx = self.grid.face_indices(a, hi).ravel()
            vals = self.sides[side_name(a, hi)].ravel()
            for i, v in zip(idx, vals):
                acc.setdefault(int(i), []).append(float(v))
        return {i: float(np.mean(vs)) for i, vs in acc.items()}

    def __sub__(self, other):
        if self.kind != other.kind or self.grid != other.grid:
            raise GridMismatch("boundary data are not compatible")
        sides = {k: self.sides[k] - other.sides[k] for k in self.sides}
        return BoundaryData(self.grid, sides, self.kind)


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatch("fields live on different grids")


def gradient(u: ScalarField) -> VectorField:
    """Discrete gradient: central differences inside, one-sided 3-point
    stencils on the faces. Second-order accurate everywhere and exact on
    affine (indeed quadratic, per axis) fields.
    """
    g = u.grid
    arr = u.as_grid_array()
    comps = np.gradient(arr, *g.spacing, edge_order=2)
    if g.dim == 1:
        comps = [comps]
    return VectorField(g, np.stack([c.ravel() for c in comps], axis=1))


def normal_trace(u: ScalarField) -> BoundaryData:
    """Outward normal derivative on each face via the one-sided 3-point
    stencil. At nodes shared by faces each side keeps its own face-normal
    value; ``node_values`` averages them."""
    g = u.grid
    arr = u.as_grid_array()
    h = g.spacing
    sides = {}
    for axis, high in g.sides():
        sl = [slice(None)] * g.dim

        def take(i):
            s = list(sl)
            s[axis] = i
            return arr[tuple(s)]

        if high:
            d = (3.0 * take(-1) - 4.0 * take(-2) + take(-3)) / (2.0 * h[axis])
        else:
            # outward normal is -e_axis on the low face
            d = (3.0 * take(0) - 4.0 * take(1) + take(2)) / (2.0 * h[axis])
        sides[side_name(axis, high)] = d
    return BoundaryData(g, sides, BoundaryData.NEUMANN)


def node_weights(grid: Grid):
    """Per-node cell volumes: each node owns the part of the box nearest to
    it, i.e. half cells at faces. They sum exactly to the box volume."""
    w = np.ones(())
    for k in range(grid.dim):
        wk = np.full(grid.shape[k], grid.spacing[k])
        wk[0] *= 0.5
        wk[-1] *= 0.5
        w = np.multiply.outer(w, wk)
    return w.ravel()


def discrete_norms(u: ScalarField):
    """(l2, h1, max) of a grid function.

    l2 uses the per-node cell volumes of ``node_weights``; h1 adds the l2
    norm of the discrete gradient; max is the plain max-abs nodal value.
    """
    w = node_weights(u.grid)
    l2sq = float(np.sum(w * u.values**2))
    gmag2 = np.sum(gradient(u).values ** 2, axis=1)
    h1sq = l2sq + float(np.sum(w * gmag2))
    return np.sqrt(l2sq), np.sqrt(h1sq), float(np.max(np.abs(u.values)))


# ---------------------------------------------------------------------------
# File formats.
#
# Scalar field CSV: a single header line
#   # grid dim=<d> shape=<n1,n2[,n3]> spacing=<h1,h2[,h3]>
# followed by one value per line in row-major node order. Values are written
# with repr so a write/read round trip is bit-identical.
# The JSON envelope bundles several named fields over one grid.
# ---------------------------------------------------------------------------


def _header_line(grid: Grid):
    shape = ",".join(str(n) for n in grid.shape)
    spacing = ",".join(repr(h) for h in grid.spacing)
    return f"# grid dim={grid.dim} shape={shape} spacing={spacing}"


def _parse_header(line: str) -> Grid:
    if not line.startswith("#"):
        raise ParseError("field file must start with a '# grid ...' header", offset=0)
    parts = line[1:].split()
    if not parts or parts[0] != "grid":
        raise ParseError("malformed field header", offset=1)
    kv = {}
    for p in parts[1:]:
        if "=" not in p:
            raise ParseError(f"malformed header token {p!r}", offset=line.find(p))
        k, v = p.split("=", 1)
        kv[k] = v
    try:
        dim = int(kv["dim"])
        shape = tuple(int(s) for s in kv["shape"].split(","))
        spacing = tuple(float(s) for s in kv["spacing"].split(","))
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad field header: {exc}", offset=0) from exc
    if len(shape) != dim or len(spacing) != dim:
        raise ParseError("header dim does not match shape/spacing", offset=0)
    return Grid(shape, spacing)


def write_field(path, u: ScalarField):
    with open(path, "w") as f:
        f.write(_header_line(u.grid) + "\n")
        for v in u.values:
            f.write(repr(float(v)) + "\n")


def read_field(path) -> ScalarField:
    with open(path) as f:
        header = f.readline().rstrip("\n")
        grid = _parse_header(header)
        try:
            values = np.array([float(line) for line in f if line.strip()], dtype=float)
        except ValueError as exc:
            raise ParseError(f"bad value in field file {path}: {exc}") from exc
    if values.size != grid.node_count:
        raise ParseError(
            f"field file {path} holds {values.size} values, expected {grid.node_count}"
        )
    return ScalarField(grid, values)


def write_field_bundle(path, grid: Grid, fields: dict):
    """JSON envelope with several named scalar fields on a shared grid."""
    for name, u in fields.items():
        if u.grid != grid:
            raise GridMismatch(f"field {name!r} is not on the bundle grid")
    doc = {
        "grid": {
            "dim": grid.dim,
            "shape": list(grid.shape),
            "spacing": list(grid.spacing),
            "origin": list(grid.origin),
        },
        "fields": {name: [float(v) for v in u.values] for name, u in sorted(fields.items())},
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def read_field_bundle(path):
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad field bundle {path}: {exc}", offset=exc.pos) from exc
    g = doc["grid"]
    grid = Grid(tuple(g["shape"]), tuple(g["spacing"]), tuple(g.get("origin") or ()) or None)
    return grid, {name: ScalarField(grid, vals) for name, vals in doc["fields"].items()}


def write_boundary_data(path, b: BoundaryData):
    doc = {
        "grid": {
            "dim": b.grid.dim,
            "shape": list(b.grid.shape),
            "spacing": list(b.grid.spacing),
            "origin": list(b.grid.origin),
        },
        "kind": b.kind,
        "sides": {
            name: [float(v) for v in arr.ravel()] for name, arr in sorted(b.sides.items())
        },
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def read_boundary_data(path) -> BoundaryData:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad boundary file {path}: {exc}", offset=exc.pos) from exc
    g = doc["grid"]
    grid = Grid(tuple(g["shape"]), tuple(g["spacing"]), tuple(g.get("origin") or ()) or None)
    return BoundaryData(grid, doc["sides"], doc["kind"])
