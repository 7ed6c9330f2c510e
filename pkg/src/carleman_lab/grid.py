"""Space-time lattice, finite-difference stencils and trapezoid quadrature.

Arrays on the lattice are indexed ``[time, x1, (x2)]`` and include boundary
nodes. Boundary traces are indexed ``[time, node]`` over the nodes of the
observed faces (face corners excluded, see :class:`TraceLayout`).
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Domain, ObservationBoundary, face_name, sign_function

REGIONS = ("Q", "sigma0", "terminal", "initial")


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    domain: Domain
    nx: tuple[int, ...]
    nt: int
    T: float
    h: float
    dt: float

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.nx)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nt + 1,) + self.spatial_shape

    @property
    def interior_shape(self) -> tuple[int, ...]:
        return tuple(n - 1 for n in self.nx)

    @property
    def n_interior(self) -> int:
        return int(np.prod(self.interior_shape))

    @property
    def interior(self) -> tuple[slice, ...]:
        return (slice(1, -1),) * self.dim

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    @property
    def axes(self) -> list[np.ndarray]:
        return [
            np.linspace(lo, hi, n + 1)
            for lo, hi, n in zip(self.domain.lower, self.domain.upper, self.nx)
        ]

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``spatial_shape + (dim,)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def spacetime(self):
        """``(x, t)`` broadcastable to ``shape`` (x has a trailing coordinate axis)."""
        x = self.points()[None]
        t = self.times.reshape((-1,) + (1,) * self.dim)
        return x, t

    def sample(self, fn) -> np.ndarray:
        """Evaluate ``fn(x1, [x2,] t)`` on the full lattice."""
        x, t = self.spacetime()
        coords = [x[..., i] for i in range(self.dim)]
        return np.broadcast_to(fn(*coords, t), self.shape).astype(float)

    def sample_space(self, fn) -> np.ndarray:
        x = self.points()
        return np.broadcast_to(fn(*[x[..., i] for i in range(self.dim)]), self.spatial_shape).astype(float)

    def time_weights(self) -> np.ndarray:
        return _trapezoid_weights(self.nt, self.dt)

    def space_weights(self) -> np.ndarray:
        w = np.ones(())
        for n in self.nx:
            w = np.multiply.outer(w, _trapezoid_weights(n, self.h))
        return w

    def with_time(self, T: float, cfl: float) -> "Grid":
        return build_grid(self.domain, self.nx, T, cfl)


def _trapezoid_weights(n: int, step: float) -> np.ndarray:
    w = np.full(n + 1, step)
    w[0] = w[-1] = 0.5 * step
    return w


def build_grid(domain: Domain, nx, T: float, cfl: float = 0.5) -> Grid:
    """Uniform lattice with square cells and ``dt = T / ceil(T / (cfl h))``."""
    if np.ndim(nx) == 0:
        h = float(domain.sides[0]) / int(nx)
        counts = []
        for side in domain.sides:
            n = side / h
            if abs(n - round(n)) > 1e-9 * max(n, 1.0):
                raise GridError(f"side {side:g} is not a whole number of cells of size {h:g}")
            counts.append(int(round(n)))
        nx = tuple(counts)
    else:
        nx = tuple(int(n) for n in nx)
        if len(nx) != domain.dim:
            raise GridError(f"nx needs {domain.dim} entries, got {len(nx)}")
        steps = domain.sides / np.array(nx)
        if not np.allclose(steps, steps[0], rtol=1e-12, atol=0):
            raise GridError(f"cells must be square, got steps {tuple(steps)}")
        h = float(steps[0])
    if min(nx) < 4:
        raise GridError(f"need at least 4 cells per axis, got {nx}")
    if not T > 0:
        raise GridError(f"final time must be positive, got {T}")
    if not 0 < cfl <= 1.0 / math.sqrt(domain.dim) + 1e-12:
        raise GridError(f"cfl={cfl:g} violates 0 < cfl <= 1/sqrt({domain.dim})")
    nt = max(math.ceil(T / (cfl * h) - 1e-9), 3)
    return Grid(domain, nx, nt, float(T), h, float(T) / nt)


def refine(grid: Grid, factor: int = 2) -> Grid:
    """Same domain and ``T`` with ``factor`` times more cells and steps."""
    nx = tuple(n * factor for n in grid.nx)
    return Grid(grid.domain, nx, grid.nt * factor, grid.T, grid.h / factor, grid.T / (grid.nt * factor))


def restrict(values: np.ndarray, factor: int = 2, *, time: bool = True, space_axes: int | None = None) -> np.ndarray:
    """Inject a fine-lattice array onto the lattice ``factor`` times coarser."""
    values = np.asarray(values)
    nd = values.ndim - (1 if time else 0) if space_axes is None else space_axes
    index = ((slice(None, None, factor),) if time else ()) + (slice(None, None, factor),) * nd
    return values[index]


# ---------------------------------------------------------------- derivatives


@dataclass(frozen=True)
class DerivativeJet:
    dt: np.ndarray
    dtt: np.ndarray
    grad: np.ndarray  # trailing axis: spatial component
    lap: np.ndarray


def second_difference(values: np.ndarray, step: float, axis: int) -> np.ndarray:
    """Central second difference; one-sided four-point stencil at both ends."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    out = np.empty_like(v)
    out[1:-1] = v[2:] - 2.0 * v[1:-1] + v[:-2]
    out[0] = 2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]
    out[-1] = 2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]
    return np.moveaxis(out / step**2, 0, axis)


def gradient(values: np.ndarray, grid: Grid, time_axis: bool = True) -> np.ndarray:
    off = 1 if time_axis else 0
    comps = [np.gradient(values, grid.h, axis=off + i, edge_order=2) for i in range(grid.dim)]
    return np.stack(comps, axis=-1)


def laplacian(values: np.ndarray, grid: Grid, time_axis: bool = True) -> np.ndarray:
    off = 1 if time_axis else 0
    return sum(second_difference(values, grid.h, off + i) for i in range(grid.dim))


def discrete_derivatives(values, grid: Grid) -> DerivativeJet:
    """Second-order derivatives of a space-time array.

    Central stencils inside, one-sided second-order stencils at ``t = 0``,
    ``t = T`` and on the spatial boundary.
    """
    v = np.asarray(getattr(values, "values", values), dtype=float)
    if v.shape != grid.shape:
        raise GridError(f"array shape {v.shape} does not match grid {grid.shape}")
    return DerivativeJet(
        dt=np.gradient(v, grid.dt, axis=0, edge_order=2),
        dtt=second_difference(v, grid.dt, 0),
        grad=gradient(v, grid),
        lap=laplacian(v, grid),
    )


def time_derivative(values: np.ndarray, dt: float) -> np.ndarray:
    return np.gradient(np.asarray(values, dtype=float), dt, axis=0, edge_order=2)


def time_derivative_matrix(nt: int, dt: float) -> np.ndarray:
    """Dense ``(nt+1, nt+1)`` matrix of :func:`time_derivative`."""
    return time_derivative(np.eye(nt + 1), dt)


# ---------------------------------------------------------------- boundary traces


@dataclass(frozen=True)
class TraceLayout:
    """Nodes of the observed boundary.

    Corner nodes are left out: they carry zero trapezoid weight for any field
    vanishing on both adjacent faces, and no corner normal is ever needed.
    Nodes are kept where the pointwise sign test ``(x - x0) . nu >= 0`` holds.
    """

    node_index: np.ndarray  # (m, dim) spatial multi-indices
    face: np.ndarray  # (m,) face names
    axis: np.ndarray  # (m,)
    side: np.ndarray  # (m,)
    normal: np.ndarray  # (m, dim)
    arclength: np.ndarray  # (m,) tangential coordinate (0 for 1-D)
    weights: np.ndarray  # (m,) quadrature weights along the boundary

    @property
    def size(self) -> int:
        return len(self.face)

    def points(self, grid: Grid) -> np.ndarray:
        return grid.points()[tuple(self.node_index.T)]


def trace_layout(grid: Grid, boundary: ObservationBoundary) -> TraceLayout:
    idx, faces, axes, sides, normals, arcs, weights = [], [], [], [], [], [], []
    pts = grid.points()
    for face in boundary.observed:
        a, side = face.axis, face.side
        b = grid.nx[a] if side else 0
        if grid.dim == 1:
            candidates = [(b,)]
            tangential = [0.0]
            w = [1.0]
        else:
            o = 1 - a
            candidates = []
            for j in range(1, grid.nx[o]):
                ij = [0, 0]
                ij[a], ij[o] = b, j
                candidates.append(tuple(ij))
            tangential = [grid.axes[o][j] for j in range(1, grid.nx[o])]
            w = [grid.h] * len(candidates)
        for ij, tau, wt in zip(candidates, tangential, w):
            if boundary.x0 is not None and sign_function(pts[ij], boundary.x0, face.normal) < 0:
                continue
            idx.append(ij)
            faces.append(face_name(a, side))
            axes.append(a)
            sides.append(side)
            normals.append(face.normal)
            arcs.append(tau)
            weights.append(wt)
    return TraceLayout(
        node_index=np.array(idx, dtype=int).reshape(-1, grid.dim),
        face=np.array(faces, dtype=object),
        axis=np.array(axes, dtype=int),
        side=np.array(sides, dtype=int),
        normal=np.array(normals, dtype=float).reshape(-1, grid.dim),
        arclength=np.array(arcs, dtype=float),
        weights=np.array(weights, dtype=float),
    )


def _inward(ij, axis: int, side: int, k: int) -> tuple[int, ...]:
    out = list(ij)
    out[axis] += -k if side else k
    return tuple(out)


def normal_derivative(values: np.ndarray, grid: Grid, layout: TraceLayout) -> np.ndarray:
    """One-sided second-order ``grad u . nu`` at the layout nodes.

    ``values`` is a space-time array; the result has shape ``(nt+1, m)``.
    """
    v = np.asarray(values, dtype=float)
    out = np.empty((v.shape[0], layout.size))
    for k, (ij, a, side) in enumerate(zip(layout.node_index, layout.axis, layout.side)):
        ij = tuple(ij)
        u0 = v[(slice(None),) + ij]
        u1 = v[(slice(None),) + _inward(ij, a, side, 1)]
        u2 = v[(slice(None),) + _inward(ij, a, side, 2)]
        out[:, k] = (3.0 * u0 - 4.0 * u1 + u2) / (2.0 * grid.h)
    return out


def trace_values(values: np.ndarray, layout: TraceLayout) -> np.ndarray:
    """Restriction of a space-time array to the layout nodes, ``(nt+1, m)``."""
    v = np.asarray(values)
    return v[(slice(None),) + tuple(layout.node_index.T)]


@dataclass(frozen=True)
class Field:
    """Immutable space-time (or purely spatial) array tied to a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape not in (self.grid.shape, self.grid.spatial_shape):
            raise GridError(f"array shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise GridError("field contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class BoundaryTrace:
    grid: Grid
    layout: TraceLayout
    values: np.ndarray  # (nt+1, m)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.nt + 1, self.layout.size):
            raise GridError(f"trace shape {v.shape} does not match ({self.grid.nt + 1}, {self.layout.size})")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def weights(self) -> np.ndarray:
        return np.multiply.outer(self.grid.time_weights(), self.layout.weights)

    def inner(self, other: "BoundaryTrace | np.ndarray") -> float:
        o = np.asarray(getattr(other, "values", other))
        return float(np.sum(self.weights() * self.values * o))

    def norm(self) -> float:
        return math.sqrt(max(self.inner(self), 0.0))


# ---------------------------------------------------------------- quadrature


def region_weights(grid: Grid, region: str, layout: TraceLayout | None = None) -> np.ndarray:
    if region == "Q":
        return np.multiply.outer(grid.time_weights(), grid.space_weights())
    if region in ("terminal", "initial"):
        return grid.space_weights()
    if region == "sigma0":
        if layout is None:
            raise GridError("boundary integrals need a trace layout")
        return np.multiply.outer(grid.time_weights(), layout.weights)
    raise GridError(f"unknown region {region!r}; expected one of {REGIONS}")


def integrate(values, grid: Grid, region: str = "Q", log_weight=None, offset: float = 0.0,
              layout: TraceLayout | None = None) -> float:
    """Trapezoid rule of ``values * exp(log_weight - offset)`` over ``region``.

    ``offset`` is the shared exponent subtracted before exponentiation so that
    integrals carrying ``e^{2 s phi}`` stay finite; ratios of integrals taken
    with the same offset do not depend on it.
    """
    if isinstance(values, BoundaryTrace):
        layout = values.layout
    v = np.asarray(getattr(values, "values", values), dtype=float)
    w = region_weights(grid, region, layout)
    if v.shape != w.shape:
        raise GridError(f"integrand shape {v.shape} does not match region {region!r} shape {w.shape}")
    if log_weight is not None:
        lw = np.broadcast_to(np.asarray(log_weight, dtype=float), v.shape)
        w = w * np.exp(lw - offset)
    elif offset:
        w = w * math.exp(-offset)
    return float(np.sum(w * v))


def shared_offset(*log_weights) -> float:
    """Largest exponent among the given log-weights (0 if all are modest)."""
    top = max(float(np.max(lw)) for lw in log_weights)
    return top if top > 300.0 else 0.0


# ---------------------------------------------------------------- serialization


def write_field(path, values) -> None:
    """Flat binary: int64 ndim, int64 dims, then row-major float64, all little-endian."""
    v = np.ascontiguousarray(getattr(values, "values", values), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<q", v.ndim))
        fh.write(np.asarray(v.shape, dtype="<i8").tobytes())
        fh.write(v.tobytes(order="C"))


def read_field(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (ndim,) = struct.unpack_from("<q", raw, 0)
    if not 0 < ndim <= 8:
        raise GridError(f"{path}: implausible dimension count {ndim}")
    dims = np.frombuffer(raw, dtype="<i8", count=ndim, offset=8)
    data = np.frombuffer(raw, dtype="<f8", offset=8 + 8 * ndim)
    if data.size != int(np.prod(dims)):
        raise GridError(f"{path}: payload has {data.size} values, header says {tuple(dims)}")
    return data.reshape(tuple(int(d) for d in dims)).astype(float)


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_field_csv(path, values, grid: Grid) -> None:
    v = np.asarray(getattr(values, "values", values), dtype=float)
    names = ["x1", "x2"][: grid.dim]
    pts = grid.points().reshape(-1, grid.dim)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if v.shape == grid.spatial_shape:
            w.writerow(names + ["value"])
            for p, val in zip(pts, v.reshape(-1)):
                w.writerow([fmt(c) for c in p] + [fmt(val)])
        else:
            w.writerow(["t"] + names + ["value"])
            for t, slab in zip(grid.times, v.reshape(v.shape[0], -1)):
                for p, val in zip(pts, slab):
                    w.writerow([fmt(t)] + [fmt(c) for c in p] + [fmt(val)])


def write_trace_csv(path, trace: BoundaryTrace) -> None:
    """Columns ``t, face, arclength, value``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "face", "arclength", "value"])
        for t, row in zip(trace.grid.times, trace.values):
            for face, s, val in zip(trace.layout.face, trace.layout.arclength, row):
                w.writerow([fmt(t), face, fmt(s), fmt(val)])
