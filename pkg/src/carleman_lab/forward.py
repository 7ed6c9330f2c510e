"""Explicit leapfrog solver for

    u_tt - lap u + b . grad u + d u_t + c u = rhs   in the box,  u = 0 on the boundary,

plus the time-differentiated system and Neumann traces on the observed faces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .geometry import ObservationBoundary
from .grid import (
    BoundaryTrace,
    Field,
    Grid,
    TraceLayout,
    gradient,
    normal_derivative,
    time_derivative,
    trace_layout,
)


class NumericalError(RuntimeError):
    """CFL violation or non-finite values during time stepping."""


Coefficient = float | Callable | np.ndarray


def _sample_space(grid: Grid, value) -> np.ndarray:
    if callable(value):
        return grid.sample_space(value)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.spatial_shape, float(arr))
    if arr.shape != grid.spatial_shape:
        raise ValueError(f"coefficient shape {arr.shape} does not match {grid.spatial_shape}")
    return arr.copy()


def _sample_spacetime(grid: Grid, value) -> np.ndarray:
    if callable(value):
        return grid.sample(value)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.shape, float(arr))
    if arr.shape == grid.spatial_shape:
        return np.broadcast_to(arr, grid.shape).copy()
    if arr.shape != grid.shape:
        raise ValueError(f"array shape {arr.shape} does not match {grid.shape}")
    return arr.copy()


@dataclass(frozen=True)
class CoefficientSet:
    """Lower-order coefficients and the source amplitude ``R`` sampled on one grid."""

    grid: Grid
    b: np.ndarray  # (dim, *spatial)
    d: np.ndarray
    c: np.ndarray
    R: np.ndarray  # (nt+1, *spatial)

    def __post_init__(self):
        for name in ("b", "d", "c", "R"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"coefficient {name} has non-finite values")

    @property
    def R_t(self) -> np.ndarray:
        return time_derivative(self.R, self.grid.dt)

    @property
    def linf(self) -> dict[str, float]:
        return {
            "b": float(np.max(np.abs(self.b), initial=0.0)),
            "d": float(np.max(np.abs(self.d))),
            "c": float(np.max(np.abs(self.c))),
            "R": float(np.max(np.abs(self.R))),
        }

    @property
    def r0(self) -> float:
        """``min |R(x, 0)|`` over the closed domain (grid nodes)."""
        return float(np.min(np.abs(self.R[0])))

    @property
    def is_free(self) -> bool:
        return not (np.any(self.b) or np.any(self.d) or np.any(self.c))

    def check_r0(self, tol: float = 1e-12) -> float:
        r0 = self.r0
        if r0 <= tol:
            raise ValueError(
                f"|R(x,0)| must be bounded below by a positive constant; min over the grid is {r0:g}"
            )
        return r0


@dataclass(frozen=True)
class CoefficientSpec:
    """Grid-independent coefficient description; numbers or callables of ``(x1, [x2,] [t])``."""

    b: tuple = ()
    d: Coefficient = 0.0
    c: Coefficient = 0.0
    R: Coefficient = 1.0

    def sample(self, grid: Grid) -> CoefficientSet:
        b = list(self.b) + [0.0] * (grid.dim - len(self.b))
        return CoefficientSet(
            grid=grid,
            b=np.stack([_sample_space(grid, bj) for bj in b[: grid.dim]]),
            d=_sample_space(grid, self.d),
            c=_sample_space(grid, self.c),
            R=_sample_spacetime(grid, self.R),
        )


def free_coefficients(grid: Grid, R=1.0) -> CoefficientSet:
    return CoefficientSpec(R=R).sample(grid)


# ---------------------------------------------------------------- operators


def _second_difference_1d(n_int: int, h: float) -> sp.csr_matrix:
    return sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n_int, n_int), format="csr") / h**2


def _first_difference_1d(n_int: int, h: float) -> sp.csr_matrix:
    return sp.diags([-1.0, 1.0], [-1, 1], shape=(n_int, n_int), format="csr") / (2.0 * h)


def _embed(op_1d, axis: int, shape: tuple[int, ...]):
    mats = [sp.identity(n, format="csr") for n in shape]
    mats[axis] = op_1d
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def spatial_operator(grid: Grid, coeffs: CoefficientSet) -> sp.csr_matrix:
    """``lap_h - b . grad_h - c`` acting on interior unknowns (Dirichlet zero)."""
    shape = grid.interior_shape
    inner = grid.interior
    L = sum(_embed(_second_difference_1d(n, grid.h), a, shape) for a, n in enumerate(shape))
    for a, n in enumerate(shape):
        bj = coeffs.b[a][inner].reshape(-1)
        if np.any(bj):
            L = L - sp.diags(bj) @ _embed(_first_difference_1d(n, grid.h), a, shape)
    c = coeffs.c[inner].reshape(-1)
    if np.any(c):
        L = L - sp.diags(c)
    return sp.csr_matrix(L)


def check_cfl(grid: Grid) -> None:
    limit = grid.h / math.sqrt(grid.dim)
    if grid.dt > limit * (1 + 1e-12):
        raise NumericalError(f"time step {grid.dt:g} exceeds the CFL limit h/sqrt(n) = {limit:g}")


class WaveOperator:
    """Leapfrog propagator on the interior unknowns of one grid.

    The damping term is centred, ``d (u^{n+1} - u^{n-1}) / (2 dt)``, which makes
    each update a pointwise division. The first step is the second-order
    Taylor expansion built from the initial displacement and velocity.
    """

    def __init__(self, grid: Grid, coeffs: CoefficientSet):
        check_cfl(grid)
        self.grid = grid
        self.coeffs = coeffs
        self.L = spatial_operator(grid, coeffs)
        d = coeffs.d[grid.interior].reshape(-1)
        self.d = d
        self.plus = 1.0 + 0.5 * grid.dt * d
        self.minus = 1.0 - 0.5 * grid.dt * d

    def interior(self, values: np.ndarray) -> np.ndarray:
        """Flatten the interior of spatial (or space-time) arrays."""
        v = np.asarray(values, dtype=float)
        lead = v.shape[: v.ndim - self.grid.dim]
        return v[(Ellipsis,) + self.grid.interior].reshape(lead + (-1,))

    def embed(self, interior: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`interior` with zero boundary values."""
        interior = np.asarray(interior)
        lead = interior.shape[:-1]
        out = np.zeros(lead + self.grid.spatial_shape)
        out[(Ellipsis,) + self.grid.interior] = interior.reshape(lead + self.grid.interior_shape)
        return out

    def _column(self, vec: np.ndarray, like: np.ndarray) -> np.ndarray:
        return vec if like.ndim == 1 else vec[:, None]

    def propagate(self, forcing: Callable[[int], np.ndarray], u0=None, v0=None, record=None):
        """Run the recursion; ``forcing(n)`` is the interior right-hand side at level ``n``.

        ``record(n, u)`` receives every level. Arrays may carry a trailing
        column axis to advance several problems at once.
        """
        g = self.grid
        dt2 = g.dt**2
        f0 = np.asarray(forcing(0), dtype=float)
        u_prev = np.zeros_like(f0) if u0 is None else np.asarray(u0, dtype=float)
        vel = np.zeros_like(f0) if v0 is None else np.asarray(v0, dtype=float)
        d = self._column(self.d, f0)
        plus, minus = self._column(self.plus, f0), self._column(self.minus, f0)
        u_cur = u_prev + g.dt * vel + 0.5 * dt2 * (self.L @ u_prev - d * vel + f0)
        if record is not None:
            record(0, u_prev)
            record(1, u_cur)
        for n in range(1, g.nt):
            u_next = (2.0 * u_cur - minus * u_prev + dt2 * (self.L @ u_cur + forcing(n))) / plus
            if not np.all(np.isfinite(u_next)):
                raise NumericalError(f"non-finite values at step {n + 1} (t={(n + 1) * g.dt:g})")
            u_prev, u_cur = u_cur, u_next
            if record is not None:
                record(n + 1, u_cur)
        return u_cur

    def solve(self, rhs: np.ndarray, u0=None, v0=None) -> np.ndarray:
        """Full space-time solution array including boundary nodes."""
        rhs_int = self.interior(rhs)
        out = np.zeros(self.grid.shape)

        def record(n, u):
            out[n][self.grid.interior] = u.reshape(self.grid.interior_shape)

        self.propagate(lambda n: rhs_int[n],
                       None if u0 is None else self.interior(u0),
                       None if v0 is None else self.interior(v0), record)
        return out


def solve_wave(coeffs: CoefficientSet, rhs, grid: Grid, initial_displacement=None, initial_velocity=None) -> Field:
    """Solve the Dirichlet initial-boundary value problem on ``grid``.

    ``rhs`` is a space-time array or a callable ``rhs(x1, [x2,] t)``.
    """
    rhs_arr = _sample_spacetime(grid, rhs)
    u0 = None if initial_displacement is None else _sample_space(grid, initial_displacement)
    v0 = None if initial_velocity is None else _sample_space(grid, initial_velocity)
    return Field(grid, WaveOperator(grid, coeffs).solve(rhs_arr, u0, v0))


def differentiated_system(coeffs: CoefficientSet, f, grid: Grid) -> Field:
    """``y = u_t``: same operator, source ``R_t f``, ``y(0) = 0``, ``y_t(0) = R(., 0) f``."""
    f_arr = _sample_space(grid, f)
    return solve_wave(coeffs, coeffs.R_t * f_arr, grid, None, coeffs.R[0] * f_arr)


def neumann_trace(field, boundary: ObservationBoundary | TraceLayout, grid: Grid) -> BoundaryTrace:
    layout = boundary if isinstance(boundary, TraceLayout) else trace_layout(grid, boundary)
    values = np.asarray(getattr(field, "values", field), dtype=float)
    return BoundaryTrace(grid, layout, normal_derivative(values, grid, layout))


def trace_matrix(grid: Grid, layout: TraceLayout) -> sp.csr_matrix:
    """Sparse map from interior unknowns to the one-sided normal derivative.

    Boundary values are zero, so only the two inward neighbours contribute.
    """
    shape = grid.interior_shape
    rows, cols, vals = [], [], []
    for k, (ij, a, side) in enumerate(zip(layout.node_index, layout.axis, layout.side)):
        for step, coef in ((1, -4.0), (2, 1.0)):
            node = list(ij)
            node[a] += -step if side else step
            inner = tuple(i - 1 for i in node)
            rows.append(k)
            cols.append(int(np.ravel_multi_index(inner, shape)))
            vals.append(coef / (2.0 * grid.h))
    return sp.csr_matrix((vals, (rows, cols)), shape=(layout.size, grid.n_interior))


def energy(u: np.ndarray, grid: Grid) -> np.ndarray:
    """``E(t) = 1/2 int (|u_t|^2 + |grad u|^2) dx`` from second-order differences."""
    ut = time_derivative(u, grid.dt)
    gu = gradient(u, grid)
    dens = 0.5 * (ut**2 + np.sum(gu**2, axis=-1))
    w = grid.space_weights()
    return np.tensordot(dens, w, axes=grid.dim)
