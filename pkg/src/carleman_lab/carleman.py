"""Numerical checks of the conjugated wave operator, its energy identity and the
Carleman estimate with terminal-time terms.

Weight derivatives come from :mod:`carleman_lab.weights` (analytic); only the
lattice functions ``v``, ``z`` and ``y`` are differentiated by finite differences.
Quantities carrying ``e^{2 s phi}`` are accumulated relative to a shared
exponent offset (see :func:`carleman_lab.grid.integrate`).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import ObservationBoundary, whole_boundary
from .grid import (
    Grid,
    TraceLayout,
    discrete_derivatives,
    fmt,
    integrate,
    normal_derivative,
    shared_offset,
    trace_layout,
    trace_values,
)
from .weights import CarlemanParams, WeightJet, weight_jet


class VerificationError(ValueError):
    """Input violates the hypotheses of a check."""


def lattice_jet(params: CarlemanParams, grid: Grid) -> WeightJet:
    x, t = grid.spacetime()
    return weight_jet(params, x, t)


def _dot(a, b):
    return np.sum(a * b, axis=-1)


# ---------------------------------------------------------------- conjugation


@dataclass(frozen=True)
class ConjugatedPair:
    """``z = e^{s phi - offset} v`` with its symmetric and antisymmetric parts."""

    z: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    offset: float = 0.0


def conjugated_parts(z: np.ndarray, params: CarlemanParams, grid: Grid, jet: WeightJet | None = None):
    jet = lattice_jet(params, grid) if jet is None else jet
    s = params.s
    D = discrete_derivatives(z, grid)
    A = jet.phi_t**2 - _dot(jet.grad_phi, jet.grad_phi)
    plus = D.dtt - D.lap + s**2 * A * z
    minus = -2.0 * s * (D.dt * jet.phi_t - _dot(D.grad, jet.grad_phi)) - s * jet.wave_phi * z
    return plus, minus


def conjugate(v, params: CarlemanParams, grid: Grid) -> ConjugatedPair:
    v = np.asarray(getattr(v, "values", v), dtype=float)
    jet = lattice_jet(params, grid)
    offset = shared_offset(params.s * jet.phi)
    z = np.exp(params.s * jet.phi - offset) * v
    plus, minus = conjugated_parts(z, params, grid, jet)
    return ConjugatedPair(z, plus, minus, offset)


def conjugation_residual(v, F, params: CarlemanParams, grid: Grid) -> float:
    """``max |P+ z + P- z - e^{s phi} F| / max |e^{s phi} F|`` over interior nodes."""
    pair = conjugate(v, params, grid)
    jet = lattice_jet(params, grid)
    target = np.exp(params.s * jet.phi - pair.offset) * np.asarray(F, dtype=float)
    inner = (slice(None),) + grid.interior
    err = np.max(np.abs((pair.plus + pair.minus - target)[inner]))
    return float(err / np.max(np.abs(target[inner])))


# ---------------------------------------------------------------- energy identity


@dataclass(frozen=True)
class IdentityLedger:
    """Terms of the expansion of ``(P+ z, P- z)``.

    ``J4`` contains every ``t = 0`` / ``t = T`` term, including
    ``terminal_cross = 2 s int (z' <grad z, grad phi>)(T)``. ``residual`` is
    ``inner_product - (J1 + J2 + J3 + J4 + B0)``; ``residual_without_cross``
    is the same balance with ``terminal_cross`` left out of ``J4``.
    """

    J1: float
    J2: float
    J3: float
    J4: float
    B0: float
    B1: float
    terminal_cross: float
    inner_product: float

    @property
    def total(self) -> float:
        return self.J1 + self.J2 + self.J3 + self.J4 + self.B0

    @property
    def scale(self) -> float:
        return abs(self.J1) + abs(self.J2) + abs(self.J3) + abs(self.J4) + abs(self.B0)

    @property
    def residual(self) -> float:
        return self.inner_product - self.total

    @property
    def residual_without_cross(self) -> float:
        return self.residual + self.terminal_cross

    def normalized(self, eps: float = 1e-300) -> float:
        return abs(self.residual) / (self.scale + eps)

    def normalized_without_cross(self, eps: float = 1e-300) -> float:
        return abs(self.residual_without_cross) / (self.scale + eps)

    def as_dict(self) -> dict:
        out = asdict(self)
        out.update(residual=self.residual, normalized_residual=self.normalized(),
                   residual_without_cross=self.residual_without_cross)
        return out


def identity_residual(z, params: CarlemanParams, grid: Grid, tol: float = 1e-12) -> IdentityLedger:
    """Evaluate every term of the ``(P+ z, P- z)`` expansion by quadrature.

    Requires ``z(., 0) = 0``. Boundary terms run over the whole lateral
    boundary.
    """
    z = np.asarray(getattr(z, "values", z), dtype=float)
    scale = max(float(np.max(np.abs(z))), 1e-300)
    if np.max(np.abs(z[0])) > tol * scale:
        raise VerificationError("identity needs z(., 0) = 0")
    s, lam = params.s, params.lam
    jet = lattice_jet(params, grid)
    D = discrete_derivatives(z, grid)
    plus, minus = conjugated_parts(z, params, grid, jet)

    zt, gz = D.dt, D.grad
    A = jet.phi_t**2 - _dot(jet.grad_phi, jet.grad_phi)
    hess_gz = np.einsum("...i,...ij,...j->...", gz, jet.hess_phi, gz)
    hess_gphi = np.einsum("...i,...ij,...j->...", jet.grad_phi, jet.hess_phi, jet.grad_phi)

    J1 = 2 * s * integrate(jet.phi_tt * zt**2 - 2 * zt * _dot(gz, jet.grad_phi_t) + hess_gz, grid)
    J2 = 2 * s**3 * integrate(
        z**2 * (jet.phi_t**2 * jet.phi_tt + hess_gphi - 2 * jet.phi_t * _dot(jet.grad_phi, jet.grad_phi_t)), grid)
    J3 = -0.5 * s * integrate(z**2 * jet.wave2_phi, grid)

    def at(k, arr):
        return arr[k]

    T = -1
    cross = 2 * s * integrate(at(T, zt * _dot(gz, jet.grad_phi)), grid, "terminal")
    J4 = (
        s * integrate(at(0, jet.phi_t * zt**2), grid, "initial")
        - s * integrate(at(T, jet.phi_t * zt**2), grid, "terminal")
        - s * integrate(at(T, z * zt * jet.wave_phi), grid, "terminal")
        + 0.5 * s * integrate(at(T, z**2 * jet.wave_phi_t), grid, "terminal")
        - s * integrate(at(T, _dot(gz, gz) * jet.phi_t), grid, "terminal")
        - s**3 * integrate(at(T, z**2 * jet.phi_t * A), grid, "terminal")
        + cross
    )

    layout = trace_layout(grid, whole_boundary(grid.domain))

    def tr(arr):
        return trace_values(arr, layout)

    nu = layout.normal
    gz_b = tr(gz)
    dnz = _dot(gz_b, nu)
    dnphi = _dot(tr(jet.grad_phi), nu)
    dnG = _dot(tr(jet.grad_wave_phi), nu)
    z_b, zt_b = tr(z), tr(zt)
    B0 = s * integrate(
        dnphi * _dot(gz_b, gz_b) - 2 * _dot(gz_b, tr(jet.grad_phi)) * dnz
        + 2 * tr(jet.phi_t) * zt_b * dnz - zt_b**2 * dnphi
        + z_b * dnz * tr(jet.wave_phi) + s**2 * dnphi * z_b**2 * tr(A) - 0.5 * z_b**2 * dnG,
        grid, "sigma0", layout=layout)
    dnpsi = _dot(tr(jet.grad_psi), nu)
    B1 = integrate(s * lam * tr(jet.phi) * (lam * dnpsi * z_b**2 - z_b * dnz), grid, "sigma0", layout=layout)

    inner = integrate(plus * minus, grid)
    return IdentityLedger(J1, J2, J3, J4, B0, B1, cross, inner)


def j1_sign_gap(z, params: CarlemanParams, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise ``J1`` integrand and its lower bound ``4 s lam phi (|grad z|^2 - beta |z'|^2)``.

    The integrand uses the phi-derivative form, the bound the psi form, so the
    comparison exercises the chain rule as well as the sign structure.
    """
    z = np.asarray(getattr(z, "values", z), dtype=float)
    s = params.s
    jet = lattice_jet(params, grid)
    D = discrete_derivatives(z, grid)
    zt, gz = D.dt, D.grad
    hess_gz = np.einsum("...i,...ij,...j->...", gz, jet.hess_phi, gz)
    integrand = 2 * s * (jet.phi_tt * zt**2 - 2 * zt * _dot(gz, jet.grad_phi_t) + hess_gz)
    bound = 4 * s * params.lam * jet.phi * (_dot(gz, gz) - params.beta * zt**2)
    return integrand, bound


# ---------------------------------------------------------------- Carleman estimate


@dataclass(frozen=True)
class CarlemanEntry:
    s: float
    lhs: float
    rhs_source: float
    rhs_boundary: float
    rhs_terminal: float
    log_offset: float = 0.0

    @property
    def rhs_total(self) -> float:
        return self.rhs_source + self.rhs_boundary + self.rhs_terminal

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs_total if self.rhs_total > 0 else (0.0 if self.lhs == 0 else math.inf)

    @property
    def ratio_without_terminal(self) -> float:
        rhs = self.rhs_source + self.rhs_boundary
        return self.lhs / rhs if rhs > 0 else (0.0 if self.lhs == 0 else math.inf)


@dataclass
class CarlemanReport:
    entries: list[CarlemanEntry] = field(default_factory=list)

    @property
    def s_values(self) -> list[float]:
        return [e.s for e in self.entries]

    @property
    def ratios(self) -> list[float]:
        return [e.ratio for e in self.entries]

    @property
    def constant(self) -> float:
        """Empirical constant: largest ratio over the sweep (which starts at ``s0``)."""
        return max(self.ratios)

    def ratio_at(self, s: float) -> float:
        for e in self.entries:
            if e.s == s:
                return e.ratio
        raise KeyError(s)

    def bounded(self) -> bool:
        """Finite ratios, and the last ratio at most twice the median-position one."""
        r = self.ratios
        if not all(math.isfinite(x) for x in r):
            return False
        return r[-1] <= 2.0 * r[(len(r) - 1) // 2] if len(r) > 1 else True

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "lhs", "rhs_source", "rhs_boundary", "rhs_terminal", "ratio"])
            for e in self.entries:
                w.writerow([fmt(e.s), fmt(e.lhs), fmt(e.rhs_source), fmt(e.rhs_boundary),
                            fmt(e.rhs_terminal), fmt(e.ratio)])

    def summary(self) -> dict:
        return {
            "s_values": self.s_values,
            "ratios": self.ratios,
            "log_offsets": [e.log_offset for e in self.entries],
            "C_hat": self.constant,
            "bounded": self.bounded(),
        }


def _layout(grid: Grid, boundary) -> TraceLayout:
    return boundary if isinstance(boundary, TraceLayout) else trace_layout(grid, boundary)


def carleman_sides(v, F, params: CarlemanParams, grid: Grid, boundary: ObservationBoundary | TraceLayout,
                   tol: float = 1e-10) -> CarlemanEntry:
    """Both sides of the weighted estimate for one ``s``.

    ``v`` must vanish on the lateral boundary and at ``t = 0``; ``F`` is the
    residual of the wave operator applied to ``v``.
    """
    v = np.asarray(getattr(v, "values", v), dtype=float)
    F = np.asarray(getattr(F, "values", F), dtype=float)
    if F.shape != v.shape or v.shape != grid.shape:
        raise VerificationError(f"v {v.shape} and F {F.shape} must match grid {grid.shape}")
    scale = max(float(np.max(np.abs(v))), 1e-300)
    if np.max(np.abs(v[0])) > tol * scale:
        raise VerificationError("v(., 0) must vanish")
    edge = v.copy()
    edge[(slice(None),) + grid.interior] = 0.0
    if np.max(np.abs(edge)) > tol * scale:
        raise VerificationError("v must vanish on the lateral boundary")

    s = params.s
    layout = _layout(grid, boundary)
    jet = lattice_jet(params, grid)
    lw = 2.0 * s * jet.phi
    offset = shared_offset(lw)
    D = discrete_derivatives(v, grid)
    energy = s * _dot(D.grad, D.grad) + s * D.dt**2 + s**3 * v**2

    lhs = integrate(energy, grid, "Q", lw, offset)
    rhs_source = integrate(F**2, grid, "Q", lw, offset)
    dn = normal_derivative(v, grid, layout)
    rhs_boundary = integrate(s * dn**2, grid, "sigma0", trace_values(lw, layout), offset, layout=layout)
    rhs_terminal = integrate(energy[-1], grid, "terminal", lw[-1], offset)
    return CarlemanEntry(float(s), lhs, rhs_source, rhs_boundary, rhs_terminal, offset)


def constant_sweep(v, F, params: CarlemanParams, s_list, grid: Grid,
                   boundary: ObservationBoundary | TraceLayout) -> CarlemanReport:
    s_list = [float(s) for s in s_list]
    if not s_list:
        raise VerificationError("empty s sweep")
    if any(s <= 0 for s in s_list) or any(b <= a for a, b in zip(s_list, s_list[1:])):
        raise VerificationError(f"s values must be positive and increasing, got {s_list}")
    layout = _layout(grid, boundary)
    return CarlemanReport([carleman_sides(v, F, params.with_s(s), grid, layout) for s in s_list])


def time_zero_bound_sides(y, params: CarlemanParams, grid: Grid, source_rate=None) -> tuple[float, float, float]:
    """Sides of the time-zero bound for the differentiated solution ``y``.

    Returns ``(lhs, rhs, offset)``:
    ``lhs = int |y_t(., 0)|^2 e^{2 s phi(., 0)}`` and the constant-free bracket
    ``int_Q (s |grad_{x,t} y|^2 + |y|^2) e^{2 s phi} + int |grad_{x,t} y(., T)|^2 e^{2 s phi(., T)}
    + int_Q |R_t f|^2 e^{2 s phi}``, both relative to ``offset``.
    """
    y = np.asarray(getattr(y, "values", y), dtype=float)
    if y.shape != grid.shape:
        raise VerificationError(f"y {y.shape} does not match grid {grid.shape}")
    s = params.s
    jet = lattice_jet(params, grid)
    lw = 2.0 * s * jet.phi
    offset = shared_offset(lw)
    D = discrete_derivatives(y, grid)
    grad_xt = _dot(D.grad, D.grad) + D.dt**2
    lhs = integrate(D.dt[0] ** 2, grid, "initial", lw[0], offset)
    rhs = integrate(s * grad_xt + y**2, grid, "Q", lw, offset)
    rhs += integrate(grad_xt[-1], grid, "terminal", lw[-1], offset)
    if source_rate is not None:
        q = np.broadcast_to(np.asarray(source_rate, dtype=float), grid.shape)
        rhs += integrate(q**2, grid, "Q", lw, offset)
    return lhs, rhs, offset
