"""Observation operator ``f -> d_t d_nu u`` on the observed boundary and its
Tikhonov-regularised inversion.

Inner products: ``<f, g>_Omega`` is the trapezoid rule over the interior nodes
(``h^n`` per node); ``<g1, g2>_Sigma0`` uses the trace quadrature weights.
``apply_adjoint`` is the exact discrete adjoint of ``apply_forward`` for these
inner products, obtained by running the leapfrog recursion backwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .forward import CoefficientSpec, WaveOperator, differentiated_system, trace_matrix
from .geometry import Domain, distance_extrema, min_observation_time, observation_boundary
from .grid import (
    BoundaryTrace,
    Grid,
    build_grid,
    normal_derivative,
    refine,
    time_derivative_matrix,
    trace_layout,
)


class AdmissibilityError(ValueError):
    """Configuration violates the observation-time or source-amplitude condition."""


@dataclass(frozen=True)
class ObservationConfig:
    domain: Domain
    x0: tuple[float, ...]
    T: float
    nx: int = 16
    cfl: float = 0.5
    coefficients: CoefficientSpec = field(default_factory=CoefficientSpec)
    faces: tuple[str, ...] | None = None  # restrict the observed faces
    override: bool = False  # allow inadmissible T or vanishing R(., 0)

    def with_T(self, T: float, override: bool | None = None) -> "ObservationConfig":
        return replace(self, T=T, override=self.override if override is None else override)


def admissibility(config: ObservationConfig, grid: Grid, coeffs) -> dict:
    t_min = min_observation_time(config.domain, config.x0)
    r0 = coeffs.r0
    return {"T": config.T, "T_min": t_min, "time_ok": config.T > t_min, "r0": r0, "r0_ok": r0 > 1e-12}


def check_admissible(config: ObservationConfig, info: dict) -> None:
    if config.override:
        return
    if not info["time_ok"]:
        raise AdmissibilityError(
            f"observation time T={info['T']:g} must exceed sqrt(max|x-x0|^2 - min|x-x0|^2) = "
            f"{info['T_min']:.6g} (set the admissibility override for negative controls)"
        )
    if not info["r0_ok"]:
        raise AdmissibilityError(
            f"|R(x,0)| must be bounded below by some r0 > 0; min over the grid is {info['r0']:g} "
            "(set the admissibility override for negative controls)"
        )


class ObservationOperator:
    """Linear map from interior source values to ``d_t d_nu u`` on the observed boundary."""

    def __init__(self, config: ObservationConfig, grid: Grid | None = None, max_columns: int = 1024):
        self.config = config
        self.grid = grid if grid is not None else build_grid(config.domain, config.nx, config.T, config.cfl)
        self.max_columns = max_columns
        boundary = observation_boundary(config.domain, config.x0)
        if config.faces is not None:
            boundary = boundary.restrict(config.faces)
        self.boundary = boundary
        self.layout = trace_layout(self.grid, boundary)
        self.coeffs = config.coefficients.sample(self.grid)
        self.info = admissibility(config, self.grid, self.coeffs)
        check_admissible(config, self.info)
        self.wave = WaveOperator(self.grid, self.coeffs)
        self.N = trace_matrix(self.grid, self.layout)
        self.Dt = time_derivative_matrix(self.grid.nt, self.grid.dt)
        self.R = self.wave.interior(self.coeffs.R)  # (nt+1, n_int)
        self.trace_weights = np.multiply.outer(self.grid.time_weights(), self.layout.weights)
        self.cell = self.grid.h**self.grid.dim
        self.matrix: np.ndarray | None = None
        self._svd = None

    # shapes
    @property
    def n_unknowns(self) -> int:
        return self.grid.n_interior

    @property
    def trace_shape(self) -> tuple[int, int]:
        return (self.grid.nt + 1, self.layout.size)

    # inner products
    def inner_omega(self, f1, f2) -> float:
        return float(self.cell * np.dot(np.ravel(f1), np.ravel(f2)))

    def norm_omega(self, f) -> float:
        return math.sqrt(max(self.inner_omega(f, f), 0.0))

    def inner_sigma(self, g1, g2) -> float:
        return float(np.sum(self.trace_weights * np.asarray(g1) * np.asarray(g2)))

    def norm_sigma(self, g) -> float:
        return math.sqrt(max(self.inner_sigma(g, g), 0.0))

    # source vectors
    def source_vector(self, f) -> np.ndarray:
        """Interior values of a spatial array / callable / mode list."""
        if callable(f):
            f = self.grid.sample_space(f)
        f = np.asarray(f, dtype=float)
        if f.shape == self.grid.spatial_shape:
            return self.wave.interior(f)
        if f.shape != (self.n_unknowns,):
            raise ValueError(f"source shape {f.shape} matches neither the grid nor the interior")
        return f

    def source_field(self, f_vec) -> np.ndarray:
        return self.wave.embed(np.asarray(f_vec))

    # PDE route
    def _traces(self, F: np.ndarray) -> np.ndarray:
        """Normal-derivative traces for source columns ``F`` (n_int[, k])."""
        out = np.empty((self.grid.nt + 1, self.layout.size) + F.shape[1:])

        def record(n, u):
            out[n] = self.N @ u

        R = self.R if F.ndim == 1 else self.R[:, :, None]
        self.wave.propagate(lambda n: R[n] * F, record=record)
        return out

    def apply_forward(self, f) -> np.ndarray:
        """Raw trace ``d_t d_nu u`` of shape ``(nt+1, m)`` by time stepping."""
        F = self.source_vector(f)
        return np.tensordot(self.Dt, self._traces(F), axes=1)

    def apply_adjoint(self, g) -> np.ndarray:
        """Interior field ``A* g`` with ``<A f, g>_Sigma0 = <f, A* g>_Omega``."""
        g = np.asarray(getattr(g, "values", g), dtype=float)
        if g.shape != self.trace_shape:
            raise ValueError(f"trace shape {g.shape} does not match {self.trace_shape}")
        grid, wave = self.grid, self.wave
        dt2 = grid.dt**2
        tau = self.Dt.T @ (self.trace_weights * g)  # (nt+1, m)
        LT = wave.L.T.tocsr()
        nt = grid.nt
        lam_next = np.zeros(self.n_unknowns)  # lambda^{n+1}
        lam_next2 = np.zeros(self.n_unknowns)  # lambda^{n+2}
        grad = np.zeros(self.n_unknowns)
        for n in range(nt, 0, -1):
            a = lam_next / wave.plus
            b = lam_next2 / wave.plus
            lam = self.N.T @ tau[n] + 2.0 * a + dt2 * (LT @ a) - wave.minus * b
            # u^{n+1} picks up dt^2 R^n f / plus for n >= 1
            if n + 1 <= nt:
                grad += dt2 * self.R[n] * a
            lam_next2, lam_next = lam_next, lam
        grad += 0.5 * dt2 * self.R[0] * lam_next  # u^1 = dt^2/2 R^0 f
        return grad / self.cell

    # dense oracle
    def assemble(self) -> np.ndarray:
        """Dense matrix with rows scaled by square-root trace weights, one column per interior node."""
        if self.n_unknowns > self.max_columns:
            raise ValueError(f"{self.n_unknowns} interior nodes exceed the assembly cap {self.max_columns}")
        if self.matrix is None:
            traces = self._traces(np.eye(self.n_unknowns))
            g = np.tensordot(self.Dt, traces, axes=1)
            sw = np.sqrt(self.trace_weights)[:, :, None]
            self.matrix = (sw * g).reshape(-1, self.n_unknowns)
        return self.matrix

    def scaled_svd(self):
        """SVD of ``matrix / h^{n/2}``: singular values are gains ``||A f||_Sigma0 / ||f||_Omega``."""
        if self._svd is None:
            K = self.assemble() / math.sqrt(self.cell)
            self._svd = np.linalg.svd(K, full_matrices=False)
        return self._svd

    def singular_values(self) -> np.ndarray:
        return self.scaled_svd()[1]

    def sigma_min(self) -> float:
        return float(self.singular_values()[-1])

    def weighted_data(self, g) -> np.ndarray:
        return (np.sqrt(self.trace_weights) * np.asarray(g)).reshape(-1)

    def unweighted_data(self, gw) -> np.ndarray:
        return np.asarray(gw).reshape(self.trace_shape) / np.sqrt(self.trace_weights)

    # fast actions for iterative solvers
    def matvec(self, f) -> np.ndarray:
        if self.matrix is None:
            return self.apply_forward(f)
        return self.unweighted_data(self.matrix @ f)

    def rmatvec(self, g) -> np.ndarray:
        if self.matrix is None:
            return self.apply_adjoint(g)
        return self.matrix.T @ self.weighted_data(g) / self.cell

    def pinv_solution(self, g) -> np.ndarray:
        U, S, Vt = self.scaled_svd()
        keep = S > S[0] * 1e-13
        coef = (U[:, keep].T @ self.weighted_data(g)) / S[keep]
        return (Vt[keep].T @ coef) / math.sqrt(self.cell)

    def differentiated_trace(self, f) -> np.ndarray:
        """``d_nu y`` for ``y = u_t`` solved directly; a second route to :meth:`apply_forward`."""
        field = self.source_field(self.source_vector(f))
        y = differentiated_system(self.coeffs, field, self.grid)
        return normal_derivative(y.values, self.grid, self.layout)

    def trace(self, g) -> BoundaryTrace:
        return BoundaryTrace(self.grid, self.layout, g, {"kind": "dt_dnu_u"})


# ---------------------------------------------------------------- reconstruction


@dataclass
class ReconstructionResult:
    f: np.ndarray  # interior values
    alpha: float
    iterations: int
    residual: float  # ||A f - g||_Sigma0
    history: list[float]  # Tikhonov functional per iteration
    converged: bool
    rel_error: float | None = None

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "iterations": self.iterations,
            "residual": self.residual,
            "rel_error": self.rel_error,
            "converged": self.converged,
        }


def reconstruct(g, op: ObservationOperator, alpha: float, max_iter: int = 500, tol: float = 1e-10,
                truth=None) -> ReconstructionResult:
    """Minimise ``||A f - g||^2_Sigma0 + alpha ||f||^2_Omega`` by CG on the normal equations.

    ``alpha = 0`` is only allowed for an assembled operator and returns the
    pseudo-inverse solution. Hitting ``max_iter`` is reported through
    ``converged = False``.
    """
    g = np.asarray(getattr(g, "values", g), dtype=float)
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    if alpha == 0:
        if op.matrix is None:
            raise ValueError("alpha = 0 needs the assembled operator (pseudo-inverse)")
        f = op.pinv_solution(g)
        r = g - op.matvec(f)
        res = op.norm_sigma(r)
        out = ReconstructionResult(f, 0.0, 0, res, [res**2], True)
    else:
        f = np.zeros(op.n_unknowns)
        r = g.copy()
        s = op.rmatvec(r)
        p = s.copy()
        gamma = op.inner_omega(s, s)
        gamma0 = gamma
        history = [op.inner_sigma(r, r)]
        converged = gamma0 == 0.0
        it = 0
        while not converged and it < max_iter:
            q = op.matvec(p)
            denom = op.inner_sigma(q, q) + alpha * op.inner_omega(p, p)
            step = gamma / denom
            f += step * p
            r -= step * q
            s = op.rmatvec(r) - alpha * f
            gamma_new = op.inner_omega(s, s)
            p = s + (gamma_new / gamma) * p
            gamma = gamma_new
            it += 1
            history.append(op.inner_sigma(r, r) + alpha * op.inner_omega(f, f))
            converged = math.sqrt(gamma / gamma0) <= tol
        out = ReconstructionResult(f, alpha, it, op.norm_sigma(r), history, converged)
    if truth is not None:
        t = op.source_vector(truth)
        out.rel_error = op.norm_omega(out.f - t) / op.norm_omega(t)
    return out


def tikhonov_residual(op: ObservationOperator, g, alpha: float, in_range: bool = False) -> float:
    """``||A f_alpha - g||_Sigma0`` from the SVD of the assembled operator.

    With ``in_range`` the component of ``g`` orthogonal to the range of ``A``
    (which no ``f`` can fit) is left out.
    """
    U, S, _ = op.scaled_svd()
    gw = op.weighted_data(g)
    b = U.T @ gw
    perp2 = 0.0 if in_range else max(float(gw @ gw - b @ b), 0.0)
    filt = alpha / (S**2 + alpha)
    return math.sqrt(float(np.sum((filt * b) ** 2)) + perp2)


def range_norm(op: ObservationOperator, g) -> float:
    """Norm of the orthogonal projection of ``g`` onto the range of ``A``."""
    U, _, _ = op.scaled_svd()
    return float(np.linalg.norm(U.T @ op.weighted_data(g)))


def discrepancy_alpha(op: ObservationOperator, g, noise_norm: float, tau: float = 1.1,
                      in_range: bool = False, bounds: tuple[float, float] = (1e-16, 1e2)) -> tuple[float, bool]:
    """Regularisation weight with ``||A f_alpha - g||_Sigma0 = tau * noise_norm``.

    Returns ``(alpha, attained)``. When even the smallest ``alpha`` leaves a
    larger residual (model error above the noise) the lower bound is returned
    with ``attained = False``; when the target exceeds the residual of
    ``f = 0`` the upper bound is returned.
    """
    S = op.singular_values()
    lo, hi = bounds[0] * S[0] ** 2, bounds[1] * S[0] ** 2
    target = tau * noise_norm

    def gap(log_alpha):
        return tikhonov_residual(op, g, math.exp(log_alpha), in_range) - target

    if gap(math.log(lo)) >= 0:
        return lo, False
    if gap(math.log(hi)) <= 0:
        return hi, False
    return math.exp(brentq(gap, math.log(lo), math.log(hi), xtol=1e-10)), True


# ---------------------------------------------------------------- synthetic data


def synthesize_data(config: ObservationConfig, f, factor: int = 2, coarse: ObservationOperator | None = None):
    """``d_t d_nu u`` computed on a grid ``factor`` times finer and injected onto the coarse trace.

    ``f`` is a callable ``f(x1, [x2])`` (or mode-based sampler) evaluated on the fine grid.
    """
    coarse = coarse if coarse is not None else ObservationOperator(config)
    fine_grid = refine(coarse.grid, factor)
    fine = ObservationOperator(config, grid=fine_grid)
    g_fine = fine.apply_forward(fine.source_vector(f))
    index = {tuple(ij): k for k, ij in enumerate(fine.layout.node_index)}
    cols = [index[tuple(factor * np.asarray(ij))] for ij in coarse.layout.node_index]
    return g_fine[::factor][:, cols]


def add_noise(op: ObservationOperator, g, delta: float, rng: np.random.Generator):
    """Gaussian noise scaled to ``delta`` times the weighted trace norm; returns ``(g_noisy, ||noise||)``."""
    xi = rng.standard_normal(np.shape(g))
    scale = delta * op.norm_sigma(g) / op.norm_sigma(xi)
    noise = scale * xi
    return np.asarray(g) + noise, op.norm_sigma(noise)


def stability_ratio(op: ObservationOperator, f) -> float:
    """``||f||_Omega / ||A f||_Sigma0``."""
    fv = op.source_vector(f)
    return op.norm_omega(fv) / op.norm_sigma(op.matvec(fv))


def distance_summary(config: ObservationConfig) -> dict:
    ext = distance_extrema(config.domain, config.x0)
    return {"d0": ext.d0, "d1": ext.d1, "T_min": min_observation_time(config.domain, config.x0)}
