"""Carleman weight ``phi = exp(lam * psi)``, ``psi = |x - x0|^2 - beta (t - t0)^2``.

Every derivative is analytic. The weight factorises as ``X(x) * Theta(t)`` with
``X = exp(lam |x - x0|^2)`` and ``Theta = exp(-lam beta (t - t0)^2)``, which keeps
the fourth-order quantities needed by the energy identity closed-form.

Points are arrays whose last axis holds the ``n`` spatial coordinates; times
broadcast against the leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CarlemanParams:
    x0: tuple[float, ...]
    lam: float = 1.0
    beta: float = 0.9
    t0: float = 0.0
    s: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.ravel(self.x0)))
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.s > 0:
            raise ValueError(f"s must be positive, got {self.s}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.t0 < 0:
            raise ValueError(f"t0 must be nonnegative, got {self.t0}")

    def with_s(self, s: float) -> "CarlemanParams":
        return CarlemanParams(self.x0, self.lam, self.beta, self.t0, s)


@dataclass(frozen=True)
class WeightJet:
    """Weight and derivatives at a set of space-time points.

    Spatial vectors carry a trailing axis of length ``n``; ``hess_phi`` carries
    two. ``psi_tt`` and ``hess_psi`` are constants (``-2 beta`` and ``2 I``).
    """

    psi: np.ndarray
    phi: np.ndarray
    psi_t: np.ndarray
    grad_psi: np.ndarray
    psi_tt: float
    hess_psi: np.ndarray
    phi_t: np.ndarray
    grad_phi: np.ndarray
    phi_tt: np.ndarray
    lap_phi: np.ndarray
    gap: np.ndarray
    # higher-order pieces used by the conjugated-operator identity
    grad_phi_t: np.ndarray
    hess_phi: np.ndarray
    wave_phi: np.ndarray  # phi'' - lap phi
    wave_phi_t: np.ndarray  # (d_t^2 - lap) phi'
    wave2_phi: np.ndarray  # (d_t^2 - lap)^2 phi
    grad_wave_phi: np.ndarray  # grad(phi'' - lap phi)


def _split(params: CarlemanParams, x, t):
    x = np.asarray(x, dtype=float)
    dx = x - np.asarray(params.x0)
    tau = np.asarray(t, dtype=float) - params.t0
    return dx, tau


def evaluate_weight(params: CarlemanParams, x, t):
    """Return ``(psi, phi)``."""
    dx, tau = _split(params, x, t)
    psi = np.sum(dx * dx, axis=-1) - params.beta * tau**2
    return psi, np.exp(params.lam * psi)


def log_weight(params: CarlemanParams, x, t) -> np.ndarray:
    """``2 s phi``, the exponent of the Carleman weight ``e^{2 s phi}``."""
    return 2.0 * params.s * evaluate_weight(params, x, t)[1]


def pseudoconvexity_gap(params: CarlemanParams, x, t) -> np.ndarray:
    """``|psi_t|^2 - |grad psi|^2 = 4 beta^2 (t - t0)^2 - 4 |x - x0|^2``."""
    dx, tau = _split(params, x, t)
    return 4.0 * params.beta**2 * tau**2 - 4.0 * np.sum(dx * dx, axis=-1)


def weight_jet(params: CarlemanParams, x, t) -> WeightJet:
    lam, beta = params.lam, params.beta
    dx, tau = _split(params, x, t)
    n = dx.shape[-1]
    r2 = np.sum(dx * dx, axis=-1)

    X = np.exp(lam * r2)
    Theta = np.exp(-lam * beta * tau**2)
    X, Theta = np.broadcast_arrays(X, Theta)
    dx = np.broadcast_to(dx, X.shape + (n,))
    r2 = np.broadcast_to(r2, X.shape)

    # temporal factor: a = lam psi', c = lam psi''
    a = -2.0 * lam * beta * tau * np.ones_like(X)
    c = -2.0 * lam * beta
    th1 = a * Theta
    th2 = (c + a**2) * Theta
    th3 = (a**3 + 3.0 * a * c) * Theta
    th4 = (3.0 * c**2 + 6.0 * a**2 * c + a**4) * Theta

    # spatial factor
    p = 2.0 * n * lam + 4.0 * lam**2 * r2
    lapX = p * X
    lap2X = (p**2 + 32.0 * lam**3 * r2 + 8.0 * n * lam**2) * X
    gradX = 2.0 * lam * dx * X[..., None]
    grad_lapX = ((2.0 * lam * p + 8.0 * lam**2) * X)[..., None] * dx
    eye = np.eye(n)
    hessX = 2.0 * lam * X[..., None, None] * (eye + 2.0 * lam * dx[..., :, None] * dx[..., None, :])

    phi = X * Theta
    psi = r2 - beta * tau**2
    return WeightJet(
        psi=psi,
        phi=phi,
        psi_t=-2.0 * beta * tau * np.ones_like(X),
        grad_psi=2.0 * dx,
        psi_tt=-2.0 * beta,
        hess_psi=2.0 * eye,
        phi_t=X * th1,
        grad_phi=gradX * Theta[..., None],
        phi_tt=X * th2,
        lap_phi=lapX * Theta,
        gap=4.0 * beta**2 * tau**2 - 4.0 * r2,
        grad_phi_t=gradX * th1[..., None],
        hess_phi=hessX * Theta[..., None, None],
        wave_phi=X * th2 - lapX * Theta,
        wave_phi_t=X * th3 - lapX * th1,
        wave2_phi=X * th4 - 2.0 * lapX * th2 + lap2X * Theta,
        grad_wave_phi=gradX * th2[..., None] - grad_lapX * Theta[..., None],
    )
