"""Manufactured fields with known wave-operator residuals.

All families vanish on the boundary of the box. Sine modes use
``sin(k pi (x - lower) / side)`` so they fit any rectangle.
"""

from __future__ import annotations

import numpy as np

from .grid import Grid


def _modes(grid: Grid, ks) -> tuple[np.ndarray, float]:
    """Spatial product of sines on the lattice and its Laplacian eigenvalue ``mu``."""
    x = grid.points()
    out = np.ones(grid.spatial_shape)
    mu = 0.0
    for i, k in enumerate(ks):
        lo, side = grid.domain.lower[i], grid.domain.sides[i]
        out = out * np.sin(k * np.pi * (x[..., i] - lo) / side)
        mu += (k * np.pi / side) ** 2
    return out, mu


def manufactured_wave(grid: Grid):
    """``u = t^2 S`` with ``S`` the lowest sine mode; returns ``(u, rhs)`` with ``rhs = u_tt - lap u``."""
    S, mu = _modes(grid, (1,) * grid.dim)
    t = grid.times.reshape((-1,) + (1,) * grid.dim)
    return t**2 * S, (2.0 + mu * t**2) * S


def bubble(grid: Grid) -> np.ndarray:
    """Spatial polynomial ``prod (x_i - lo_i)(hi_i - x_i)``."""
    x = grid.points()
    out = np.ones(grid.spatial_shape)
    for i in range(grid.dim):
        out = out * (x[..., i] - grid.domain.lower[i]) * (grid.domain.upper[i] - x[..., i])
    return out


def polynomial_z(grid: Grid) -> np.ndarray:
    """``z = t * prod x_i (1 - x_i)`` (on a general box, the bubble polynomial)."""
    t = grid.times.reshape((-1,) + (1,) * grid.dim)
    return t * bubble(grid)[None]


def random_smooth_v(grid: Grid, rng: np.random.Generator, n_modes: int = 3, max_k: int = 3):
    """Random ``v = sum_m tau_m(t) S_m(x)`` with ``v(., 0) = 0``, ``v = 0`` on the boundary.

    ``tau_m = a t + b t^2 + c t^3``. Returns ``(v, F)`` with the exact residual
    ``F = v_tt - lap v``.
    """
    t = grid.times.reshape((-1,) + (1,) * grid.dim)
    v = np.zeros(grid.shape)
    F = np.zeros(grid.shape)
    for _ in range(n_modes):
        ks = rng.integers(1, max_k + 1, size=grid.dim)
        a, b, c = rng.normal(size=3)
        S, mu = _modes(grid, ks)
        tau = a * t + b * t**2 + c * t**3
        tau_tt = 2.0 * b + 6.0 * c * t
        v += tau * S
        F += (tau_tt + mu * tau) * S
    return v, F


def sine_source(grid: Grid, modes) -> np.ndarray:
    """``f = sum amp * S_k`` for ``modes = [(k1, [k2,] amp), ...]``."""
    f = np.zeros(grid.spatial_shape)
    for mode in modes:
        *ks, amp = mode
        f += amp * _modes(grid, ks)[0]
    return f


def random_source_modes(rng: np.random.Generator, dim: int, n_modes: int = 4, max_k: int = 3):
    """Random smooth source as a mode list usable by :func:`sine_source` on any grid."""
    modes = []
    for _ in range(n_modes):
        ks = [int(k) for k in rng.integers(1, max_k + 1, size=dim)]
        modes.append((*ks, float(rng.normal())))
    return modes
