"""Rectangular domains, the multiplier point and the observed part of the boundary."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    """Raised for inadmissible geometric configurations."""


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``[lower, upper]`` in one or two dimensions."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or len(lo) not in (1, 2):
            raise GeometryError(f"domain must be 1-D or 2-D, got corners {lo} and {hi}")
        if any(b <= a for a, b in zip(lo, hi)):
            raise GeometryError(f"upper corner {hi} must exceed lower corner {lo} componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def sides(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lower, self.upper))))

    def contains_closure(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= np.array(self.lower)) and np.all(x <= np.array(self.upper)))

    @classmethod
    def unit(cls, dim: int = 2) -> "Domain":
        return cls((0.0,) * dim, (1.0,) * dim)


@dataclass(frozen=True)
class Face:
    """One face ``x[axis] == lower/upper`` of the box.

    ``observed`` is the per-face flag; ``segments`` lists the observed
    sub-intervals of the face's tangential coordinate (empty for a face that
    is entirely unobserved, a single full interval for a fully observed one).
    """

    axis: int
    side: int  # 0 -> lower, 1 -> upper
    normal: tuple[float, ...]
    observed: bool
    segments: tuple[tuple[float, float], ...] = ()

    @property
    def name(self) -> str:
        return face_name(self.axis, self.side)


def face_name(axis: int, side: int) -> str:
    if axis == 0:
        return "right" if side else "left"
    return "top" if side else "bottom"


@dataclass(frozen=True)
class ObservationBoundary:
    faces: tuple[Face, ...]
    x0: tuple[float, ...] | None  # None: every face kept, no sign test

    @property
    def observed(self) -> tuple[Face, ...]:
        return tuple(f for f in self.faces if f.observed)

    @property
    def observed_names(self) -> list[str]:
        return [f.name for f in self.observed]

    def is_observed(self, x, face: Face) -> bool:
        """Pointwise sign test on ``face`` at boundary point ``x``."""
        return sign_function(x, self.x0, face.normal) >= 0.0

    def restrict(self, names) -> "ObservationBoundary":
        """Copy keeping only the observed faces listed in ``names``."""
        names = set(names)
        faces = tuple(
            f if f.name in names else Face(f.axis, f.side, f.normal, False, ())
            for f in self.faces
        )
        return ObservationBoundary(faces, self.x0)


@dataclass(frozen=True)
class DistanceExtrema:
    d0: float
    d1: float


def sign_function(x, x0, normal) -> float:
    return float(np.dot(np.subtract(x, x0), normal))


def _check_outside(domain: Domain, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (domain.dim,):
        raise GeometryError(f"x0 must have {domain.dim} components, got {x0.shape[0]}")
    if domain.contains_closure(x0):
        raise GeometryError(f"x0={tuple(x0)} must lie outside the closed domain")
    return x0


def distance_extrema(domain: Domain, x0) -> DistanceExtrema:
    """Min and max of ``|x - x0|`` over the closed box."""
    x0 = _check_outside(domain, x0)
    lo, hi = np.array(domain.lower), np.array(domain.upper)
    gap = np.maximum.reduce([lo - x0, np.zeros_like(x0), x0 - hi])
    d0 = float(np.linalg.norm(gap))
    d1 = float(np.max(np.linalg.norm(domain.corners() - x0, axis=1)))
    return DistanceExtrema(d0, d1)


def _face_segments(domain: Domain, x0: np.ndarray, axis: int, side: int, normal):
    """Observed sub-intervals of a face (1-D tangential coordinate or a point).

    The sign function is affine along the face, so at most one zero crossing
    splits it.
    """
    coord = domain.upper[axis] if side else domain.lower[axis]
    if domain.dim == 1:
        x = np.array([coord])
        return ((0.0, 0.0),) if sign_function(x, x0, normal) >= 0 else ()
    other = 1 - axis
    a, b = domain.lower[other], domain.upper[other]

    def point(tau):
        p = np.empty(2)
        p[axis], p[other] = coord, tau
        return p

    fa, fb = sign_function(point(a), x0, normal), sign_function(point(b), x0, normal)
    if fa >= 0 and fb >= 0:
        return ((a, b),)
    if fa < 0 and fb < 0:
        return ()
    root = a + (b - a) * fa / (fa - fb)
    return ((root, b),) if fb >= 0 else ((a, root),)


def observation_boundary(domain: Domain, x0) -> ObservationBoundary:
    """Faces (or face segments) where ``(x - x0) . nu >= 0``."""
    x0 = _check_outside(domain, x0)
    faces = []
    for axis in range(domain.dim):
        for side in (0, 1):
            normal = [0.0] * domain.dim
            normal[axis] = 1.0 if side else -1.0
            segments = _face_segments(domain, x0, axis, side, normal)
            faces.append(Face(axis, side, tuple(normal), bool(segments), segments))
    return ObservationBoundary(tuple(faces), tuple(float(v) for v in x0))


def whole_boundary(domain: Domain) -> ObservationBoundary:
    """All faces of the box, without the sign condition."""
    faces = []
    for axis in range(domain.dim):
        for side in (0, 1):
            normal = [0.0] * domain.dim
            normal[axis] = 1.0 if side else -1.0
            lo, hi = (0.0, 0.0) if domain.dim == 1 else (domain.lower[1 - axis], domain.upper[1 - axis])
            faces.append(Face(axis, side, tuple(normal), True, ((lo, hi),)))
    return ObservationBoundary(tuple(faces), None)


def time_threshold(extrema: DistanceExtrema) -> float:
    return math.sqrt(max(extrema.d1**2 - extrema.d0**2, 0.0))


def min_observation_time(domain: Domain, x0) -> float:
    """``sqrt(d1^2 - d0^2)``; observation times must exceed it strictly."""
    return time_threshold(distance_extrema(domain, x0))


def select_beta(domain: Domain, x0, T: float) -> float:
    """Pick ``beta`` in ``(r, 1)`` with ``r = (d1^2 - d0^2) / T^2``.

    Midpoint of the admissible interval, capped at 0.99 whenever the cap still
    exceeds ``r``.
    """
    extrema = distance_extrema(domain, x0)
    r = (extrema.d1**2 - extrema.d0**2) / T**2
    if r >= 1.0:
        raise GeometryError(
            f"observation time T={T:g} does not exceed sqrt(d1^2 - d0^2)="
            f"{time_threshold(extrema):g}; no beta < 1 is admissible"
        )
    mid = 0.5 * (r + 1.0)
    capped = min(0.99, mid)
    return capped if capped > r else mid


def c0_gap(extrema: DistanceExtrema, lam: float, beta: float, T: float) -> float:
    """``2 (exp(lam d0^2) - exp(lam (d1^2 - beta T^2))``; positive for admissible beta."""
    return 2.0 * (math.exp(lam * extrema.d0**2) - math.exp(lam * (extrema.d1**2 - beta * T**2)))
