"""Norms on R^2 x R, the metrics they induce, and torus distances."""
import math
from dataclasses import dataclass
from enum import Enum
from itertools import product

import numpy as np

from .exceptions import DomainError


class MetricKind(str, Enum):
    """Norms on 3-vectors (x1, x2, t)."""
    JOHNSON_MEHL = "jm"
    EUCLIDEAN3 = "euclid3"
    L1_SUM = "l1"


def metric_from_name(name: "str | MetricKind") -> MetricKind:
    """Parse a CLI / config metric string."""
    try:
        return MetricKind(name)
    except ValueError as e:
        raise DomainError(f"unknown metric {name!r}") from e


@dataclass(frozen=True)
class Vec3:
    """A point or displacement of R^2 x R."""
    x1: float
    x2: float
    t: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x1, self.x2, self.t)):
            raise DomainError(f"non-finite vector {self}")

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x1 - other.x1, self.x2 - other.x2, self.t - other.t)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.t], dtype=float)


@dataclass(frozen=True)
class TorusGeometry:
    """T(s) x [0, h]: the plane wraps modulo s, the t-axis does not."""
    side: float
    thickness: float

    def __post_init__(self):
        if not self.side > 0 or not self.thickness > 0:
            raise DomainError(f"torus needs positive side and thickness, got {self}")

    @property
    def volume(self) -> float:
        return self.side * self.side * self.thickness

    @property
    def injectivity_radius(self) -> float:
        return self.side / 2.0

    def contains(self, v: Vec3) -> bool:
        return 0.0 <= v.x1 < self.side and 0.0 <= v.x2 < self.side and 0.0 <= v.t <= self.thickness


def norm_values(v: np.ndarray, m: MetricKind) -> np.ndarray:
    """Vectorized norm over the last axis of an (..., 3) array."""
    v = np.asarray(v, dtype=float)
    x1, x2, t = v[..., 0], v[..., 1], v[..., 2]
    if m is MetricKind.JOHNSON_MEHL:
        return np.hypot(x1, x2) + np.abs(t)
    if m is MetricKind.EUCLIDEAN3:
        return np.sqrt(x1 * x1 + x2 * x2 + t * t)
    return np.abs(x1) + np.abs(x2) + np.abs(t)


def norm_value(v: Vec3, m: MetricKind) -> float:
    """Norm of v under m."""
    return float(norm_values(v.as_array(), m))


def planar_norms(dx: np.ndarray, dy: np.ndarray, t: np.ndarray, m: MetricKind) -> np.ndarray:
    """Norm of (dx, dy, t) with broadcasting, without stacking into (..., 3)."""
    if m is MetricKind.JOHNSON_MEHL:
        return np.hypot(dx, dy) + np.abs(t)
    if m is MetricKind.EUCLIDEAN3:
        return np.sqrt(dx * dx + dy * dy + t * t)
    return np.abs(dx) + np.abs(dy) + np.abs(t)


def point_seed_distances(x: np.ndarray, w: np.ndarray, t: np.ndarray, m: MetricKind) -> np.ndarray:
    """
    Matrix of d((x_i, 0), (w_j, t_j)).

    Args:
        x: (n, 2) planar query points
        w: (k, 2) planar seed positions
        t: (k,) seed heights
        m: metric

    Returns:
        (n, k) array of distances
    """
    dx = x[:, 0][:, None] - w[:, 0][None, :]
    dy = x[:, 1][:, None] - w[:, 1][None, :]
    return planar_norms(dx, dy, t[None, :], m)


_WRAP_SHIFTS = tuple(product((-1.0, 0.0, 1.0), repeat=2))


def torus_distance(a: Vec3, b: Vec3, g: TorusGeometry, m: MetricKind) -> float:
    """
    Distance on T(s) x [0, h]: minimum over the 9 planar wrap images of a - b.

    Raises:
        DomainError: a or b lies outside the torus domain
    """
    if not g.contains(a) or not g.contains(b):
        raise DomainError(f"points {a}, {b} outside torus {g}")
    diff = a - b
    return min(
        norm_value(Vec3(diff.x1 + i * g.side, diff.x2 + j * g.side, diff.t), m)
        for i, j in _WRAP_SHIFTS
    )


def torus_distances(a: np.ndarray, b: np.ndarray, side: float, m: MetricKind) -> np.ndarray:
    """
    Vectorized torus distance between matching rows of two (..., 3) arrays.

    Enumerates the 9 planar wrap images; no domain check (internal use).
    """
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    best = None
    for i, j in _WRAP_SHIFTS:
        d = planar_norms(diff[..., 0] + i * side, diff[..., 1] + j * side, diff[..., 2], m)
        best = d if best is None else np.minimum(best, d)
    return best


def unit_cube_diameter(m: MetricKind) -> float:
    """C_d = sup{d(x, y) : x, y in [0,1]^3}, attained at (1,1,1) for these norms."""
    return norm_value(Vec3(1.0, 1.0, 1.0), m)


@dataclass(frozen=True)
class Rect:
    """R = [a, b] x [c, d] in the plane."""
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not (self.a < self.b and self.c < self.d):
            raise DomainError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.b - self.a

    @property
    def height(self) -> float:
        return self.d - self.c

    @property
    def aspect(self) -> float:
        return self.width / self.height

    @property
    def scale(self) -> float:
        return self.height

    @property
    def area(self) -> float:
        return self.width * self.height

    def expanded(self, margin: float) -> "Rect":
        return Rect(self.a - margin, self.b + margin, self.c - margin, self.d + margin)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return (x[:, 0] >= self.a) & (x[:, 0] <= self.b) & (x[:, 1] >= self.c) & (x[:, 1] <= self.d)

    def distance_to_boundary(self, x: np.ndarray) -> np.ndarray:
        """Planar distance from interior points to the rectangle's edges."""
        x = np.atleast_2d(x)
        return np.minimum.reduce([x[:, 0] - self.a, self.b - x[:, 0], x[:, 1] - self.c, self.d - x[:, 1]])
