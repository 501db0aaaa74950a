"""Poisson point processes with a monotone black/white colouring."""
import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from .exceptions import DomainError
from .geometry import MetricKind, Rect, TorusGeometry

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Seed:
    """A point z = (w, t) of the process plus its colour uniform u."""
    id: int
    w: Tuple[float, float]
    t: float
    u: float

    def is_black(self, p: float) -> bool:
        return self.u <= p


@dataclass
class SeedArray:
    """Struct-of-arrays seed container; row i is one Seed."""
    ids: np.ndarray
    w: np.ndarray
    t: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        self.w = np.asarray(self.w, dtype=float).reshape(-1, 2)
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.u = np.asarray(self.u, dtype=float).reshape(-1)
        if not (len(self.ids) == len(self.w) == len(self.t) == len(self.u)):
            raise DomainError("seed arrays have mismatched lengths")

    @classmethod
    def empty(cls) -> "SeedArray":
        return cls(np.zeros(0, np.int64), np.zeros((0, 2)), np.zeros(0), np.zeros(0))

    @classmethod
    def from_seeds(cls, seeds: Sequence[Seed]) -> "SeedArray":
        if not seeds:
            return cls.empty()
        return cls(
            [s.id for s in seeds],
            [s.w for s in seeds],
            [s.t for s in seeds],
            [s.u for s in seeds],
        )

    @classmethod
    def concat(cls, parts: Sequence["SeedArray"]) -> "SeedArray":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.ids for p in parts]),
            np.concatenate([p.w for p in parts]),
            np.concatenate([p.t for p in parts]),
            np.concatenate([p.u for p in parts]),
        )

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> Seed:
        return Seed(int(self.ids[i]), (float(self.w[i, 0]), float(self.w[i, 1])), float(self.t[i]), float(self.u[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, selector) -> "SeedArray":
        return SeedArray(self.ids[selector], self.w[selector], self.t[selector], self.u[selector])

    def positions(self) -> np.ndarray:
        """(n, 3) array of (w1, w2, t)."""
        return np.column_stack([self.w, self.t]) if len(self) else np.zeros((0, 3))

    def with_ids(self, ids: np.ndarray) -> "SeedArray":
        return SeedArray(ids, self.w, self.t, self.u)

    def with_heights(self, t: np.ndarray) -> "SeedArray":
        return SeedArray(self.ids, self.w, t, self.u)

    def id_set(self) -> set:
        return set(self.ids.tolist())


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo, hi] in R^2 x R (no wrapping)."""
    lo: Tuple[float, float, float]
    hi: Tuple[float, float, float]

    def __post_init__(self):
        if any(not (math.isfinite(a) and math.isfinite(b)) or b < a for a, b in zip(self.lo, self.hi)):
            raise DomainError(f"degenerate box {self}")

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))


@dataclass(frozen=True)
class PlanarWindow:
    """
    A padded planar window around a target rectangle, truncated in height.

    Seeds live in target.expanded(padding) x [0, height_cap]. safe_radius is one
    padding radius; nearest seeds closer than that to the outer walls or the
    height cap mark a query as boundary-suspect.
    """
    target: Rect
    padding: float
    height_cap: float
    safe_radius: float

    def __post_init__(self):
        if self.padding < self.safe_radius:
            raise DomainError("window padding must be at least one padding radius")
        if self.height_cap < self.padding:
            raise DomainError("window height cap must be at least the padding")

    @classmethod
    def around(cls, target: Rect, metric: MetricKind, A: float = 2.0, factor: float = 3.0) -> "PlanarWindow":
        """Default window: padding = factor * padding_radius, height cap = padding."""
        radius = padding_radius(max(target.scale, 3.0), metric, A)
        return cls(target=target, padding=factor * radius, height_cap=factor * radius, safe_radius=radius)

    @property
    def outer(self) -> Rect:
        return self.target.expanded(self.padding)

    @property
    def box(self) -> Box:
        o = self.outer
        return Box((o.a, o.c, 0.0), (o.b, o.d, self.height_cap))

    @property
    def volume(self) -> float:
        return self.box.volume


SimDomain = Union[TorusGeometry, PlanarWindow, Box]


def domain_box(domain: SimDomain) -> Box:
    if isinstance(domain, TorusGeometry):
        return Box((0.0, 0.0, 0.0), (domain.side, domain.side, domain.thickness))
    if isinstance(domain, PlanarWindow):
        return domain.box
    return domain


def trial_rng(master_seed: int, trial_index: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (master_seed, trial_index, stream)."""
    key = np.random.SeedSequence([master_seed & 0xFFFFFFFFFFFFFFFF, trial_index, stream])
    return np.random.Generator(np.random.Philox(key))


def sample_box(box: Box, intensity: float, rng: np.random.Generator, id_offset: int = 0) -> SeedArray:
    """Homogeneous Poisson process on a box, each seed with an independent uniform u."""
    if not intensity > 0:
        raise DomainError(f"intensity must be positive, got {intensity}")
    volume = box.volume
    if volume == 0.0:
        return SeedArray.empty()
    n = int(rng.poisson(intensity * volume))
    lo, hi = np.asarray(box.lo), np.asarray(box.hi)
    pts = lo + (hi - lo) * rng.random((n, 3))
    u = rng.random(n)
    return SeedArray(np.arange(id_offset, id_offset + n), pts[:, :2], pts[:, 2], u)


def sample_poisson(domain: SimDomain, intensity: float, master_seed: int, trial_index: int) -> SeedArray:
    """
    Sample a Poisson process on a simulation domain.

    The output is a deterministic function of (master_seed, trial_index).

    Args:
        domain: torus, padded window or plain box
        intensity: points per unit volume
        master_seed: experiment seed
        trial_index: trial number

    Returns:
        Seeds with ids 0..n-1
    """
    box = domain_box(domain)
    seeds = sample_box(box, intensity, trial_rng(master_seed, trial_index))
    logger.debug("trial %d: sampled %d seeds (volume %.1f)", trial_index, len(seeds), box.volume)
    return seeds


def sample_poisson_r3(radius: float, intensity: float, rng: np.random.Generator) -> SeedArray:
    """Process on the cube [-radius, radius]^3 of R^3 (heights of both signs)."""
    return sample_box(Box((-radius,) * 3, (radius,) * 3), intensity, rng)


@dataclass
class ColouredProcess:
    """Seeds with the threshold colouring P+ = {u <= p}, P- = {u > p}."""
    seeds: SeedArray
    p: float
    intensity: float = 1.0
    master_seed: int = 0
    trial_index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise DomainError(f"p must lie in [0, 1], got {self.p}")

    def black_mask(self) -> np.ndarray:
        return self.seeds.u <= self.p

    def with_p(self, p: float) -> "ColouredProcess":
        """Same positions and uniforms at another level; black sets are nested in p."""
        return ColouredProcess(self.seeds, p, self.intensity, self.master_seed, self.trial_index)


def colour_split(proc: ColouredProcess) -> Tuple[SeedArray, SeedArray]:
    """Partition into (black, white) seeds by u <= p."""
    mask = proc.black_mask()
    return proc.seeds.subset(mask), proc.seeds.subset(~mask)


def padding_radius(scale: float, m: MetricKind = MetricKind.JOHNSON_MEHL, A: float = 2.0) -> float:
    """
    A (log scale)^{1/3}: distance within which every point of a region of diameter
    `scale` has a process point, except on an event of vanishing probability.

    Raises:
        DomainError: scale < 3 or A <= 0
    """
    if scale < 3.0:
        raise DomainError(f"padding radius needs scale >= 3, got {scale}")
    if not A > 0:
        raise DomainError(f"padding constant must be positive, got {A}")
    return A * math.log(scale) ** (1.0 / 3.0)
