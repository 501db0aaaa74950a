"""
Neighbour counts of the cell of an adjoined origin seed.

threeD: the cell of O in the tessellation of R^3 by P u {O} under a norm. Rays
from O are bisected for the exit radius; the direction sphere starts from a
subdivided icosahedron and every triangle whose corners see different
co-winners is split again, down to a fixed depth.

planarVoronoi: classical planar Poisson-Voronoi (all heights 0), counted exactly
from the Delaunay triangulation.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import Delaunay

from .config import settings
from .exceptions import DomainError
from .geometry import MetricKind, metric_from_name, norm_values
from .process import SeedArray, sample_poisson_r3, trial_rng
from .services.trials import run_trials

logger = logging.getLogger(__name__)

MAX_DEPTH = 7
THREE_D = "threeD"
PLANAR = "planarVoronoi"
_NO_SEED = -1
_CHUNK = 1 << 22


@dataclass
class FaceCountSample:
    k: int
    probes: int
    metric: str
    mode: str
    unbounded: bool = False
    neighbours: Tuple[int, ...] = ()


# -- direction sphere ---------------------------------------------------------


def _icosahedron() -> Tuple[np.ndarray, List[Tuple[int, int, int]]]:
    g = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        (-1, g, 0), (1, g, 0), (-1, -g, 0), (1, -g, 0),
        (0, -1, g), (0, 1, g), (0, -1, -g), (0, 1, -g),
        (g, 0, -1), (g, 0, 1), (-g, 0, -1), (-g, 0, 1),
    ], dtype=float)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    return verts / np.linalg.norm(verts, axis=1, keepdims=True), faces


class _Sphere:
    """Growing vertex set on the unit sphere with shared edge midpoints."""

    def __init__(self):
        verts, self.faces = _icosahedron()
        self.verts = [v for v in verts]
        self._mid: Dict[Tuple[int, int], int] = {}

    def midpoint(self, i: int, j: int) -> int:
        key = (min(i, j), max(i, j))
        if key not in self._mid:
            v = self.verts[i] + self.verts[j]
            self.verts.append(v / np.linalg.norm(v))
            self._mid[key] = len(self.verts) - 1
        return self._mid[key]

    def split(self, face: Tuple[int, int, int]) -> List[Tuple[int, int, int]]:
        a, b, c = face
        ab, bc, ca = self.midpoint(a, b), self.midpoint(b, c), self.midpoint(c, a)
        return [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]

    def array(self, start: int = 0) -> np.ndarray:
        return np.array(self.verts[start:])


def initial_level(probes: int) -> int:
    """Smallest uniform subdivision level with at least `probes` vertices (10 * 4^L + 2)."""
    level = 0
    while 10 * 4 ** level + 2 < probes:
        level += 1
    return level


# -- radial search ------------------------------------------------------------


def _nearest_competitor(points: np.ndarray, cand: np.ndarray, metric: MetricKind) -> Tuple[np.ndarray, np.ndarray]:
    """(distance, index) of the nearest candidate to each point, in chunks."""
    n = len(points)
    best = np.full(n, np.inf)
    arg = np.full(n, _NO_SEED, np.int64)
    if len(cand) == 0:
        return best, arg
    step = max(1, _CHUNK // max(1, len(cand)))
    for s in range(0, n, step):
        d = norm_values(points[s:s + step, None, :] - cand[None, :, :], metric)
        arg[s:s + step] = np.argmin(d, axis=1)
        best[s:s + step] = d[np.arange(len(d)), arg[s:s + step]]
    return best, arg


def _exit_labels(U: np.ndarray, pos: np.ndarray, ids: np.ndarray, metric: MetricKind, radius: float,
                 tol: float = 1e-9) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exit radius and co-winner id along each direction; _NO_SEED where the origin
    still wins at `radius`.
    """
    n = len(U)
    seed_norms = norm_values(pos, metric) if len(pos) else np.zeros(0)
    u_norm = float(norm_values(U, metric).max()) if n else 1.0

    def wins(r: np.ndarray, rows: np.ndarray) -> np.ndarray:
        reach = 2.0 * float(r.max()) * u_norm
        cand = pos[seed_norms <= reach]
        y = U[rows] * r[:, None]
        d_c, _ = _nearest_competitor(y, cand, metric)
        return norm_values(y, metric) <= d_c

    lo = np.zeros(n)
    hi = np.full(n, min(1.0, radius))
    won = wins(hi, np.arange(n))
    while True:
        grow = np.flatnonzero(won & (hi < radius))
        if len(grow) == 0:
            break
        lo[grow] = hi[grow]
        hi[grow] = np.minimum(2.0 * hi[grow], radius)
        won[grow] = wins(hi[grow], grow)
    labels = np.full(n, _NO_SEED, np.int64)
    bounded = np.flatnonzero(~won)
    if len(bounded):
        l, h = lo[bounded], hi[bounded]
        steps = int(math.ceil(math.log2(max(float(h.max()), tol) / tol))) + 1
        for _ in range(steps):
            mid = 0.5 * (l + h)
            w = wins(mid, bounded)
            l = np.where(w, mid, l)
            h = np.where(w, h, mid)
        y = U[bounded] * h[:, None]
        _, arg = _nearest_competitor(y, pos, metric)
        labels[bounded] = ids[arg]
        hi[bounded] = 0.5 * (l + h)
    return hi, labels


def neighbor_count_3d(P: SeedArray, metric: MetricKind, probes: int = 64, radius: Optional[float] = None,
                      max_depth: int = MAX_DEPTH) -> FaceCountSample:
    """
    Number of distinct seeds whose cells meet the cell of O = (0, 0, 0) in the
    tessellation of R^3 by P u {O}.

    Args:
        P: seeds as points of R^3 (w1, w2, t), heights of either sign
        metric: norm
        probes: minimum number of initial directions (>= 64)
        radius: ball radius searched along each ray (default: the farthest seed)

    Returns:
        FaceCountSample; unbounded is set when some ray never leaves the cell
    """
    if probes < 64:
        raise DomainError(f"need at least 64 probes, got {probes}")
    pos = P.positions()
    ids = P.ids
    if radius is None:
        radius = 2.0 * float(norm_values(pos, metric).max()) + 1.0 if len(pos) else 1.0
    sphere = _Sphere()
    level = initial_level(probes)
    faces = list(sphere.faces)
    for _ in range(level):
        faces = [child for f in faces for child in sphere.split(f)]
    labels: List[int] = []

    def probe_new():
        fresh = sphere.array(len(labels))
        if len(fresh):
            _, lab = _exit_labels(fresh, pos, ids, metric, radius)
            labels.extend(int(v) for v in lab)

    probe_new()
    active = faces
    for _ in range(max(0, max_depth - level)):
        split = [f for f in active if len({labels[f[0]], labels[f[1]], labels[f[2]]}) > 1]
        if not split:
            break
        active = [child for f in split for child in sphere.split(f)]
        probe_new()
    found = sorted({v for v in labels if v != _NO_SEED})
    return FaceCountSample(
        k=len(found),
        probes=10 * 4 ** level + 2,
        metric=metric.value,
        mode=THREE_D,
        unbounded=_NO_SEED in labels,
        neighbours=tuple(found),
    )


def delaunay_neighbours_3d(P: SeedArray) -> List[int]:
    """Euclidean neighbours of the origin from the 3D Delaunay triangulation of P u {O}."""
    pts = np.vstack([np.zeros((1, 3)), P.positions()])
    tri = Delaunay(pts)
    indptr, indices = tri.vertex_neighbor_vertices
    return sorted(int(P.ids[j - 1]) for j in indices[indptr[0]:indptr[1]])


def planar_neighbor_count(points: np.ndarray, ids: Optional[np.ndarray] = None) -> FaceCountSample:
    """Neighbours of the origin in the planar Voronoi diagram of points u {0}."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    ids = np.arange(len(points)) if ids is None else np.asarray(ids)
    if len(points) < 3:
        return FaceCountSample(len(points), 0, MetricKind.EUCLIDEAN3.value, PLANAR, True, tuple(int(i) for i in ids))
    tri = Delaunay(np.vstack([np.zeros((1, 2)), points]))
    indptr, indices = tri.vertex_neighbor_vertices
    found = sorted(int(ids[j - 1]) for j in indices[indptr[0]:indptr[1]])
    hull = 0 in set(np.unique(tri.convex_hull).tolist())
    return FaceCountSample(len(found), 0, MetricKind.EUCLIDEAN3.value, PLANAR, hull, tuple(found))


# -- Monte Carlo --------------------------------------------------------------


def local_radius(k_max: int, A: Optional[float] = None) -> float:
    """2 A k_max^{1/3}: seeds beyond this cannot neighbour O outside a negligible event."""
    return 2.0 * (A or settings.padding_A) * k_max ** (1.0 / 3.0)


def face_trial(trial_index: int, *, metric: str, k_max: int, probes: int, mode: str, master_seed: int,
               A: Optional[float] = None) -> FaceCountSample:
    R = local_radius(k_max, A)
    rng = trial_rng(master_seed, trial_index)
    if mode == PLANAR:
        n = rng.poisson(4.0 * R * R)
        pts = (rng.random((n, 2)) * 2.0 - 1.0) * R
        return planar_neighbor_count(pts)
    P = sample_poisson_r3(R, 1.0, rng)
    return neighbor_count_3d(P, metric_from_name(metric), probes, radius=R)


@dataclass
class FaceTail:
    ks: List[int]
    survival: List[float]
    stderr: List[float]
    trials: int
    metric: str
    mode: str
    log_differences: List[float]
    histogram: Dict[int, int] = field(default_factory=dict)
    mean_k: float = 0.0
    unbounded: int = 0

    def rows(self) -> List[dict]:
        return [
            {"k": k, "survival": s, "stderr": e, "trials": self.trials, "metric": self.metric, "mode": self.mode}
            for k, s, e in zip(self.ks, self.survival, self.stderr)
        ]


def face_counts(trials: int, metric: str = "jm", k_max: int = 25, probes: int = 64, mode: str = THREE_D,
                master_seed: int = 0, workers: int = 1) -> List[FaceCountSample]:
    return run_trials(face_trial, range(trials), workers, metric=metric, k_max=k_max, probes=probes, mode=mode,
                      master_seed=master_seed)


def face_tail_estimate(metric: str, k_min: int, k_max: int, trials: int, mode: str = THREE_D, probes: int = 64,
                       master_seed: int = 0, workers: int = 1,
                       samples: Optional[List[FaceCountSample]] = None) -> FaceTail:
    """Empirical Pr(k >= k0) for k0 in [k_min, k_max] and successive log-survival differences."""
    if k_min > k_max:
        raise DomainError("k_min must not exceed k_max")
    samples = samples if samples is not None else face_counts(trials, metric, k_max, probes, mode, master_seed, workers)
    counts = np.array([s.k for s in samples])
    ks = list(range(k_min, k_max + 1))
    survival = [float(np.mean(counts >= k)) for k in ks]
    stderr = [math.sqrt(p * (1.0 - p) / len(counts)) for p in survival]
    logs = [math.log(p) if p > 0 else float("-inf") for p in survival]
    diffs = [b - a for a, b in zip(logs, logs[1:]) if math.isfinite(a) and math.isfinite(b)]
    values, freq = np.unique(counts, return_counts=True)
    return FaceTail(
        ks=ks, survival=survival, stderr=stderr, trials=len(counts), metric=metric, mode=mode,
        log_differences=diffs, histogram={int(v): int(f) for v, f in zip(values, freq)},
        mean_k=float(counts.mean()), unbounded=sum(s.unbounded for s in samples),
    )


def hilhorst_ratio(k: int) -> float:
    """Asymptotic p_{k+1} / p_k = 8 pi^2 / ((2k+1)(2k+2))."""
    return 8.0 * math.pi ** 2 / ((2 * k + 1) * (2 * k + 2))


@dataclass
class HilhorstRow:
    k: int
    hits: int
    ratio: float
    predicted: float
    relative_deviation: float


@dataclass
class HilhorstTable:
    rows: List[HilhorstRow]
    dropped: List[int]
    trials: int


def hilhorst_ratio_check(ks: Sequence[int], trials: int, master_seed: int = 0, min_hits: int = 100,
                         workers: int = 1, samples: Optional[List[FaceCountSample]] = None) -> HilhorstTable:
    """
    Empirical p_{k+1} / p_k for planar Poisson-Voronoi cells against the asymptotic
    ratio; k values where p_k or p_{k+1} has fewer than min_hits hits are dropped.
    """
    k_top = max(ks) + 1 if ks else 1
    samples = samples if samples is not None else face_counts(trials, "euclid3", max(k_top, 4), 64, PLANAR, master_seed, workers)
    counts = np.array([s.k for s in samples])
    rows, dropped = [], []
    for k in sorted(set(ks)):
        hits, hits_next = int(np.sum(counts == k)), int(np.sum(counts == k + 1))
        if hits < min_hits or hits_next < min_hits:
            dropped.append(k)
            logger.warning("k=%d dropped from the ratio table (%d / %d hits)", k, hits, hits_next)
            continue
        ratio = hits_next / hits
        predicted = hilhorst_ratio(k)
        rows.append(HilhorstRow(k, hits, ratio, predicted, abs(ratio - predicted) / predicted))
    return HilhorstTable(rows, dropped, len(counts))
