"""
Tessellations of the plane induced by a coloured process and a metric on R^2 x R.

A point x belongs to the cell of z = (w, t) when d((x,0), z) is minimal over the
process, ties going to the lowest seed id. Cells are never materialized: every
query goes through a planar bucket grid over the seed positions, and cell
boundaries are found by bisection along rays from the seed's centre (cells are
star domains about w whenever they contain it).
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Optional, Tuple, Union

import networkx as nx
import numpy as np

from .config import settings
from .exceptions import DomainError, EmptyProcessError
from .geometry import MetricKind, Rect, TorusGeometry, planar_norms, point_seed_distances
from .process import ColouredProcess, PlanarWindow, Seed, SeedArray, SimDomain, padding_radius

logger = logging.getLogger(__name__)

NO_SEED = -1
RAY_TOLERANCE = 1e-9
MIN_ANGULAR_STEP = 2.0 * math.pi / 2 ** 20


class Colour(str, Enum):
    BLACK = "black"
    WHITE = "white"


@dataclass(frozen=True)
class NearestResult:
    """Winner and runner-up of a nearest-seed query."""
    winner: int
    d1: float
    runner_up: int
    d2: float


class BucketIndex:
    """
    Planar grid of buckets keyed by seed position.

    Rows must be ordered so that row order is the tie-break order. `base` maps each
    row to the seed it represents (torus wrap images share a base). With
    open_edges, no seed lies beyond the grid, so a search that reaches a grid edge
    is complete in that direction.
    """

    def __init__(self, w: np.ndarray, t: np.ndarray, base: np.ndarray, bucket_size: float,
                 bounds: Rect, open_edges: bool = True):
        self.w = w
        self.t = t
        self.base = base
        self.size = float(bucket_size)
        self.x0, self.y0 = bounds.a, bounds.c
        self.nx = max(1, int(math.ceil(bounds.width / self.size)))
        self.ny = max(1, int(math.ceil(bounds.height / self.size)))
        self.open_edges = open_edges
        ix, iy = self._cells(w)
        keys = ix * self.ny + iy
        self._rows = np.argsort(keys, kind="stable")
        self._starts = np.searchsorted(keys[self._rows], np.arange(self.nx * self.ny + 1))

    def __len__(self) -> int:
        return len(self.w)

    def _cells(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ix = np.clip(np.floor((x[:, 0] - self.x0) / self.size), 0, self.nx - 1).astype(np.int64)
        iy = np.clip(np.floor((x[:, 1] - self.y0) / self.size), 0, self.ny - 1).astype(np.int64)
        return ix, iy

    def _block(self, bi: int, bj: int, r: int):
        i0, i1 = max(bi - r, 0), min(bi + r, self.nx - 1)
        j0, j1 = max(bj - r, 0), min(bj + r, self.ny - 1)
        parts = [self._rows[self._starts[i * self.ny + j0]:self._starts[i * self.ny + j1 + 1]]
                 for i in range(i0, i1 + 1)]
        rows = np.sort(np.concatenate(parts)) if parts else np.zeros(0, np.int64)
        full = i0 == 0 and j0 == 0 and i1 == self.nx - 1 and j1 == self.ny - 1
        return rows, (i0, i1, j0, j1), full

    def _coverage(self, x: np.ndarray, extent) -> np.ndarray:
        i0, i1, j0, j1 = extent
        inf = np.full(len(x), np.inf)
        left = inf if (i0 == 0 and self.open_edges) else x[:, 0] - (self.x0 + i0 * self.size)
        right = inf if (i1 == self.nx - 1 and self.open_edges) else self.x0 + (i1 + 1) * self.size - x[:, 0]
        down = inf if (j0 == 0 and self.open_edges) else x[:, 1] - (self.y0 + j0 * self.size)
        up = inf if (j1 == self.ny - 1 and self.open_edges) else self.y0 + (j1 + 1) * self.size - x[:, 1]
        return np.minimum.reduce([left, right, down, up])

    def query(self, x: np.ndarray, metric: MetricKind, need_runner: bool = True):
        """
        Nearest and second-nearest seeds (as base indices) for each planar query.

        Returns:
            (winner_row, d1, runner_row, d2, resolved); unresolved queries can only
            occur without open edges and must be finished by a full scan.
        """
        n = len(x)
        win = np.full(n, NO_SEED, np.int64)
        run = np.full(n, NO_SEED, np.int64)
        d1 = np.full(n, np.inf)
        d2 = np.full(n, np.inf)
        resolved = np.zeros(n, bool)
        if n == 0 or len(self.w) == 0:
            resolved[:] = len(self.w) == 0
            return win, d1, run, d2, resolved
        ix, iy = self._cells(x)
        qkeys = ix * self.ny + iy
        order = np.argsort(qkeys, kind="stable")
        groups = np.split(order, np.flatnonzero(np.diff(qkeys[order])) + 1)
        for group in groups:
            bi, bj = int(ix[group[0]]), int(iy[group[0]])
            pending = group
            r = 1
            while len(pending):
                rows, extent, full = self._block(bi, bj, r)
                if len(rows) == 0:
                    if full:
                        break
                    r *= 2
                    continue
                q = x[pending]
                dist = point_seed_distances(q, self.w[rows], self.t[rows], metric)
                k = np.argmin(dist, axis=1)
                at = np.arange(len(pending))
                best = dist[at, k]
                wrow = rows[k]
                if need_runner:
                    same = self.base[rows][None, :] == self.base[wrow][:, None]
                    dist = np.where(same, np.inf, dist)
                    k2 = np.argmin(dist, axis=1)
                    second = dist[at, k2]
                    rrow = np.where(np.isfinite(second), self.base[rows[k2]], NO_SEED)
                    target = second
                else:
                    second = np.full(len(pending), np.inf)
                    rrow = np.full(len(pending), NO_SEED, np.int64)
                    target = best
                ok = target < self._coverage(q, extent)
                done = np.ones(len(pending), bool) if full else ok
                sel = pending[done]
                # image rows map back to the seed they copy
                win[sel], d1[sel], run[sel], d2[sel] = self.base[wrow[done]], best[done], rrow[done], second[done]
                resolved[sel] = ok[done] | (full and self.open_edges)
                pending = pending[~done]
                r *= 2
        return win, d1, run, d2, resolved


@dataclass(frozen=True)
class BoundaryHit:
    """First point along a ray where the probed seed stops winning."""
    point: Tuple[float, float]
    co_winner: int
    radius: float


@dataclass(frozen=True)
class DomainExit:
    """The ray left the domain (or the torus injectivity radius) inside the cell."""
    point: Tuple[float, float]
    radius: float


@dataclass
class CellProbe:
    """Boundary samples of one cell, ordered by angle about the probe origin."""
    seed_id: int
    nonempty: bool
    owns_centre: bool
    origin: Tuple[float, float]
    angles: np.ndarray = field(default_factory=lambda: np.zeros(0))
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def neighbours(self) -> set:
        return {int(v) for v in self.labels if v != NO_SEED and v != self.seed_id}

    @property
    def exited(self) -> bool:
        return bool(np.any(self.labels == NO_SEED))


class Tessellation:
    """
    Nearest-seed structure over a coloured process.

    Immutable after construction; every query is read-only.
    """

    def __init__(self, process: ColouredProcess, metric: MetricKind, domain: Optional[SimDomain] = None,
                 bucket_size: Optional[float] = None):
        self.process = process
        self.metric = metric
        self.domain = domain
        order = np.argsort(process.seeds.ids, kind="stable")
        self.seeds = process.seeds.subset(order)
        self.black = self.seeds.u <= process.p
        self.bucket_size = bucket_size or self._default_bucket_size()
        self._indexes: Dict[str, Tuple[BucketIndex, np.ndarray]] = {}
        self._interior: Optional[Dict[int, np.ndarray]] = None

    # -- construction -------------------------------------------------

    def _default_bucket_size(self) -> float:
        if isinstance(self.domain, TorusGeometry):
            return padding_radius(max(self.domain.side, 3.0), self.metric, settings.padding_A)
        if isinstance(self.domain, PlanarWindow):
            return self.domain.safe_radius
        n = len(self.seeds)
        if n == 0:
            return 1.0
        span = float(np.max(np.ptp(self.seeds.w, axis=0))) or 1.0
        return max(span / max(1.0, math.sqrt(n / 4.0)), 1e-6)

    @property
    def is_torus(self) -> bool:
        return isinstance(self.domain, TorusGeometry)

    def _bounds(self) -> Rect:
        if isinstance(self.domain, PlanarWindow):
            return self.domain.outer
        w = self.seeds.w
        if len(w) == 0:
            return Rect(0.0, 1.0, 0.0, 1.0)
        lo, hi = w.min(axis=0), w.max(axis=0)
        return Rect(lo[0], max(hi[0], lo[0] + 1e-9), lo[1], max(hi[1], lo[1] + 1e-9))

    def _index(self, which: str = "all") -> Tuple[BucketIndex, np.ndarray]:
        """Index over all seeds, or over the black / white seeds only."""
        if which not in self._indexes:
            if which == "all":
                rows = np.arange(len(self.seeds))
            else:
                rows = np.flatnonzero(self.black if which == "black" else ~self.black)
            self._indexes[which] = (self._build_index(rows), rows)
        return self._indexes[which]

    def _build_index(self, rows: np.ndarray) -> BucketIndex:
        w, t = self.seeds.w[rows], self.seeds.t[rows]
        base = np.arange(len(rows))
        if not self.is_torus:
            return BucketIndex(w, t, base, self.bucket_size, self._bounds(), open_edges=True)
        side = self.domain.side
        margin = min(side / 2.0, 2.0 * self.bucket_size)
        ws, ts, bs = [], [], []
        for i in (-1, 0, 1):
            for j in (-1, 0, 1):
                shifted = w + np.array([i * side, j * side])
                keep = np.all((shifted >= -margin) & (shifted < side + margin), axis=1)
                ws.append(shifted[keep])
                ts.append(t[keep])
                bs.append(base[keep])
        bs_all = np.concatenate(bs)
        order = np.argsort(bs_all, kind="stable")
        return BucketIndex(np.concatenate(ws)[order], np.concatenate(ts)[order], bs_all[order],
                           self.bucket_size, Rect(-margin, side + margin, -margin, side + margin),
                           open_edges=False)

    def with_extra(self, extra: SeedArray) -> "Tessellation":
        """Tessellation of this process plus extra seeds (ids must not collide)."""
        seeds = SeedArray.concat([self.seeds, extra])
        proc = ColouredProcess(seeds, self.process.p, self.process.intensity,
                               self.process.master_seed, self.process.trial_index)
        return Tessellation(proc, self.metric, self.domain, self.bucket_size)

    # -- distances ----------------------------------------------------

    def _prepare(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.is_torus:
            return np.mod(x, self.domain.side)
        return x

    def seed_distances(self, x: np.ndarray, w: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Row-wise d((x_i,0), (w_i,t_i)), wrapping on the torus."""
        dx = x[:, 0] - w[:, 0]
        dy = x[:, 1] - w[:, 1]
        if self.is_torus:
            side = self.domain.side
            best = None
            for i in (-1.0, 0.0, 1.0):
                for j in (-1.0, 0.0, 1.0):
                    d = planar_norms(dx + i * side, dy + j * side, t, self.metric)
                    best = d if best is None else np.minimum(best, d)
            return best
        return planar_norms(dx, dy, t, self.metric)

    def _full_scan(self, x: np.ndarray, rows: np.ndarray):
        w, t = self.seeds.w[rows], self.seeds.t[rows]
        if self.is_torus:
            dist = np.stack([self.seed_distances(x, np.repeat(w[j:j + 1], len(x), 0), np.repeat(t[j], len(x)))
                             for j in range(len(rows))], axis=1)
        else:
            dist = point_seed_distances(x, w, t, self.metric)
        at = np.arange(len(x))
        k = np.argmin(dist, axis=1)
        best = dist[at, k]
        dist[at, k] = np.inf
        k2 = np.argmin(dist, axis=1) if len(rows) > 1 else np.zeros(len(x), np.int64)
        second = dist[at, k2] if len(rows) > 1 else np.full(len(x), np.inf)
        runner = np.where(np.isfinite(second), k2, NO_SEED) if len(rows) > 1 else np.full(len(x), NO_SEED)
        return k, best, runner, second

    def nearest_rows(self, x: np.ndarray, which: str = "all", need_runner: bool = True):
        """
        Nearest seed rows for planar points.

        Returns:
            (winner_row, d1, runner_row, d2) in rows of self.seeds; NO_SEED / inf
            where the chosen seed subset is empty
        """
        x = self._prepare(x)
        index, rows = self._index(which)
        win, d1, run, d2, resolved = index.query(x, self.metric, need_runner)
        if not np.all(resolved) and len(rows):
            miss = np.flatnonzero(~resolved)
            k, best, k2, second = self._full_scan(x[miss], rows)
            win[miss], d1[miss], run[miss], d2[miss] = k, best, k2, second
        win_rows = np.where(win >= 0, rows[np.maximum(win, 0)], NO_SEED) if len(rows) else win
        run_rows = np.where(run >= 0, rows[np.maximum(run, 0)], NO_SEED) if len(rows) else run
        return win_rows, d1, run_rows, d2

    def nearest_many(self, x: np.ndarray, need_runner: bool = True):
        """Vectorized nearest_seed returning seed ids."""
        if len(self.seeds) == 0:
            raise EmptyProcessError("nearest-seed query on an empty process")
        self._check_footprint(x)
        win, d1, run, d2 = self.nearest_rows(x, "all", need_runner)
        ids = self.seeds.ids
        return ids[win], d1, np.where(run >= 0, ids[np.maximum(run, 0)], NO_SEED), d2

    def nearest(self, x) -> NearestResult:
        win, d1, run, d2 = self.nearest_many(np.atleast_2d(x))
        return NearestResult(int(win[0]), float(d1[0]), int(run[0]), float(d2[0]))

    def _check_footprint(self, x: np.ndarray):
        if isinstance(self.domain, PlanarWindow):
            if not np.all(self.domain.outer.contains(np.atleast_2d(x))):
                raise DomainError("query point outside the simulation window")

    def colour_distances(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(d(x, P+), d(x, P-)); inf where a colour class is empty."""
        _, d_black, _, _ = self.nearest_rows(x, "black", need_runner=False)
        _, d_white, _, _ = self.nearest_rows(x, "white", need_runner=False)
        return d_black, d_white

    def black_at(self, x: np.ndarray) -> np.ndarray:
        """Colour of the tie-broken winner at each point (True = black)."""
        if len(self.seeds) == 0:
            raise EmptyProcessError("colour query on an empty process")
        win, _, _, _ = self.nearest_rows(x, "all", need_runner=False)
        return self.black[win]

    def winners_on_grid(self, rect: Rect, h: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Winner rows at the centres of an h-grid over rect.

        Returns:
            (xs, ys, rows) with rows[i, j] the winner row at (xs[i], ys[j])
        """
        nx_ = max(1, int(round(rect.width / h)))
        ny_ = max(1, int(round(rect.height / h)))
        xs = rect.a + (np.arange(nx_) + 0.5) * (rect.width / nx_)
        ys = rect.c + (np.arange(ny_) + 0.5) * (rect.height / ny_)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        win, _, _, _ = self.nearest_rows(pts, "all", need_runner=False)
        return xs, ys, win.reshape(nx_, ny_)

    def rows_of(self, ids: Iterable[int]) -> np.ndarray:
        ids = np.asarray(list(ids), dtype=np.int64)
        rows = np.searchsorted(self.seeds.ids, ids)
        if len(ids) and (np.any(rows >= len(self.seeds)) or np.any(self.seeds.ids[np.minimum(rows, len(self.seeds) - 1)] != ids)):
            raise DomainError("unknown seed id")
        return rows

    def owns_centre(self, rows: np.ndarray) -> np.ndarray:
        if len(rows) == 0:
            return np.zeros(0, bool)
        win, _, _, _ = self.nearest_rows(self.seeds.w[rows], "all", need_runner=False)
        return win == rows

    def boundary_suspect(self, x: np.ndarray) -> np.ndarray:
        """Queries whose winner sits within one padding radius of the window walls or top."""
        if not isinstance(self.domain, PlanarWindow):
            return np.zeros(len(np.atleast_2d(x)), bool)
        win, _, _, _ = self.nearest_rows(x, "all", need_runner=False)
        return self.suspect_rows(win)

    def suspect_rows(self, rows: np.ndarray) -> np.ndarray:
        if not isinstance(self.domain, PlanarWindow):
            return np.zeros(len(rows), bool)
        r = self.domain.safe_radius
        near_top = self.seeds.t[rows] > self.domain.height_cap - r
        near_wall = self.domain.outer.distance_to_boundary(self.seeds.w[rows]) < r
        return near_top | near_wall

    def interior_points(self) -> Dict[int, np.ndarray]:
        """One grid point inside every cell found by dense sampling of the domain."""
        if self._interior is None:
            rect, h = self._sampling_grid()
            xs, ys, rows = self.winners_on_grid(rect, h)
            flat = rows.ravel()
            uniq, first = np.unique(flat, return_index=True)
            gi, gj = np.unravel_index(first, rows.shape)
            self._interior = {int(self.seeds.ids[r]): np.array([xs[i], ys[j]]) for r, i, j in zip(uniq, gi, gj)}
        return self._interior

    def _sampling_grid(self) -> Tuple[Rect, float]:
        divisions = settings.grid_divisions
        if self.is_torus:
            side = self.domain.side
            return Rect(0.0, side, 0.0, side), side / divisions
        if isinstance(self.domain, PlanarWindow):
            return self.domain.outer, self.domain.target.scale / divisions
        rect = self._bounds()
        return rect, max(rect.width, rect.height) / divisions

    def ray_limit(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Largest radius each ray may travel inside the domain."""
        if self.is_torus:
            return np.full(len(origins), self.domain.injectivity_radius * (1 - 1e-12))
        if isinstance(self.domain, PlanarWindow):
            o = self.domain.outer
            with np.errstate(divide="ignore", invalid="ignore"):
                tx = np.where(dirs[:, 0] > 0, (o.b - origins[:, 0]) / dirs[:, 0],
                              np.where(dirs[:, 0] < 0, (o.a - origins[:, 0]) / dirs[:, 0], np.inf))
                ty = np.where(dirs[:, 1] > 0, (o.d - origins[:, 1]) / dirs[:, 1],
                              np.where(dirs[:, 1] < 0, (o.c - origins[:, 1]) / dirs[:, 1], np.inf))
            return np.maximum(np.minimum(tx, ty), 0.0) * (1 - 1e-12)
        rect = self._bounds()
        reach = math.hypot(rect.width, rect.height) + float(np.max(np.abs(self.seeds.t), initial=0.0))
        return np.full(len(origins), 4.0 * reach + 1.0)


def nearest_seed(x, T: Tessellation) -> NearestResult:
    """Seed minimizing d((x,0), z), ties to the lowest id; d2 is the best other seed."""
    return T.nearest(x)


def colour_at(x, T: Tessellation) -> Colour:
    """Colour of the cell containing x (tie-broken winner's colour)."""
    return Colour.BLACK if bool(T.black_at(np.atleast_2d(x))[0]) else Colour.WHITE


def is_robustly_black(x, T: Tessellation, eta: float) -> bool:
    """True iff d(x, P+) <= d(x, P-) - eta."""
    return bool(robustly_black_many(np.atleast_2d(x), T, eta)[0])


def robustly_black_many(x: np.ndarray, T: Tessellation, eta: float) -> np.ndarray:
    if eta < 0:
        raise DomainError(f"eta must be nonnegative, got {eta}")
    if len(T.seeds) == 0:
        raise EmptyProcessError("robust blackness needs at least one seed")
    d_black, d_white = T.colour_distances(x)
    return d_black <= d_white - eta


# -- ray probing ---------------------------------------------------------


class _RayProber:
    """
    Batched bisection along rays for many cells at once.

    Owners are either rows of the tessellation or extra seeds that are not part of
    it (the cell of z' in the tessellation of P u {z'}).
    """

    def __init__(self, T: Tessellation, owner_ids: np.ndarray, owner_w: Optional[np.ndarray] = None,
                 owner_t: Optional[np.ndarray] = None):
        self.T = T
        self.owner_ids = owner_ids
        self.extra = owner_w is not None
        self.owner_w = owner_w
        self.owner_t = owner_t

    def wins(self, pts: np.ndarray, owner: np.ndarray) -> np.ndarray:
        T = self.T
        win, d1, _, _ = T.nearest_rows(pts, "all", need_runner=False)
        if not self.extra:
            return T.seeds.ids[win] == self.owner_ids[owner]
        d_own = T.seed_distances(T._prepare(pts), self.owner_w[owner], self.owner_t[owner])
        if len(T.seeds) == 0:
            return np.ones(len(pts), bool)
        return (d_own < d1) | ((d_own == d1) & (self.owner_ids[owner] < T.seeds.ids[win]))

    def label(self, pts: np.ndarray) -> np.ndarray:
        if len(self.T.seeds) == 0:
            return np.full(len(pts), NO_SEED, np.int64)
        win, _, _, _ = self.T.nearest_rows(pts, "all", need_runner=False)
        return self.T.seeds.ids[win]

    def shoot(self, owner: np.ndarray, origins: np.ndarray, angles: np.ndarray):
        """Probe rays; returns (points, radii, labels) with NO_SEED for domain exits."""
        dirs = np.column_stack([np.cos(angles), np.sin(angles)])
        r_max = self.T.ray_limit(origins, dirs)
        n = len(owner)
        radii = r_max.copy()
        labels = np.full(n, NO_SEED, np.int64)
        if n == 0:
            return np.zeros((0, 2)), radii, labels
        inside = self.wins(origins + r_max[:, None] * dirs, owner)
        active = np.flatnonzero(~inside)
        if len(active):
            lo = np.zeros(len(active))
            hi = r_max[active].copy()
            steps = int(math.ceil(math.log2(max(float(hi.max()), RAY_TOLERANCE) / RAY_TOLERANCE))) + 1
            o, d, own = origins[active], dirs[active], owner[active]
            for _ in range(steps):
                mid = 0.5 * (lo + hi)
                w = self.wins(o + mid[:, None] * d, own)
                lo = np.where(w, mid, lo)
                hi = np.where(w, hi, mid)
            labels[active] = self.label(o + hi[:, None] * d)
            radii[active] = 0.5 * (lo + hi)
        points = origins + radii[:, None] * dirs
        return points, radii, labels


def _probe(prober: _RayProber, owner_idx: np.ndarray, origins: np.ndarray, budget: int,
           min_step: float = MIN_ANGULAR_STEP) -> Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """
    Adaptive angular probing: `budget` initial rays per owner, then bisect every
    angular interval whose endpoint co-winners differ down to min_step.
    """
    k = len(owner_idx)
    base = 2.0 * math.pi * np.arange(budget) / budget
    own = np.repeat(np.arange(k), budget)
    ang = np.tile(base, k)
    pts, _, lab = prober.shoot(owner_idx[own], origins[own], ang)
    all_own, all_ang, all_pts, all_lab = [own], [ang], [pts], [lab]

    # intervals (owner, a, b, label_a, label_b); the last ray wraps to the first
    lab2 = lab.reshape(k, budget)
    nxt = np.roll(lab2, -1, axis=1).ravel()
    ia = ang
    ib = ang + 2.0 * math.pi / budget
    width = 2.0 * math.pi / budget
    pending = lab != nxt
    p_own, p_a, p_b, p_la, p_lb = own[pending], ia[pending], ib[pending], lab[pending], nxt[pending]
    while len(p_own) and width / 2.0 >= min_step:
        mid = 0.5 * (p_a + p_b)
        wrapped = np.mod(mid, 2.0 * math.pi)
        pts, _, lm = prober.shoot(owner_idx[p_own], origins[p_own], wrapped)
        all_own.append(p_own)
        all_ang.append(wrapped)
        all_pts.append(pts)
        all_lab.append(lm)
        width /= 2.0
        left = p_la != lm
        right = lm != p_lb
        p_own, p_a, p_b, p_la, p_lb = (
            np.concatenate([p_own[left], p_own[right]]),
            np.concatenate([p_a[left], mid[right]]),
            np.concatenate([mid[left], p_b[right]]),
            np.concatenate([p_la[left], lm[right]]),
            np.concatenate([lm[left], p_lb[right]]),
        )
    own = np.concatenate(all_own)
    ang = np.concatenate(all_ang)
    pts = np.concatenate(all_pts)
    lab = np.concatenate(all_lab)
    out = {}
    order = np.lexsort((ang, own))
    own, ang, pts, lab = own[order], ang[order], pts[order], lab[order]
    splits = np.searchsorted(own, np.arange(k + 1))
    for i in range(k):
        s, e = splits[i], splits[i + 1]
        out[i] = (ang[s:e], pts[s:e], lab[s:e])
    return out


def probe_cells(T: Tessellation, seed_ids: Iterable[int], angular_budget: int = 16) -> Dict[int, CellProbe]:
    """
    Probe the cells of the given seeds.

    Seeds owning their centre are probed from w. Other seeds are probed from an
    interior point found by dense sampling, or reported empty when none is found.
    """
    ids = np.asarray(sorted(set(int(i) for i in seed_ids)), dtype=np.int64)
    rows = T.rows_of(ids)
    owns = T.owns_centre(rows)
    origins = T.seeds.w[rows].copy()
    result: Dict[int, CellProbe] = {}
    probe_mask = owns.copy()
    if not np.all(owns):
        interior = T.interior_points()
        for k in np.flatnonzero(~owns):
            point = interior.get(int(ids[k]))
            if point is None:
                w = T.seeds.w[rows[k]]
                result[int(ids[k])] = CellProbe(int(ids[k]), False, False, (float(w[0]), float(w[1])))
            else:
                origins[k] = point
                probe_mask[k] = True
    sel = np.flatnonzero(probe_mask)
    if len(sel):
        prober = _RayProber(T, ids)
        probed = _probe(prober, sel, origins[sel], angular_budget)
        for j, k in enumerate(sel):
            ang, pts, lab = probed[j]
            o = origins[k]
            result[int(ids[k])] = CellProbe(int(ids[k]), True, bool(owns[k]), (float(o[0]), float(o[1])), ang, pts, lab)
    return result


def probe_extra_cells(T: Tessellation, extra: SeedArray, angular_budget: int = 16) -> Dict[int, CellProbe]:
    """
    Probe the cell of each extra seed z' in the tessellation of T's seeds plus z'
    alone (every extra seed is considered separately). Extras not owning their
    centre are reported empty.
    """
    n = len(extra)
    result: Dict[int, CellProbe] = {}
    if n == 0:
        return result
    prober = _RayProber(T, extra.ids, extra.w, extra.t)
    owns = prober.wins(extra.w, np.arange(n))
    for k in np.flatnonzero(~owns):
        result[int(extra.ids[k])] = CellProbe(int(extra.ids[k]), False, False, tuple(extra.w[k]))
    sel = np.flatnonzero(owns)
    if len(sel):
        probed = _probe(prober, sel, extra.w[sel], angular_budget)
        for j, k in enumerate(sel):
            ang, pts, lab = probed[j]
            result[int(extra.ids[k])] = CellProbe(int(extra.ids[k]), True, True, tuple(extra.w[k]), ang, pts, lab)
    return result


def cell_boundary_probe(z: Seed, direction, T: Tessellation) -> Union[BoundaryHit, DomainExit]:
    """
    Bisect along w + r * direction for the first r where z stops winning.

    Raises:
        DomainError: z does not own its centre (its cell is empty or off-centre)
    """
    rows = T.rows_of([z.id])
    if not T.owns_centre(rows)[0]:
        raise DomainError(f"seed {z.id} does not own its centre")
    direction = np.asarray(direction, dtype=float)
    angle = math.atan2(direction[1], direction[0])
    prober = _RayProber(T, np.array([z.id]))
    pts, radii, labels = prober.shoot(np.array([0]), T.seeds.w[rows], np.array([angle]))
    point = (float(pts[0, 0]), float(pts[0, 1]))
    if labels[0] == NO_SEED:
        return DomainExit(point, float(radii[0]))
    return BoundaryHit(point, int(labels[0]), float(radii[0]))


@dataclass
class AdjacencyGraph:
    """G_P: one vertex per seed, an edge when the two cells meet."""
    graph: nx.Graph
    angular_budget: int
    resolution: float
    cells: Dict[int, CellProbe]

    def neighbours(self, seed_id: int) -> set:
        return set(self.graph.neighbors(seed_id))

    def edges(self) -> set:
        return {frozenset(e) for e in self.graph.edges()}

    def nonempty(self, seed_id: int) -> bool:
        return bool(self.graph.nodes[seed_id].get("nonempty", False))


def adjacency_graph(T: Tessellation, angular_budget: int = 16, seed_ids: Optional[Iterable[int]] = None) -> AdjacencyGraph:
    """
    Build G_P by star-domain ray probing around every (or the given) seed.

    Raises:
        DomainError: angular_budget < 16
    """
    if angular_budget < 16:
        raise DomainError(f"angular budget must be at least 16, got {angular_budget}")
    ids = T.seeds.ids if seed_ids is None else np.asarray(list(seed_ids), dtype=np.int64)
    cells = probe_cells(T, ids.tolist(), angular_budget)
    graph = nx.Graph()
    for sid, cell in cells.items():
        graph.add_node(sid, nonempty=cell.nonempty, owns_centre=cell.owns_centre, black=bool(T.black[T.rows_of([sid])[0]]))
    for sid, cell in cells.items():
        for v in cell.neighbours:
            graph.add_edge(sid, v)
    logger.debug("adjacency graph: %d vertices, %d edges", graph.number_of_nodes(), graph.number_of_edges())
    return AdjacencyGraph(graph, angular_budget, MIN_ANGULAR_STEP, cells)


def cell_polygon(T: Tessellation, seed_id: int, rays: int = 256) -> np.ndarray:
    """Boundary polyline of one cell from dense probing (empty array for empty cells)."""
    cell = probe_cells(T, [seed_id], max(rays, 16))[seed_id]
    return cell.points
