"""
Percolation on the coloured tessellation.

Crossings are decided on a raster of the colour field. Black paths use
8-connectivity and white paths 4-connectivity, so exactly one of a black
horizontal and a white vertical crossing exists on every grid. The sample is
certified when the answer does not hinge on a diagonal pixel contact: every
checkerboard 2x2 block is resolved by the colour at its shared corner and the
resolved crossing must agree with the raw one; otherwise the raster is refined.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, stats
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.spatial.distance import pdist

from .config import settings
from .exceptions import CensoringError, DomainError
from .geometry import MetricKind, Rect, TorusGeometry, metric_from_name
from .process import ColouredProcess, PlanarWindow, sample_poisson
from .services.trials import run_trials
from .tessellation import AdjacencyGraph, Tessellation, probe_cells

logger = logging.getLogger(__name__)

__all__ = [
    "Rect", "ColourGrid", "CrossingSample", "ClusterReport", "EstimateCI", "TailEstimate", "PcBracket",
    "TrialStats", "rasterize", "crossing", "crossing_path", "chain_is_walk", "estimate_crossing_prob",
    "cluster_of_origin", "tail_estimate", "bracket_pc", "estimate_theta_chi",
]

_EIGHT = np.ones((3, 3), dtype=int)
MAX_PIXELS = 1 << 22


@dataclass
class ColourGrid:
    """Colour field sampled at cell centres; colours[i, j] is True for black."""
    rect: Rect
    h: float
    colours: np.ndarray
    depth: int = 0
    winners: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.colours.shape

    @property
    def steps(self) -> Tuple[float, float]:
        nx_, ny_ = self.shape
        return self.rect.width / nx_, self.rect.height / ny_

    def centres(self) -> Tuple[np.ndarray, np.ndarray]:
        hx, hy = self.steps
        nx_, ny_ = self.shape
        return self.rect.a + (np.arange(nx_) + 0.5) * hx, self.rect.c + (np.arange(ny_) + 0.5) * hy


@dataclass
class CrossingSample:
    Hb: bool
    Vw: bool
    certified: bool
    depth: int
    Vb: bool = False
    suspect: bool = False
    h: float = 0.0


@dataclass
class ClusterReport:
    """The open cluster of the origin's cell in G_P."""
    members: List[int]
    count: int
    area: float
    diameter: float
    censored: bool
    origin_seed: int = -1

    @classmethod
    def empty(cls, origin_seed: int = -1) -> "ClusterReport":
        return cls([], 0, 0.0, 0.0, False, origin_seed)


@dataclass
class EstimateCI:
    estimate: float
    stderr: float
    trials: int
    uncertified: int = 0

    @classmethod
    def from_bernoulli(cls, outcomes: Sequence[bool], uncertified: int = 0) -> "EstimateCI":
        n = len(outcomes)
        if n == 0:
            raise DomainError("estimate needs at least one trial")
        p_hat = float(np.mean(np.asarray(outcomes, dtype=float)))
        return cls(p_hat, math.sqrt(p_hat * (1.0 - p_hat) / n), n, uncertified)

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "EstimateCI":
        arr = np.asarray(values, dtype=float)
        if len(arr) == 0:
            raise DomainError("estimate needs at least one trial")
        se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
        return cls(float(arr.mean()), se, len(arr))

    def interval(self, z: float = 3.0) -> Tuple[float, float]:
        return self.estimate - z * self.stderr, self.estimate + z * self.stderr


# -- rasterization and crossings ----------------------------------------


def rasterize(T: Tessellation, R: Rect, h: float, depth: int = 0) -> ColourGrid:
    _, _, rows = T.winners_on_grid(R, h)
    return ColourGrid(R, h, T.black[rows], depth, rows)


def _spans(labels: np.ndarray, mask: np.ndarray, axis: int) -> bool:
    """True when one component of `labels` (restricted to mask) touches both ends along axis."""
    lab = np.where(mask, labels, 0)
    first = np.take(lab, 0, axis=axis)
    last = np.take(lab, -1, axis=axis)
    return len(np.intersect1d(first[first > 0], last[last > 0])) > 0


def _labels(mask: np.ndarray, eight: bool) -> np.ndarray:
    labels, _ = ndimage.label(mask, structure=_EIGHT if eight else None)
    return labels


def _pixel_graph(mask: np.ndarray, diag_main: np.ndarray, diag_anti: np.ndarray, extra_source: Optional[np.ndarray] = None):
    """Sparse graph over flattened pixels: 4-neighbours inside mask plus the given diagonals."""
    nx_, ny_ = mask.shape
    n = nx_ * ny_
    idx = np.arange(n).reshape(nx_, ny_)
    horiz = mask[:-1, :] & mask[1:, :]
    vert = mask[:, :-1] & mask[:, 1:]
    src = [idx[:-1, :][horiz], idx[:, :-1][vert], idx[:-1, :-1][diag_main], idx[1:, :-1][diag_anti]]
    dst = [idx[1:, :][horiz], idx[:, 1:][vert], idx[1:, 1:][diag_main], idx[:-1, 1:][diag_anti]]
    size = n
    if extra_source is not None:
        src.append(np.full(int(extra_source.sum()), n))
        dst.append(idx[extra_source])
        size = n + 1
    rows = np.concatenate(src)
    cols = np.concatenate(dst)
    return coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(size, size)).tocsr()


def _resolved_labels(black: np.ndarray, diag_main: np.ndarray, diag_anti: np.ndarray) -> np.ndarray:
    graph = _pixel_graph(black, diag_main, diag_anti)
    _, labels = connected_components(graph, directed=False)
    return labels.reshape(black.shape) + 1


def _checkerboards(black: np.ndarray) -> np.ndarray:
    a, b = black[:-1, :-1], black[1:, :-1]
    c, d = black[:-1, 1:], black[1:, 1:]
    return (a == d) & (b == c) & (a != b)


def _classify(T: Tessellation, grid: ColourGrid) -> CrossingSample:
    black = grid.colours
    white = ~black
    hb = _spans(_labels(black, True), black, 0)
    vb = _spans(_labels(black, True), black, 1)
    vw = _spans(_labels(white, False), white, 1)
    certified = hb != vw
    checker = _checkerboards(black)
    if certified and checker.any():
        xs, ys = grid.centres()
        hx, hy = grid.steps
        ci, cj = np.nonzero(checker)
        corners = np.column_stack([xs[ci] + hx / 2.0, ys[cj] + hy / 2.0])
        corner_black = np.zeros_like(checker)
        corner_black[ci, cj] = T.black_at(corners)
        main_black = black[:-1, :-1]
        b_main = checker & corner_black & main_black
        b_anti = checker & corner_black & ~main_black
        w_main = checker & ~corner_black & ~main_black
        w_anti = checker & ~corner_black & main_black
        hb_res = _spans(_resolved_labels(black, b_main, b_anti), black, 0)
        vw_res = _spans(_resolved_labels(white, w_main, w_anti), white, 1)
        certified = hb_res != vw_res and hb_res == hb
    suspect = bool(np.any(T.suspect_rows(np.unique(grid.winners)))) if grid.winners is not None else False
    return CrossingSample(Hb=hb, Vw=vw, certified=certified, depth=grid.depth, Vb=vb, suspect=suspect, h=grid.h)


def _check_region(T: Tessellation, R: Rect):
    dom = T.domain
    if isinstance(dom, PlanarWindow):
        safe = dom.outer.expanded(-dom.safe_radius)
        if R.a < safe.a or R.b > safe.b or R.c < safe.c or R.d > safe.d:
            raise DomainError(f"rectangle {R} leaves the safe region of the window")
    elif isinstance(dom, TorusGeometry):
        if R.width > dom.side or R.height > dom.side:
            raise DomainError(f"rectangle {R} does not fit on the torus of side {dom.side}")


def crossing(T: Tessellation, R: Rect, h0: Optional[float] = None, max_refinements: Optional[int] = None) -> CrossingSample:
    """
    Decide H_b(R) and V_w(R) on a raster, refining while uncertified.

    Args:
        T: tessellation covering R
        R: target rectangle
        h0: initial resolution (default R.scale / grid_divisions)
        max_refinements: halvings of h allowed (default from settings)

    Returns:
        CrossingSample; certified is False when refinement ran out
    """
    h0 = R.scale / settings.grid_divisions if h0 is None else h0
    if not h0 > 0:
        raise DomainError(f"resolution must be positive, got {h0}")
    _check_region(T, R)
    limit = settings.max_refinements if max_refinements is None else max_refinements
    depth = 0
    while True:
        grid = rasterize(T, R, h0 / 2 ** depth, depth)
        sample = _classify(T, grid)
        if sample.certified:
            return sample
        if depth >= limit or grid.colours.size * 4 > MAX_PIXELS:
            logger.debug("crossing uncertified at depth %d", depth)
            return sample
        depth += 1


def crossing_path(grid: ColourGrid) -> List[int]:
    """
    Seed ids met along a black 8-connected left-to-right pixel path, consecutive
    duplicates removed; empty when there is no black horizontal crossing.
    """
    black = grid.colours
    nx_, ny_ = black.shape
    diag_main = black[:-1, :-1] & black[1:, 1:]
    diag_anti = black[1:, :-1] & black[:-1, 1:]
    left = np.zeros_like(black)
    left[0, :] = black[0, :]
    graph = _pixel_graph(black, diag_main, diag_anti, extra_source=left)
    _, pred = breadth_first_order(graph, nx_ * ny_, directed=False, return_predecessors=True)
    idx = np.arange(nx_ * ny_).reshape(nx_, ny_)
    right = idx[-1, :][black[-1, :]]
    reached = right[pred[right] >= 0] if len(right) else right
    if len(reached) == 0:
        return []
    node = int(reached[0])
    path = []
    while node != nx_ * ny_ and node >= 0:
        path.append(node)
        node = int(pred[node])
    winners = grid.winners.ravel()[path[::-1]]
    chain = [int(winners[0])]
    for w in winners[1:]:
        if int(w) != chain[-1]:
            chain.append(int(w))
    return chain


def chain_is_walk(chain: Sequence[int], G: AdjacencyGraph) -> bool:
    """Every consecutive pair of the chain is an edge of G."""
    return all(G.graph.has_edge(a, b) for a, b in zip(chain, chain[1:]))


# -- Monte Carlo drivers ------------------------------------------------


def crossing_window(rho: float, s: float, metric: MetricKind, A: Optional[float] = None) -> Tuple[Rect, PlanarWindow]:
    R = Rect(0.0, rho * s, 0.0, s)
    return R, PlanarWindow.around(R, metric, A or settings.padding_A, settings.padding_factor)


def crossing_trial(trial_index: int, *, ps: Sequence[float], rho: float, s: float, metric: str,
                   master_seed: int, intensity: float = 1.0, padding_A: Optional[float] = None) -> List[CrossingSample]:
    """One trial: crossings of [0, rho*s] x [0, s] at every p from shared positions and uniforms."""
    m = metric_from_name(metric)
    R, window = crossing_window(rho, s, m, padding_A)
    seeds = sample_poisson(window, intensity, master_seed, trial_index)
    out = []
    for p in ps:
        T = Tessellation(ColouredProcess(seeds, p, intensity, master_seed, trial_index), m, window)
        out.append(crossing(T, R))
    return out


def estimate_crossing_prob(p: float, rho: float, s: float, N: int, master_seed: int, metric: str = "jm",
                           intensity: float = 1.0, workers: int = 1,
                           samples: Optional[List[CrossingSample]] = None,
                           padding_A: Optional[float] = None) -> EstimateCI:
    """
    Monte Carlo estimate of f_p(rho, s) = Pr_p(H_b([0, rho*s] x [0, s])).

    Passing a list as `samples` collects the per-trial samples.
    """
    if N < 1:
        raise DomainError(f"need at least one trial, got {N}")
    results = run_trials(crossing_trial, range(N), workers, ps=[p], rho=rho, s=s, metric=metric,
                         master_seed=master_seed, intensity=intensity, padding_A=padding_A)
    flat = [r[0] for r in results]
    if samples is not None:
        samples.extend(flat)
    uncertified = sum(not c.certified for c in flat)
    if uncertified:
        logger.warning("%d of %d crossing samples uncertified at p=%.3f", uncertified, N, p)
    return EstimateCI.from_bernoulli([c.Hb for c in flat], uncertified)


# -- clusters -------------------------------------------------------------


def _safe_region(T: Tessellation) -> Optional[Rect]:
    if isinstance(T.domain, PlanarWindow):
        return T.domain.target
    return None


def _censor_radius(T: Tessellation) -> float:
    if isinstance(T.domain, PlanarWindow):
        return T.domain.safe_radius
    return 0.0


def default_origin(T: Tessellation) -> np.ndarray:
    if isinstance(T.domain, PlanarWindow):
        t = T.domain.target
        return np.array([(t.a + t.b) / 2.0, (t.c + t.d) / 2.0])
    if isinstance(T.domain, TorusGeometry):
        return np.array([T.domain.side / 2.0] * 2)
    return np.zeros(2)


def cluster_of_origin(T: Tessellation, G: Optional[AdjacencyGraph] = None, origin=None,
                      angular_budget: Optional[int] = None, max_members: Optional[int] = None) -> ClusterReport:
    """
    Breadth-first search over black cells from the cell containing the origin.

    Without G, cells are probed lazily as the search reaches them. The search
    stops as soon as the cluster is censored (a member centre within one padding
    radius of the safe-region boundary, or a probe leaving the domain), or once
    max_members is reached.
    """
    origin = default_origin(T) if origin is None else np.asarray(origin, dtype=float)
    budget = angular_budget or settings.angular_budget
    z0 = T.nearest(origin).winner
    row0 = T.rows_of([z0])[0]
    if not T.black[row0]:
        return ClusterReport.empty(z0)
    safe = _safe_region(T)
    radius = _censor_radius(T)
    members = {z0}
    frontier = [z0]
    cells = {}
    censored = False
    while frontier and not censored:
        if G is not None:
            probed = {sid: G.cells[sid] for sid in frontier if sid in G.cells}
            missing = [sid for sid in frontier if sid not in G.cells]
            if missing:
                probed.update(probe_cells(T, missing, budget))
        else:
            probed = probe_cells(T, frontier, budget)
        cells.update(probed)
        nxt = []
        for sid in frontier:
            cell = probed[sid]
            if cell.exited:
                censored = True
            if safe is not None:
                w = T.seeds.w[T.rows_of([sid])[0]]
                if not safe.contains(w)[0] or safe.distance_to_boundary(w)[0] < radius:
                    censored = True
            neighbours = G.neighbours(sid) if G is not None else cell.neighbours
            for v in sorted(neighbours):
                if v not in members and T.black[T.rows_of([v])[0]]:
                    members.add(v)
                    nxt.append(v)
        if max_members is not None and len(members) >= max_members:
            break
        frontier = nxt
    member_list = sorted(members)
    points = np.concatenate([cells[m].points for m in member_list if m in cells and len(cells[m].points)] or [np.zeros((0, 2))])
    diameter = float(pdist(points).max()) if len(points) > 1 else 0.0
    area = _cluster_area(T, member_list, points)
    return ClusterReport(member_list, len(member_list), area, diameter, censored, z0)


def _cluster_area(T: Tessellation, members: List[int], points: np.ndarray, divisions: int = 128) -> float:
    if len(points) < 3:
        return 0.0
    lo, hi = points.min(axis=0), points.max(axis=0)
    span = max(float(np.max(hi - lo)), 1e-9)
    pad = span / divisions
    rect = Rect(lo[0] - pad, max(hi[0], lo[0] + pad) + pad, lo[1] - pad, max(hi[1], lo[1] + pad) + pad)
    if isinstance(T.domain, PlanarWindow):
        o = T.domain.outer
        rect = Rect(max(rect.a, o.a), min(rect.b, o.b), max(rect.c, o.c), min(rect.d, o.d))
    _, _, rows = T.winners_on_grid(rect, span / divisions)
    hx, hy = rect.width / rows.shape[0], rect.height / rows.shape[1]
    inside = np.isin(T.seeds.ids[rows], np.asarray(members))
    return float(inside.sum() * hx * hy)


def cluster_window(window_scale: float, metric: MetricKind, A: Optional[float] = None) -> PlanarWindow:
    half = window_scale / 2.0
    target = Rect(-half, half, -half, half)
    return PlanarWindow.around(target, metric, A or settings.padding_A, settings.padding_factor)


def cluster_trial(trial_index: int, *, p: float, window_scale: float, metric: str, master_seed: int,
                  intensity: float = 1.0, max_members: Optional[int] = None, padding_A: Optional[float] = None,
                  angular_budget: Optional[int] = None) -> ClusterReport:
    m = metric_from_name(metric)
    window = cluster_window(window_scale, m, padding_A)
    seeds = sample_poisson(window, intensity, master_seed, trial_index)
    T = Tessellation(ColouredProcess(seeds, p, intensity, master_seed, trial_index), m, window)
    return cluster_of_origin(T, origin=np.zeros(2), angular_budget=angular_budget, max_members=max_members)


@dataclass
class TrialStats:
    """Censoring frequency (stand-in for theta) and mean cluster size (chi)."""
    p: float
    theta: EstimateCI
    chi: EstimateCI
    window_scale: float

    @classmethod
    def from_reports(cls, p: float, reports: Sequence[ClusterReport], window_scale: float) -> "TrialStats":
        return cls(
            p=p,
            theta=EstimateCI.from_bernoulli([r.censored for r in reports]),
            chi=EstimateCI.from_values([r.count for r in reports]),
            window_scale=window_scale,
        )


@dataclass
class TailEstimate:
    """Empirical survival of |C_0^G| plus the fitted log-slope."""
    p: float
    sizes: List[int]
    survival: List[float]
    stderr: List[float]
    censored_count: int
    trials: int
    window_scale: float
    slope: float
    slope_ci: Tuple[float, float]
    area_survival: Dict[float, float] = field(default_factory=dict)
    diameter_survival: Dict[float, float] = field(default_factory=dict)
    theta_chi: Optional[TrialStats] = None

    def rows(self) -> List[dict]:
        return [
            {"n": n, "survival": s, "stderr": e, "censored_count": self.censored_count}
            for n, s, e in zip(self.sizes, self.survival, self.stderr)
        ]


def _survival_at(values: np.ndarray, censored: np.ndarray, thresholds: Sequence[float]) -> List[float]:
    return [float(np.mean((values >= x) | censored)) for x in thresholds]


def fit_log_slope(sizes: Sequence[int], survival: Sequence[float], trials: int) -> Tuple[float, Tuple[float, float]]:
    """Least-squares slope of log survival vs n over points with survival >= 20 / trials."""
    n = np.asarray(sizes, dtype=float)
    s = np.asarray(survival, dtype=float)
    keep = s >= 20.0 / trials
    if keep.sum() < 3:
        return float("nan"), (float("nan"), float("nan"))
    fit = stats.linregress(n[keep], np.log(s[keep]))
    half = stats.t.ppf(0.975, keep.sum() - 2) * fit.stderr
    return float(fit.slope), (float(fit.slope - half), float(fit.slope + half))


def tail_estimate(p: float, sizes: Sequence[int], trials: int, window_scale: float, metric: str = "jm",
                  master_seed: int = 0, intensity: float = 1.0, workers: int = 1, padding_A: Optional[float] = None,
                  angular_budget: Optional[int] = None) -> TailEstimate:
    """
    Survival function of the origin cluster's size, area and diameter, with the
    censoring frequency and mean size of the same samples.

    Censored samples count as at least the largest size. When more than 5% of
    samples are censored the window is doubled once.

    Raises:
        CensoringError: still more than 5% censored after enlarging
    """
    sizes = sorted(int(n) for n in sizes)
    if not sizes or sizes[0] < 1:
        raise DomainError("sizes must be positive integers")
    scale = window_scale
    for attempt in range(2):
        reports = run_trials(cluster_trial, range(trials), workers, p=p, window_scale=scale, metric=metric,
                             master_seed=master_seed, intensity=intensity, max_members=None, padding_A=padding_A,
                             angular_budget=angular_budget)
        censored = np.array([r.censored for r in reports])
        fraction = float(censored.mean())
        if fraction <= 0.05:
            break
        logger.warning("censored fraction %.3f at window %.1f", fraction, scale)
        if attempt == 1:
            raise CensoringError(
                f"{fraction:.1%} of clusters censored at window scale {scale}", scale, fraction
            )
        scale *= 2.0
    counts = np.array([r.count for r in reports], dtype=float)
    survival = _survival_at(counts, censored, sizes)
    stderr = [math.sqrt(s * (1.0 - s) / trials) for s in survival]
    slope, ci = fit_log_slope(sizes, survival, trials)
    areas = np.array([r.area for r in reports])
    diams = np.array([r.diameter for r in reports])
    area_q = sorted(set(np.round(np.quantile(areas, [0.5, 0.9, 0.99]), 6).tolist()))
    diam_q = sorted(set(np.round(np.quantile(diams, [0.5, 0.9, 0.99]), 6).tolist()))
    logger.info("tail p=%.3f: slope %.4f (%.4f, %.4f), censored %d", p, slope, ci[0], ci[1], int(censored.sum()))
    return TailEstimate(
        p=p, sizes=sizes, survival=survival, stderr=stderr, censored_count=int(censored.sum()),
        trials=trials, window_scale=scale, slope=slope, slope_ci=ci,
        area_survival=dict(zip(area_q, _survival_at(areas, censored, area_q))),
        diameter_survival=dict(zip(diam_q, _survival_at(diams, censored, diam_q))),
        theta_chi=TrialStats.from_reports(p, reports, scale),
    )


def estimate_theta_chi(p: float, window_scale: float, trials: int, metric: str = "jm", master_seed: int = 0,
                       intensity: float = 1.0, workers: int = 1, padding_A: Optional[float] = None) -> TrialStats:
    reports = run_trials(cluster_trial, range(trials), workers, p=p, window_scale=window_scale, metric=metric,
                         master_seed=master_seed, intensity=intensity, padding_A=padding_A)
    return TrialStats.from_reports(p, reports, window_scale)


# -- critical point ------------------------------------------------------


@dataclass
class PcBracket:
    p_lo: float
    p_hi: float
    resolved: bool
    probes: List[Tuple[float, EstimateCI]]

    def contains(self, p: float) -> bool:
        return self.p_lo <= p <= self.p_hi


def bracket_pc(rho: float = 1.0, s: float = 30.0, N: int = 400, tolerance: float = 0.04, master_seed: int = 0,
               metric: str = "jm", intensity: float = 1.0, workers: int = 1,
               padding_A: Optional[float] = None) -> PcBracket:
    """
    Bisection on p with the rule: f_hat - 3 se > 1/2 moves the upper end, f_hat + 3 se < 1/2
    moves the lower end. An inconclusive midpoint leaves the bracket in place and probes
    quarter steps inside it, halving the step until it falls below tolerance / 4.

    Raises:
        DomainError: tolerance below 0.02
    """
    if tolerance < 0.02:
        raise DomainError(f"tolerance must be at least 0.02, got {tolerance}")
    cache: Dict[float, EstimateCI] = {}

    def probe(p: float) -> int:
        p = round(p, 12)
        if p not in cache:
            cache[p] = estimate_crossing_prob(p, rho, s, N, master_seed, metric, intensity, workers,
                                              padding_A=padding_A)
            logger.info("pc probe p=%.4f: f=%.4f +- %.4f", p, cache[p].estimate, cache[p].stderr)
        lo_ci, hi_ci = cache[p].interval(3.0)
        if lo_ci > 0.5:
            return 1
        if hi_ci < 0.5:
            return -1
        return 0

    lo, hi = 0.0, 1.0
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        verdict = probe(mid)
        if verdict > 0:
            hi = mid
            continue
        if verdict < 0:
            lo = mid
            continue
        step = (hi - lo) / 4.0
        moved = False
        while not moved and step >= tolerance / 4.0:
            if probe(lo + step) < 0:
                lo += step
                moved = True
            if probe(hi - step) > 0:
                hi -= step
                moved = True
            if not moved:
                step /= 2.0
        if not moved:
            break
    probes = sorted(cache.items())
    return PcBracket(lo, hi, hi - lo <= tolerance, probes)
