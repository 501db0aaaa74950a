"""
Coupling of the colourings at two levels p1 < p2 on the torus T(s) x [0, s].

The base processes are P (intensity 1 on T(s) x [delta', s]), P_delta (intensity 1
on T(s) x [0, delta']) and the potential defects P_breve (intensity delta'^{-1/2}
on T(s) x [0, delta']). The natural coupling assigns every seed by a
three-sided coin; the crossed coupling additionally swaps, cluster by cluster,
the event that a defect appears with an equally likely event on which every
neighbour of the cluster is white at level p1 and black at level p2.
"""
import logging
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Dict, List, Optional, Tuple

import networkx as nx
import numpy as np
from scipy import stats
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .config import settings
from .exceptions import DomainError
from .geometry import MetricKind, TorusGeometry, planar_norms, torus_distances, unit_cube_diameter
from .process import Box, ColouredProcess, SeedArray, padding_radius, sample_box, trial_rng
from .tessellation import Tessellation, probe_extra_cells, robustly_black_many

logger = logging.getLogger(__name__)

BAD, NEUTRAL, GOOD = -1, 0, 1
_DENSE_LIMIT = 1 << 27


# -- crude states -----------------------------------------------------------


@dataclass
class CrudeGrid:
    """
    Crude states of the cubes Q_i of side delta partitioning T(s) x [0, s].

    Only occupied cubes are stored: `bad` and `good` hold sorted flat cube indices,
    every other cube is neutral.
    """
    s: float
    delta: float
    m: int
    bad: np.ndarray
    good: np.ndarray

    @property
    def gamma(self) -> float:
        return self.delta ** 3

    @property
    def N(self) -> int:
        return self.m ** 3

    def counts(self) -> Tuple[int, int, int]:
        """(bad, neutral, good) cube counts."""
        nb, ng = len(self.bad), len(self.good)
        return nb, self.N - nb - ng, ng

    def frequencies(self) -> Tuple[float, float, float]:
        nb, nn, ng = self.counts()
        return nb / self.N, nn / self.N, ng / self.N

    def states(self) -> np.ndarray:
        """Dense (m, m, m) array of states; indices are (x, y, t) cube coordinates."""
        if self.N > _DENSE_LIMIT:
            raise DomainError(f"{self.N} cubes are too many for a dense state array")
        out = np.zeros(self.N, dtype=np.int8)
        out[self.bad] = BAD
        out[self.good] = GOOD
        return out.reshape(self.m, self.m, self.m)

    def state_of(self, flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.int64)
        out = np.zeros(len(flat), dtype=np.int8)
        out[np.isin(flat, self.bad)] = BAD
        out[np.isin(flat, self.good)] = GOOD
        return out


def cube_indices(points: np.ndarray, s: float, delta: float, m: int) -> np.ndarray:
    """Flat index of the cube containing each (x, y, t) point."""
    cell = np.floor(np.asarray(points, dtype=float) / delta).astype(np.int64)
    cell[:, :2] = np.mod(cell[:, :2], m)
    cell = np.clip(cell, 0, m - 1)
    return (cell[:, 0] * m + cell[:, 1]) * m + cell[:, 2]


def _cubes_per_side(s: float, delta: float) -> int:
    if not delta > 0:
        raise DomainError(f"cube side must be positive, got {delta}")
    ratio = s / delta
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise DomainError(f"s / delta = {ratio} is not an integer")
    return m


def crude_states(plus: SeedArray, minus: SeedArray, s: float, delta: float) -> CrudeGrid:
    """
    Bad if a cube holds a P- point, good if it holds P+ points only, neutral if empty.

    Raises:
        DomainError: s / delta is not an integer
    """
    m = _cubes_per_side(s, delta)
    bad = np.unique(cube_indices(minus.positions(), s, delta, m))
    good = np.setdiff1d(np.unique(cube_indices(plus.positions(), s, delta, m)), bad)
    return CrudeGrid(s, delta, m, bad, good)


def crude_state_probabilities(gamma: float, p: float, intensity: float = 1.0) -> Tuple[float, float, float]:
    """(p_bad, p_neutral, p_good) for a cube of volume gamma."""
    lam = gamma * intensity
    p_bad = 1.0 - math.exp(-lam * (1.0 - p))
    p_neut = math.exp(-lam)
    p_good = math.exp(-lam * (1.0 - p)) * (1.0 - math.exp(-lam * p))
    return p_bad, p_neut, p_good


def crude_chi_square(grid: CrudeGrid, p: float, intensity: float = 1.0):
    """Chi-square goodness of fit of the state counts against the cube probabilities."""
    observed = np.array(grid.counts(), dtype=float)
    expected = grid.N * np.array(crude_state_probabilities(grid.gamma, p, intensity))
    return stats.chisquare(observed, expected)


def lag_correlation(grid: CrudeGrid, axis: int) -> Tuple[float, float]:
    """Lag-1 correlation of states along one axis, with its null standard error."""
    states = grid.states().astype(float)
    a = np.moveaxis(states, axis, 0)
    x, y = a[:-1].ravel(), a[1:].ravel()
    if x.std() == 0 or y.std() == 0:
        return 0.0, 1.0 / math.sqrt(len(x))
    return float(np.corrcoef(x, y)[0, 1]), 1.0 / math.sqrt(len(x))


def _zero_truncated_poisson(lam: float, size: int, rng: np.random.Generator) -> np.ndarray:
    if size == 0:
        return np.zeros(0, np.int64)
    kmax = int(max(20, lam + 20 * math.sqrt(lam) + 20))
    k = np.arange(1, kmax + 1)
    pmf = stats.poisson.pmf(k, lam) / -math.expm1(-lam)
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    return k[np.searchsorted(cdf, rng.random(size))]


def resample_consistent(grid: CrudeGrid, p: float, rng: np.random.Generator, intensity: float = 1.0,
                        id_offset: int = 0) -> Tuple[SeedArray, SeedArray]:
    """
    A fresh (P+, P-) with exactly the crude states of `grid`.

    Bad cubes get a zero-truncated Poisson number of P- points and an ordinary
    Poisson number of P+ points; good cubes get a zero-truncated number of P+
    points only.
    """
    lam_plus = grid.gamma * intensity * p
    lam_minus = grid.gamma * intensity * (1.0 - p)
    n_minus = _zero_truncated_poisson(lam_minus, len(grid.bad), rng)
    n_plus_bad = rng.poisson(lam_plus, len(grid.bad))
    n_plus_good = _zero_truncated_poisson(lam_plus, len(grid.good), rng) if lam_plus > 0 else np.zeros(len(grid.good), np.int64)

    def scatter(cubes: np.ndarray, counts: np.ndarray, offset: int) -> SeedArray:
        flat = np.repeat(cubes, counts)
        m = grid.m
        cx, rest = np.divmod(flat, m * m)
        cy, ct = np.divmod(rest, m)
        pts = (np.column_stack([cx, cy, ct]) + rng.random((len(flat), 3))) * grid.delta
        return SeedArray(np.arange(offset, offset + len(flat)), pts[:, :2], pts[:, 2], np.zeros(len(flat)))

    minus = scatter(grid.bad, n_minus, id_offset)
    plus = SeedArray.concat([
        scatter(grid.bad, n_plus_bad, id_offset + len(minus)),
        scatter(grid.good, n_plus_good, id_offset + len(minus) + int(n_plus_bad.sum())),
    ])
    return plus, minus


# -- inputs and outputs ----------------------------------------------------


@dataclass
class CouplingInputs:
    """The three base processes of one coupling run and its constants."""
    s: float
    eps_prime: float
    p1: float
    p2: float
    metric: MetricKind
    P: SeedArray
    P_delta: SeedArray
    P_breve: SeedArray
    A: float = 2.0
    a: float = 0.1
    thickness: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.p1 <= self.p2 < 1.0:
            raise DomainError(f"need 0 < p1 <= p2 < 1, got p1={self.p1}, p2={self.p2}")
        if not 0.0 < self.delta_prime < 1.0:
            raise DomainError(f"delta' = s^(-eps') must lie in (0, 1), got {self.delta_prime}")
        if self.height <= self.delta_prime:
            raise DomainError(f"thickness {self.height} must exceed delta' = {self.delta_prime}")

    @property
    def delta_prime(self) -> float:
        return self.s ** (-self.eps_prime)

    @property
    def geometry(self) -> TorusGeometry:
        return TorusGeometry(self.s, self.height)

    @property
    def height(self) -> float:
        """Torus thickness; s unless set."""
        return self.thickness if self.thickness is not None else self.s

    @property
    def radius(self) -> float:
        """A (log s)^{1/3}."""
        return padding_radius(self.s, self.metric, self.A)

    @property
    def defect_prob(self) -> float:
        return self.p1 * math.sqrt(self.delta_prime)

    @property
    def size_threshold(self) -> float:
        """a log s: bound on potential adjacencies and very-close points per defect."""
        return self.a * math.log(self.s)

    def next_id(self) -> int:
        ids = [arr.ids for arr in (self.P, self.P_delta, self.P_breve) if len(arr)]
        return int(max(int(i.max()) for i in ids) + 1) if ids else 0

    @classmethod
    def sample(cls, s: float, eps_prime: float, p1: float, p2: float, metric: MetricKind, master_seed: int,
               trial_index: int, A: float = 2.0, a: float = 0.1, p_intensity: float = 1.0,
               thickness: Optional[float] = None) -> "CouplingInputs":
        """Sample P, P_delta and P_breve independently from three generator streams."""
        dp = s ** (-eps_prime)
        if not 0.0 < dp < 1.0:
            raise DomainError(f"delta' = s^(-eps') must lie in (0, 1), got {dp}")
        h = thickness if thickness is not None else s
        if h <= dp:
            raise DomainError(f"thickness {h} must exceed delta' = {dp}")
        P = sample_box(Box((0.0, 0.0, dp), (s, s, h)), p_intensity, trial_rng(master_seed, trial_index, 1))
        P_delta = sample_box(Box((0.0, 0.0, 0.0), (s, s, dp)), 1.0, trial_rng(master_seed, trial_index, 2),
                             id_offset=len(P))
        P_breve = sample_box(Box((0.0, 0.0, 0.0), (s, s, dp)), dp ** -0.5, trial_rng(master_seed, trial_index, 3),
                             id_offset=len(P) + len(P_delta))
        return cls(s, eps_prime, p1, p2, metric, P, P_delta, P_breve, A, a, thickness)


@dataclass
class DefectCluster:
    """A component of the closeness graph on potential defects, with Gamma(C)."""
    index: int
    members: List[int]
    gamma_p: List[int]
    gamma_delta: List[int]
    max_adjacent: int = 0
    max_very_close: int = 0
    B: bool = False
    G: bool = False
    G_prime: bool = False
    crossover: str = "none"
    fallback: bool = False
    q: float = float("nan")

    @property
    def gamma_size(self) -> int:
        return len(self.gamma_p) + len(self.gamma_delta)

    def record(self) -> dict:
        return {
            "cluster": self.index,
            "size": len(self.members),
            "gamma": self.gamma_size,
            "B": self.B,
            "G": self.G,
            "G_prime": self.G_prime,
            "crossover": self.crossover,
            "fallback": self.fallback,
            "q": None if math.isnan(self.q) or math.isinf(self.q) else self.q,
        }


@dataclass
class BadEvents:
    B1: bool = False
    B2: bool = False
    B3: bool = False
    B4: bool = False

    def any(self) -> bool:
        return self.B1 or self.B2 or self.B3 or self.B4

    def as_dict(self) -> Dict[str, bool]:
        return {"B1": self.B1, "B2": self.B2, "B3": self.B3, "B4": self.B4}


@dataclass
class _Assignment:
    """Per-seed inclusion indicators; rows follow the order of the input arrays."""
    p_circ: np.ndarray
    p_in2plus: np.ndarray
    d_in1minus: np.ndarray
    d_in2minus: np.ndarray
    defect: np.ndarray


@dataclass
class CouplingOutput:
    inputs: CouplingInputs
    P1_plus: SeedArray
    P1_minus: SeedArray
    P2_plus: SeedArray
    P2_minus: SeedArray
    P_circ: SeedArray
    D: SeedArray
    clusters: List[DefectCluster] = field(default_factory=list)
    bad: BadEvents = field(default_factory=BadEvents)
    fallback: bool = False
    assignment: Optional[_Assignment] = None

    @property
    def fallback_clusters(self) -> int:
        return sum(c.fallback for c in self.clusters)

    def monotone(self) -> bool:
        """P_circ within P2+ and P2- within P1-."""
        return self.P_circ.id_set() <= self.P2_plus.id_set() and self.P2_minus.id_set() <= self.P1_minus.id_set()


def _assemble(inp: CouplingInputs, st: _Assignment, clusters=None, bad=None, fallback=False) -> CouplingOutput:
    P, Pd, Pb = inp.P, inp.P_delta, inp.P_breve
    p_circ = P.subset(st.p_circ)
    D = Pb.subset(st.defect)
    return CouplingOutput(
        inputs=inp,
        P1_plus=SeedArray.concat([p_circ, D]),
        P1_minus=SeedArray.concat([P.subset(~st.p_circ), Pd.subset(st.d_in1minus)]),
        P2_plus=P.subset(st.p_in2plus),
        P2_minus=SeedArray.concat([P.subset(~st.p_in2plus), Pd.subset(st.d_in2minus)]),
        P_circ=p_circ,
        D=D,
        clusters=clusters or [],
        bad=bad or BadEvents(),
        fallback=fallback,
        assignment=st,
    )


def _natural_assignment(inp: CouplingInputs, rng: np.random.Generator) -> _Assignment:
    coin_p = rng.random(len(inp.P))
    coin_d = rng.random(len(inp.P_delta))
    defect = rng.random(len(inp.P_breve)) < inp.defect_prob
    return _Assignment(
        p_circ=coin_p < inp.p1,
        p_in2plus=coin_p < inp.p2,
        d_in1minus=coin_d >= inp.p1,
        d_in2minus=coin_d >= inp.p2,
        defect=defect,
    )


def natural_coupling(inp: CouplingInputs, rng: np.random.Generator) -> CouplingOutput:
    """
    Three-sided coin per seed of P (P_circ & P2+ / P1- & P2+ / P1- & P2-) and of
    P_delta (neither / P1- only / both); D thins P_breve at p1 delta'^{1/2}.
    """
    return _assemble(inp, _natural_assignment(inp, rng))


# -- defect clusters and bad events -------------------------------------------


def potential_tessellation(inp: CouplingInputs) -> Tessellation:
    """Tessellation of T(s) by P alone; colours are irrelevant here."""
    return Tessellation(ColouredProcess(inp.P, 0.0), inp.metric, inp.geometry)


def _wrap(x: np.ndarray, s: float) -> np.ndarray:
    x = np.mod(x, s)
    return np.where(x >= s, 0.0, x)


def _pairs_within(a: np.ndarray, b: Optional[np.ndarray], radius: float, inp: CouplingInputs) -> List[Tuple[int, int]]:
    """
    Index pairs (i, j) with torus d-distance <= radius between rows of a and b
    ((n, 3) arrays); pairs within a when b is None. Planar distance never exceeds
    d, so a planar search with the same radius finds every candidate.
    """
    s = inp.s
    if len(a) == 0 or (b is not None and len(b) == 0):
        return []
    radius_planar = min(radius, s / 2.0 * math.sqrt(2.0))
    tree_a = cKDTree(_wrap(a[:, :2], s), boxsize=s)
    if b is None:
        pairs = np.array(sorted(tree_a.query_pairs(radius_planar)), dtype=np.int64).reshape(-1, 2)
        other = a
    else:
        tree_b = cKDTree(_wrap(b[:, :2], s), boxsize=s)
        hits = tree_a.query_ball_tree(tree_b, radius_planar)
        pairs = np.array([(i, j) for i, js in enumerate(hits) for j in js], dtype=np.int64).reshape(-1, 2)
        other = b
    if len(pairs) == 0:
        return []
    d = torus_distances(a[pairs[:, 0]], other[pairs[:, 1]], s, inp.metric)
    keep = d <= radius
    return [(int(i), int(j)) for i, j in pairs[keep]]


def defect_clusters(inp: CouplingInputs, T_P: Optional[Tessellation] = None,
                    angular_budget: Optional[int] = None) -> List[DefectCluster]:
    """
    Components of the closeness graph on P_breve (d-distance at most 4A(log s)^{1/3})
    with Gamma(C): the P seeds potentially adjacent to a member and the P_delta seeds
    within 2A(log s)^{1/3} of a member.
    """
    Pb = inp.P_breve
    if len(Pb) == 0:
        return []
    T_P = T_P or potential_tessellation(inp)
    r = inp.radius
    graph = nx.Graph()
    graph.add_nodes_from(range(len(Pb)))
    graph.add_edges_from(_pairs_within(Pb.positions(), None, 4.0 * r, inp))

    cells = probe_extra_cells(T_P, Pb, angular_budget or settings.angular_budget)
    adjacent = {i: sorted(cells[int(Pb.ids[i])].neighbours) for i in range(len(Pb))}
    very_close: Dict[int, List[int]] = {i: [] for i in range(len(Pb))}
    for i, j in _pairs_within(Pb.positions(), inp.P_delta.positions(), 2.0 * r, inp):
        very_close[i].append(int(inp.P_delta.ids[j]))

    clusters = []
    components = sorted((sorted(c) for c in nx.connected_components(graph)), key=lambda c: c[0])
    for index, rows in enumerate(components):
        gamma_p = sorted({z for i in rows for z in adjacent[i]})
        gamma_d = sorted({z for i in rows for z in very_close[i]})
        clusters.append(DefectCluster(
            index=index,
            members=[int(Pb.ids[i]) for i in rows],
            gamma_p=gamma_p,
            gamma_delta=gamma_d,
            max_adjacent=max(len(adjacent[i]) for i in rows),
            max_very_close=max(len(very_close[i]) for i in rows),
        ))
    logger.debug("%d potential defects in %d clusters", len(Pb), len(clusters))
    return clusters


def b1_grid_spacing(inp: CouplingInputs, max_points: int = 1 << 20) -> float:
    """delta', coarsened so the check grid has at most max_points points."""
    return max(inp.delta_prime, inp.s / math.sqrt(max_points))


def bad_events(inp: CouplingInputs, clusters: List[DefectCluster], T_P: Optional[Tessellation] = None) -> BadEvents:
    """
    B1: some grid point of T(s) has no P point within A(log s)^{1/3}.
    B2: a cluster has more than 10/eps' potential defects.
    B3: a potential defect is potentially adjacent to at least a log s points of P.
    B4: a potential defect is within 2A(log s)^{1/3} of at least a log s points of P_delta.
    """
    r = inp.radius
    if len(inp.P) == 0:
        b1 = True
    else:
        T_P = T_P or potential_tessellation(inp)
        h = b1_grid_spacing(inp)
        n = max(1, int(math.ceil(inp.s / h)))
        g = (np.arange(n) + 0.5) * (inp.s / n)
        gx, gy = np.meshgrid(g, g, indexing="ij")
        _, d1, _, _ = T_P.nearest_rows(np.column_stack([gx.ravel(), gy.ravel()]), "all", need_runner=False)
        b1 = bool(np.any(d1 > r))
    threshold = inp.size_threshold
    return BadEvents(
        B1=b1,
        B2=any(len(c.members) > 10.0 / inp.eps_prime for c in clusters),
        B3=any(c.max_adjacent >= threshold for c in clusters),
        B4=any(c.max_very_close >= threshold for c in clusters),
    )


# -- crossed coupling -----------------------------------------------------


def cluster_probabilities(inp: CouplingInputs, cluster: DefectCluster) -> Tuple[float, float, float]:
    """(Pr(B(C)), Pr(G(C)), q) with q = Pr(B) / (Pr(G) (1 - Pr(B)))."""
    p_b = 1.0 - (1.0 - inp.defect_prob) ** len(cluster.members)
    p_g = (inp.p2 - inp.p1) ** cluster.gamma_size
    if p_g <= 0.0 or p_b >= 1.0:
        return p_b, p_g, math.inf
    return p_b, p_g, p_b / (p_g * (1.0 - p_b))


def _row_lookup(arr: SeedArray) -> Dict[int, int]:
    return {int(i): r for r, i in enumerate(arr.ids)}


def crossed_coupling(inp: CouplingInputs, rng: np.random.Generator, T_P: Optional[Tessellation] = None,
                     angular_budget: Optional[int] = None) -> CouplingOutput:
    """
    Natural coupling crossed over on B(C) and G'(C) for every defect cluster.

    On B(C) the P2 side of Gamma(C) takes the configuration forced by G(C); on
    G'(C) = G(C), not B(C), U_C <= q it is redrawn independently; the P1 side is
    never modified. Any bad event completes the run as the natural coupling with
    the fallback flag set. A cluster with q > 1 keeps its natural states and is
    counted as a fallback only when it contains a defect.
    """
    T_P = T_P or potential_tessellation(inp)
    clusters = defect_clusters(inp, T_P, angular_budget)
    bad = bad_events(inp, clusters, T_P)
    st = _natural_assignment(inp, rng)
    if bad.any():
        logger.warning("bad events %s; completing as the natural coupling", bad.as_dict())
        return _assemble(inp, st, clusters, bad, fallback=True)

    p_rows = _row_lookup(inp.P)
    d_rows = _row_lookup(inp.P_delta)
    b_rows = _row_lookup(inp.P_breve)
    for cluster in clusters:
        u_c = rng.random()
        gp = np.array([p_rows[z] for z in cluster.gamma_p], dtype=np.int64)
        gd = np.array([d_rows[z] for z in cluster.gamma_delta], dtype=np.int64)
        members = np.array([b_rows[z] for z in cluster.members], dtype=np.int64)
        p_b, p_g, q = cluster_probabilities(inp, cluster)
        cluster.q = q
        cluster.B = bool(st.defect[members].any())
        # G: every Gamma seed in P1- and none in P2-
        cluster.G = bool(np.all(~st.p_circ[gp] & st.p_in2plus[gp]) and np.all(st.d_in1minus[gd] & ~st.d_in2minus[gd]))
        if cluster.gamma_size and q > 1.0:
            # only a cluster that actually holds a defect is left uncorrected
            cluster.fallback = cluster.B
            continue
        cluster.G_prime = cluster.G and not cluster.B and u_c <= q
        if cluster.B:
            st.p_in2plus[gp] = True
            st.d_in2minus[gd] = False
            cluster.crossover = "forced"
        elif cluster.G_prime:
            st.p_in2plus[gp] = rng.random(len(gp)) < inp.p2
            st.d_in2minus[gd] = rng.random(len(gd)) >= inp.p2
            cluster.crossover = "redrawn"
    n_fallback = sum(c.fallback for c in clusters)
    if n_fallback:
        logger.warning("%d of %d clusters fell back to the natural coupling (q > 1)", n_fallback, len(clusters))
    return _assemble(inp, st, clusters, bad, fallback=False)


@dataclass
class ClusterMarginal:
    """Exact final P2-side marginals of one cluster's Gamma seeds."""
    p_plus: List[float]
    p_minus: List[float]
    q: float
    fallback: bool


def enumerate_cluster_marginal(p1: float, p2: float, delta_prime: float, members: int, gamma_p: int,
                               gamma_delta: int = 0) -> ClusterMarginal:
    """
    Enumerate every coin outcome of a cluster (three branches per Gamma seed, one
    defect coin per member, the U_C threshold) and return Pr(z in P2+) for each
    Gamma seed of P and Pr(z in P2-) for each Gamma seed of P_delta.
    """
    pd = p1 * math.sqrt(delta_prime)
    n = gamma_p + gamma_delta
    p_g = (p2 - p1) ** n
    branch_prob = (p1, p2 - p1, 1.0 - p2)
    defect_outcomes = []
    for coins in product((False, True), repeat=members):
        prob = 1.0
        for c in coins:
            prob *= pd if c else (1.0 - pd)
        defect_outcomes.append((any(coins), prob))
    p_b = sum(prob for hit, prob in defect_outcomes if hit)
    q = p_b / (p_g * (1.0 - p_b)) if p_g > 0.0 and p_b < 1.0 else math.inf
    fallback = n > 0 and q > 1.0
    plus = np.zeros(gamma_p)
    minus = np.zeros(gamma_delta)
    redraw_plus = np.full(gamma_p, p2)
    redraw_minus = np.full(gamma_delta, 1.0 - p2)
    for branches in product(range(3), repeat=n):
        w = 1.0
        for b in branches:
            w *= branch_prob[b]
        natural_plus = np.array([b < 2 for b in branches[:gamma_p]], dtype=float)
        natural_minus = np.array([b == 2 for b in branches[gamma_p:]], dtype=float)
        good = all(b == 1 for b in branches)
        for hit, prob in defect_outcomes:
            mass = w * prob
            if fallback:
                plus += mass * natural_plus
                minus += mass * natural_minus
            elif hit:
                plus += mass * 1.0
            elif good:
                plus += mass * (q * redraw_plus + (1.0 - q) * natural_plus)
                minus += mass * (q * redraw_minus + (1.0 - q) * natural_minus)
            else:
                plus += mass * natural_plus
                minus += mass * natural_minus
    return ClusterMarginal(plus.tolist(), minus.tolist(), q, fallback)


# -- verification -----------------------------------------------------------


def two_colour_tessellation(plus: SeedArray, minus: SeedArray, metric: MetricKind, s: float,
                            thickness: Optional[float] = None) -> Tessellation:
    """Tessellation of T(s) by plus (black) and minus (white); ids are renumbered."""
    seeds = SeedArray.concat([
        SeedArray(np.zeros(len(plus)), plus.w, plus.t, np.zeros(len(plus))),
        SeedArray(np.zeros(len(minus)), minus.w, minus.t, np.ones(len(minus))),
    ])
    seeds = seeds.with_ids(np.arange(len(seeds)))
    return Tessellation(ColouredProcess(seeds, 0.5), metric, TorusGeometry(s, thickness or s))


@dataclass
class GlobalEventReport:
    skipped: bool
    checked_outside: int = 0
    violations_outside: int = 0
    components: int = 0
    checked_boundary: int = 0
    violations_boundary: int = 0
    max_diameter: float = 0.0
    violations_diameter: int = 0

    @property
    def violations(self) -> int:
        return self.violations_outside + self.violations_boundary + self.violations_diameter

    def as_dict(self) -> dict:
        return {
            "skipped": self.skipped,
            "checked_outside": self.checked_outside,
            "violations_outside": self.violations_outside,
            "components": self.components,
            "checked_boundary": self.checked_boundary,
            "violations_boundary": self.violations_boundary,
            "max_diameter": self.max_diameter,
            "violations_diameter": self.violations_diameter,
        }


def _torus_components(mask: np.ndarray) -> np.ndarray:
    """4-connected components of a periodic boolean raster; 0 outside mask."""
    n0, n1 = mask.shape
    idx = np.arange(mask.size).reshape(n0, n1)
    right = mask & np.roll(mask, -1, axis=0)
    up = mask & np.roll(mask, -1, axis=1)
    src = np.concatenate([idx[right], idx[up]])
    dst = np.concatenate([np.roll(idx, -1, axis=0)[right], np.roll(idx, -1, axis=1)[up]])
    graph = coo_matrix((np.ones(len(src)), (src, dst)), shape=(mask.size, mask.size))
    _, labels = connected_components(graph, directed=False)
    labels = labels.reshape(n0, n1) + 1
    return np.where(mask, labels, 0)


def _torus_diameter(points: np.ndarray, s: float) -> float:
    if len(points) < 2:
        return 0.0
    rel = np.mod(points - points[0] + s / 2.0, s) - s / 2.0
    return float(pdist(rel).max())


def verify_global_event(out: CouplingOutput, h: Optional[float] = None) -> GlobalEventReport:
    """
    Raster checks of the global event on T(s): (i) black points for level p1 whose
    nearest seed is not a defect stay black at level p2; (ii) pixels just outside
    each union U of defect cells are black at level p2; (iii) every U has diameter
    at most log s. Clusters that fell back are left out of (ii).
    """
    if out.fallback:
        return GlobalEventReport(skipped=True)
    inp = out.inputs
    s = inp.s
    h = h or s / settings.grid_divisions
    n = max(2, int(round(s / h)))
    g = (np.arange(n) + 0.5) * (s / n)
    gx, gy = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])

    T1 = Tessellation(ColouredProcess(SeedArray.concat([
        SeedArray(out.P1_plus.ids, out.P1_plus.w, out.P1_plus.t, np.zeros(len(out.P1_plus))),
        SeedArray(out.P1_minus.ids, out.P1_minus.w, out.P1_minus.t, np.ones(len(out.P1_minus))),
    ]), 0.5), inp.metric, inp.geometry)
    T2 = two_colour_tessellation(out.P2_plus, out.P2_minus, inp.metric, s, inp.height)
    win1, _, _, _ = T1.nearest_rows(pts, "all", need_runner=False)
    black1 = T1.black[win1]
    black2 = T2.black_at(pts)
    non_defect = ~np.isin(T1.seeds.ids[win1], out.D.ids)
    outside = black1 & non_defect
    report = GlobalEventReport(skipped=False)
    report.checked_outside = int(outside.sum())
    report.violations_outside = int((outside & ~black2).sum())

    if len(out.D):
        TD = potential_tessellation(inp).with_extra(out.D)
        winD, _, _, _ = TD.nearest_rows(pts, "all", need_runner=False)
        win_ids = TD.seeds.ids[winD].reshape(n, n)
        defect_mask = np.isin(win_ids, out.D.ids)
        labels = _torus_components(defect_mask)
        fallback_members = {z for c in out.clusters if c.fallback for z in c.members}
        black2_grid = black2.reshape(n, n)
        for lab in np.unique(labels[labels > 0]):
            comp = labels == lab
            report.components += 1
            diameter = _torus_diameter(np.column_stack([gx[comp], gy[comp]]), s)
            report.max_diameter = max(report.max_diameter, diameter)
            if diameter > math.log(s):
                report.violations_diameter += 1
            if fallback_members & set(np.unique(win_ids[comp]).tolist()):
                continue
            ring = (np.roll(comp, 1, 0) | np.roll(comp, -1, 0) | np.roll(comp, 1, 1) | np.roll(comp, -1, 1)) & ~defect_mask
            report.checked_boundary += int(ring.sum())
            report.violations_boundary += int((ring & ~black2_grid).sum())
    if report.violations:
        logger.warning("global event violations: %s", report.as_dict())
    return report


# -- shift argument -------------------------------------------------------


def shift_reduction(x, w, t: float, delta_prime: float, metric: MetricKind) -> float:
    """d((x,0), (w,t)) - d((x,0), (w,t - delta'))."""
    dx, dy = float(x[0]) - float(w[0]), float(x[1]) - float(w[1])
    before = planar_norms(np.array(dx), np.array(dy), np.array(t), metric)
    after = planar_norms(np.array(dx), np.array(dy), np.array(t - delta_prime), metric)
    return float(before - after)


@dataclass
class ShiftResult:
    P2_plus: SeedArray
    top_layer: SeedArray
    reductions: np.ndarray
    bounds: np.ndarray


def shift_transform(P2_plus_tilde: SeedArray, delta_prime: float, metric: MetricKind, s: float, p2: float,
                    rng: np.random.Generator, queries: Optional[np.ndarray] = None, id_offset: Optional[int] = None,
                    thickness: Optional[float] = None) -> ShiftResult:
    """
    Lower every seed by delta' and add a fresh layer of intensity p2 on
    T(s) x [h - delta', h], h the thickness (s unless given). For each query point the distance reduction of its
    nearest seed is reported with the bound delta'^2 / (2 d).

    Raises:
        DomainError: a seed lies below height delta'
    """
    if len(P2_plus_tilde) and float(P2_plus_tilde.t.min()) < delta_prime - 1e-12:
        raise DomainError("every seed must lie at height at least delta'")
    offset = id_offset if id_offset is not None else (int(P2_plus_tilde.ids.max()) + 1 if len(P2_plus_tilde) else 0)
    h = thickness or s
    shifted = P2_plus_tilde.with_heights(P2_plus_tilde.t - delta_prime)
    top = sample_box(Box((0.0, 0.0, h - delta_prime), (s, s, h)), p2, rng, id_offset=offset) if p2 > 0 else SeedArray.empty()
    reductions = np.zeros(0)
    bounds = np.zeros(0)
    if queries is not None and len(P2_plus_tilde):
        T = Tessellation(ColouredProcess(P2_plus_tilde, 1.0), metric, TorusGeometry(s, h))
        win, d_before, _, _ = T.nearest_rows(np.asarray(queries, dtype=float), "all", need_runner=False)
        x = T._prepare(queries)
        d_after = T.seed_distances(x, T.seeds.w[win], T.seeds.t[win] - delta_prime)
        reductions = d_before - d_after
        bounds = np.where(d_before >= delta_prime, delta_prime ** 2 / (2.0 * d_before), 0.0)
    return ShiftResult(SeedArray.concat([shifted, top]), top, reductions, bounds)


@dataclass
class RobustCheck:
    checked: int
    failures: int
    eta: float


def robust_from_shift_check(out: CouplingOutput, shift: ShiftResult, delta: float, n_points: int,
                            rng: np.random.Generator) -> RobustCheck:
    """
    Sample points of T(s) black for (P2+~, P2-) and count those that are not
    (2 C_d delta)-robustly black for (shifted P2+, P2-).
    """
    inp = out.inputs
    eta = 2.0 * unit_cube_diameter(inp.metric) * delta
    pts = rng.random((n_points, 2)) * inp.s
    T_before = two_colour_tessellation(out.P2_plus, out.P2_minus, inp.metric, inp.s, inp.height)
    T_after = two_colour_tessellation(shift.P2_plus, out.P2_minus, inp.metric, inp.s, inp.height)
    black = T_before.black_at(pts)
    robust = robustly_black_many(pts[black], T_after, eta)
    return RobustCheck(int(black.sum()), int((~robust).sum()), eta)


def crude_survival_check(plus: SeedArray, minus: SeedArray, s: float, delta: float, metric: MetricKind, p: float,
                         n_points: int, rng: np.random.Generator, intensity: float = 1.0) -> RobustCheck:
    """
    Points (2 C_d delta)-robustly black for (plus, minus) must stay black for a
    fresh realization with the same crude states. delta is rounded down so that
    s / delta is an integer.
    """
    delta = s / math.ceil(s / delta - 1e-9)
    grid = crude_states(plus, minus, s, delta)
    eta = 2.0 * unit_cube_diameter(metric) * delta
    fresh_plus, fresh_minus = resample_consistent(grid, p, rng, intensity)
    T_orig = two_colour_tessellation(plus, minus, metric, s)
    T_new = two_colour_tessellation(fresh_plus, fresh_minus, metric, s)
    pts = rng.random((n_points, 2)) * s
    robust = robustly_black_many(pts, T_orig, eta)
    flips = ~T_new.black_at(pts[robust]) if robust.any() else np.zeros(0, bool)
    return RobustCheck(int(robust.sum()), int(flips.sum()), eta)


@dataclass
class CrudeReport:
    """Crude-state statistics of one homogeneous two-colour sample on T(s) x [0, s]."""
    delta: float
    chi_square_pvalue: float
    lag_z: Tuple[float, float, float]
    survival: RobustCheck

    @property
    def max_lag_z(self) -> float:
        return max(abs(z) for z in self.lag_z)


def crude_state_report(s: float, delta: float, metric: MetricKind, p: float, n_points: int,
                       rng: np.random.Generator, intensity: float = 1.0, max_side: int = 128) -> CrudeReport:
    """
    Sample (P+, P-) at level p and classify the cubes of side delta. delta is
    rounded down so that s / delta is an integer, but never below s / max_side.
    Reports the chi-square fit of the state counts, the lag-1 correlation along
    each axis in units of its null standard error, and the survival check of
    robustly black points under resampling.
    """
    delta = s / min(math.ceil(s / delta - 1e-9), max_side)
    box = Box((0.0, 0.0, 0.0), (s, s, s))
    plus = sample_box(box, intensity * p, rng)
    minus = sample_box(box, intensity * (1.0 - p), rng, id_offset=len(plus))
    grid = crude_states(plus, minus, s, delta)
    lags = tuple(r / se for r, se in (lag_correlation(grid, axis) for axis in range(3)))
    survival = crude_survival_check(plus, minus, s, delta, metric, p, n_points, rng, intensity)
    return CrudeReport(delta, float(crude_chi_square(grid, p, intensity).pvalue), lags, survival)
