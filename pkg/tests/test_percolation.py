"""Tests for crossings, origin clusters, tails and the critical bracket."""
import math

import numpy as np
import pytest

from tessera.exceptions import DomainError
from tessera.geometry import MetricKind, Rect
from tessera import percolation
from tessera.percolation import (
    EstimateCI, bracket_pc, chain_is_walk, cluster_of_origin, cluster_trial, cluster_window, crossing,
    crossing_path, crossing_trial, crossing_window, estimate_crossing_prob, estimate_theta_chi, fit_log_slope,
    rasterize, tail_estimate,
)
from tessera.process import ColouredProcess, PlanarWindow, sample_poisson
from tessera.tessellation import Tessellation, adjacency_graph

from .conftest import tessellation_of

S = 6.0


def window_tessellation(p: float, trial: int = 0, metric: MetricKind = MetricKind.JOHNSON_MEHL, s: float = S):
    R, window = crossing_window(1.0, s, metric)
    seeds = sample_poisson(window, 1.0, 31, trial)
    return R, Tessellation(ColouredProcess(seeds, p), metric, window)


class TestEstimateCI:
    def test_bernoulli(self):
        est = EstimateCI.from_bernoulli([True, False, True, True])
        assert est.estimate == 0.75
        assert est.stderr == pytest.approx(math.sqrt(0.75 * 0.25 / 4))
        assert est.interval(2.0) == pytest.approx((0.75 - 2 * est.stderr, 0.75 + 2 * est.stderr))

    def test_values(self):
        est = EstimateCI.from_values([1.0, 2.0, 3.0])
        assert est.estimate == 2.0
        assert est.stderr == pytest.approx(1.0 / math.sqrt(3.0))

    def test_empty(self):
        with pytest.raises(DomainError):
            EstimateCI.from_bernoulli([])


class TestCrossing:
    """Test raster crossing decisions and their certificate."""

    def test_all_black(self):
        R, T = window_tessellation(1.0)
        c = crossing(T, R)
        assert c.Hb and not c.Vw and c.certified and c.Vb

    def test_all_white(self):
        R, T = window_tessellation(0.0)
        c = crossing(T, R)
        assert not c.Hb and c.Vw and c.certified

    @pytest.mark.parametrize("trial", range(6))
    def test_duality_when_certified(self, trial):
        R, T = window_tessellation(0.5, trial)
        c = crossing(T, R)
        if c.certified:
            assert c.Hb != c.Vw

    def test_rectangle_outside_window(self):
        R, T = window_tessellation(0.5)
        with pytest.raises(DomainError):
            crossing(T, R.expanded(T.domain.padding))

    def test_bad_resolution(self):
        R, T = window_tessellation(0.5)
        with pytest.raises(DomainError):
            crossing(T, R, h0=0.0)

    def test_half_plane_split(self):
        # black seeds left of x = 2, white to the right: no black horizontal crossing of [0, 4] x [0, 4]
        window = PlanarWindow(Rect(0.0, 4.0, 0.0, 4.0), padding=2.0, height_cap=2.0, safe_radius=1.0)
        pts = [(x, y, 0.0) for x in np.arange(-1.5, 6.0, 1.0) for y in np.arange(-1.5, 6.0, 1.0)]
        u = [0.0 if x < 2.0 else 1.0 for x, _, _ in pts]
        T = tessellation_of(pts, u=u, p=0.5, domain=window)
        c = crossing(T, Rect(0.0, 4.0, 0.0, 4.0))
        assert c.certified and not c.Hb and c.Vw and c.Vb


class TestMonotonicity:
    @pytest.mark.parametrize("trial", range(4))
    def test_crossings_nested_in_p(self, trial):
        samples = crossing_trial(trial, ps=[0.2, 0.5, 0.8], rho=1.0, s=S, metric="jm", master_seed=3)
        hb = [c.Hb for c in samples]
        assert all(b or not a for a, b in zip(hb, hb[1:]))

    def test_trial_is_reproducible(self):
        a = crossing_trial(2, ps=[0.5], rho=1.0, s=S, metric="euclid3", master_seed=9)
        b = crossing_trial(2, ps=[0.5], rho=1.0, s=S, metric="euclid3", master_seed=9)
        assert a == b


class TestEstimateCrossing:
    def test_extremes(self):
        assert estimate_crossing_prob(1.0, 1.0, S, 3, 0).estimate == 1.0
        assert estimate_crossing_prob(0.0, 1.0, S, 3, 0).estimate == 0.0

    def test_collects_samples(self):
        samples = []
        est = estimate_crossing_prob(0.5, 1.0, S, 4, 1, samples=samples)
        assert len(samples) == 4
        assert est.estimate == np.mean([c.Hb for c in samples])

    def test_needs_trials(self):
        with pytest.raises(DomainError):
            estimate_crossing_prob(0.5, 1.0, S, 0, 0)

    def test_padding_constant_reaches_window(self, monkeypatch):
        seen = []

        def spy(rho, s, metric, A=None):
            seen.append(A)
            return crossing_window(rho, s, metric, A)

        monkeypatch.setattr(percolation, "crossing_window", spy)
        estimate_crossing_prob(0.5, 1.0, S, 2, 0, padding_A=3.5)
        assert seen == [3.5, 3.5]


class TestCrossingPath:
    def test_path_visits_black_cells(self):
        R, T = window_tessellation(0.8, trial=1)
        chain = crossing_path(rasterize(T, R, R.scale / 128))
        if crossing(T, R).Hb:
            assert chain
            assert all(T.black[T.rows_of(chain)])
            assert all(a != b for a, b in zip(chain, chain[1:]))

    def test_walk_check(self):
        G = adjacency_graph(tessellation_of([(0.0, 0.0, 0.0), (2.0, 0.0, 0.0), (4.0, 0.0, 0.0)]))
        assert chain_is_walk([0, 1, 2], G)
        assert not chain_is_walk([0, 2], G)

    def test_no_path_when_white(self):
        R, T = window_tessellation(0.0)
        assert crossing_path(rasterize(T, R, R.scale / 64)) == []


class TestClusters:
    """Test the origin cluster search."""

    def test_white_origin(self):
        report = cluster_trial(0, p=0.0, window_scale=S, metric="jm", master_seed=1)
        assert report.count == 0 and not report.censored and report.members == []

    def test_all_black_is_censored(self):
        report = cluster_trial(0, p=1.0, window_scale=S, metric="jm", master_seed=1)
        assert report.censored and report.count >= 1

    def test_single_black_cell(self):
        window = PlanarWindow(Rect(-4.0, 4.0, -4.0, 4.0), padding=3.0, height_cap=3.0, safe_radius=1.0)
        pts = [(0.0, 0.0, 0.0)] + [(3.0 * math.cos(a), 3.0 * math.sin(a), 0.0) for a in np.linspace(0, 2 * math.pi, 9)[:-1]]
        T = tessellation_of(pts, u=[0.0] + [1.0] * 8, p=0.5, domain=window)
        report = cluster_of_origin(T, origin=np.zeros(2))
        assert report.members == [0] and report.count == 1 and not report.censored
        assert report.area > 0.0 and report.diameter > 0.0

    def test_max_members(self):
        report = cluster_trial(0, p=1.0, window_scale=S, metric="jm", master_seed=1, max_members=3)
        assert report.count >= 3

    def test_cluster_window_is_centred(self):
        window = cluster_window(10.0, MetricKind.JOHNSON_MEHL)
        t = window.target
        assert (t.a + t.b, t.c + t.d) == (0.0, 0.0)


class TestTails:
    def test_subcritical_zero(self):
        est = tail_estimate(0.0, [1, 2, 3], 10, S, master_seed=2)
        assert est.survival == [0.0, 0.0, 0.0]
        assert est.censored_count == 0

    def test_survival_nonincreasing(self):
        est = tail_estimate(0.3, [1, 2, 4, 8], 25, 20.0, master_seed=2)
        assert all(b <= a for a, b in zip(est.survival, est.survival[1:]))
        assert [row["n"] for row in est.rows()] == [1, 2, 4, 8]

    def test_bad_sizes(self):
        with pytest.raises(DomainError):
            tail_estimate(0.3, [0, 1], 5, S)

    def test_fit_exact_exponential(self):
        sizes = list(range(1, 11))
        survival = [math.exp(-0.5 * n) for n in sizes]
        slope, (lo, hi) = fit_log_slope(sizes, survival, 10 ** 6)
        assert slope == pytest.approx(-0.5)
        assert lo == pytest.approx(-0.5) and hi == pytest.approx(-0.5)

    def test_fit_needs_three_points(self):
        slope, _ = fit_log_slope([1, 2, 3], [0.5, 0.0, 0.0], 100)
        assert math.isnan(slope)

    def test_theta_chi(self):
        stats = estimate_theta_chi(0.0, S, 4, master_seed=1)
        assert stats.theta.estimate == 0.0 and stats.chi.estimate == 0.0

    def test_tail_carries_theta_chi(self):
        est = tail_estimate(0.0, [1, 2, 3], 4, S, master_seed=2)
        assert est.theta_chi.theta.estimate == 0.0
        assert est.theta_chi.chi.estimate == 0.0 and est.theta_chi.chi.trials == 4

    def test_tail_padding_constant_reaches_window(self, monkeypatch):
        seen = []

        def spy(window_scale, metric, A=None):
            seen.append(A)
            return cluster_window(window_scale, metric, A)

        monkeypatch.setattr(percolation, "cluster_window", spy)
        tail_estimate(0.0, [1, 2, 3], 3, S, master_seed=2, padding_A=3.5)
        assert seen == [3.5, 3.5, 3.5]


class TestBracket:
    def test_tolerance_floor(self):
        with pytest.raises(DomainError):
            bracket_pc(tolerance=0.01)


@pytest.mark.slow
class TestAcceptance:
    """Desk-scale Monte Carlo checks."""

    @pytest.mark.parametrize("metric", ["jm", "euclid3"])
    def test_self_duality(self, metric):
        samples = []
        est = estimate_crossing_prob(0.5, 1.0, 30.0, 2000, 20240601, metric, samples=samples)
        assert abs(est.estimate - 0.5) <= 3.0 * est.stderr
        certified = [c for c in samples if c.certified]
        assert all(c.Hb != c.Vw for c in certified)
        assert len(samples) - len(certified) < 0.01 * len(samples)

    def test_left_right_and_top_bottom_agree(self):
        results = [crossing_trial(i, ps=[0.5], rho=1.0, s=30.0, metric="jm", master_seed=8)[0] for i in range(1000)]
        hb = np.array([c.Hb for c in results], dtype=float)
        vb = np.array([c.Vb for c in results], dtype=float)
        se = math.sqrt((hb.var() + vb.var()) / len(results))
        assert abs(hb.mean() - vb.mean()) <= 3.0 * se

    def test_off_critical(self):
        results = [crossing_trial(i, ps=[0.2, 0.5, 0.8], rho=1.0, s=30.0, metric="jm", master_seed=7)
                   for i in range(1000)]
        low = np.mean([r[0].Hb for r in results])
        high = np.mean([r[2].Hb for r in results])
        assert low <= 0.05 and high >= 0.95
        assert all(b.Hb or not a.Hb for r in results for a, b in zip(r, r[1:]))

    def test_subcritical_tail(self):
        est = tail_estimate(0.3, list(range(2, 21)), 20000, 30.0, master_seed=5)
        assert est.slope_ci[1] < 0.0
        assert est.censored_count < 0.05 * est.trials

    @pytest.mark.parametrize("metric", ["jm", "euclid3"])
    def test_bracket_contains_half(self, metric):
        assert bracket_pc(1.0, 30.0, 400, 0.04, 11, metric).contains(0.5)
