"""Tests for neighbour counts of the origin's cell and the face-count tails."""
import math

import numpy as np
import pytest

from tessera.exceptions import DomainError
from tessera.faces import (
    PLANAR, THREE_D, FaceCountSample, delaunay_neighbours_3d, face_counts, face_tail_estimate, face_trial,
    hilhorst_ratio, hilhorst_ratio_check, initial_level, local_radius, neighbor_count_3d, planar_neighbor_count,
)
from tessera.geometry import MetricKind, norm_values
from tessera.process import Box, SeedArray, sample_box, trial_rng

from .conftest import seeds_from

AXES = [(1.0, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, -1.0, 0.0), (0.0, 0.0, 1.0), (0.0, 0.0, -1.0)]


def counts_as_samples(counts, mode=PLANAR):
    return [FaceCountSample(k, 0, "euclid3", mode) for k in counts]


class TestDirections:
    @pytest.mark.parametrize("probes,level", [(12, 0), (42, 1), (64, 2), (128, 2), (162, 2), (163, 3)])
    def test_initial_level(self, probes, level):
        assert initial_level(probes) == level


class TestNeighbourCount3D:
    """Test radial probing of the origin's cell in R^3."""

    def test_single_seed(self):
        sample = neighbor_count_3d(seeds_from([(2.0, 0.0, 0.0)]), MetricKind.EUCLIDEAN3)
        assert sample.k == 1 and sample.neighbours == (0,)
        assert sample.unbounded and sample.mode == THREE_D

    def test_cube_cell(self):
        sample = neighbor_count_3d(seeds_from(AXES), MetricKind.EUCLIDEAN3)
        assert sample.k == 6 and not sample.unbounded
        assert sample.probes == 162

    def test_no_seeds(self):
        sample = neighbor_count_3d(SeedArray.empty(), MetricKind.JOHNSON_MEHL)
        assert sample.k == 0 and sample.unbounded

    def test_too_few_probes(self):
        with pytest.raises(DomainError):
            neighbor_count_3d(seeds_from(AXES), MetricKind.EUCLIDEAN3, probes=32)

    def test_far_seed_shadowed(self):
        # (3, 0, 0) is hidden behind (1, 0, 0)
        sample = neighbor_count_3d(seeds_from(AXES + [(3.0, 0.0, 0.0)]), MetricKind.EUCLIDEAN3)
        assert 6 not in sample.neighbours and sample.k == 6

    @pytest.mark.parametrize("trial", range(3))
    def test_agrees_with_delaunay(self, trial):
        P = sample_box(Box((-3.0, -3.0, -3.0), (3.0, 3.0, 3.0)), 1.0, trial_rng(41, trial))
        probed = set(neighbor_count_3d(P, MetricKind.EUCLIDEAN3, probes=128).neighbours)
        oracle = set(delaunay_neighbours_3d(P))
        assert probed <= oracle
        assert len(probed) >= 0.75 * len(oracle)

    @pytest.mark.parametrize("metric", [MetricKind.EUCLIDEAN3, MetricKind.JOHNSON_MEHL])
    @pytest.mark.parametrize("trial", range(2))
    def test_finer_probes_keep_neighbours(self, metric, trial):
        P = sample_box(Box((-3.0, -3.0, -3.0), (3.0, 3.0, 3.0)), 1.0, trial_rng(42, trial))
        coarse = neighbor_count_3d(P, metric, probes=64)
        fine = neighbor_count_3d(P, metric, probes=163)
        assert fine.probes > coarse.probes
        assert set(coarse.neighbours) <= set(fine.neighbours)
        assert fine.k >= coarse.k

    @pytest.mark.parametrize("metric", [MetricKind.EUCLIDEAN3, MetricKind.JOHNSON_MEHL])
    @pytest.mark.parametrize("trial", range(2))
    def test_nearest_neighbour_relation_is_symmetric(self, metric, trial):
        P = sample_box(Box((-3.0, -3.0, -3.0), (3.0, 3.0, 3.0)), 1.0, trial_rng(43, trial))
        pos = P.positions()
        row = int(np.argmin(norm_values(pos, metric)))
        assert P.ids[row] in neighbor_count_3d(P, metric, probes=128).neighbours
        # re-centre at the nearest seed; the old origin becomes a seed
        origin_id = int(P.ids.max()) + 1
        moved = np.vstack([np.delete(pos, row, axis=0), np.zeros((1, 3))]) - pos[row]
        recentred = SeedArray(np.append(np.delete(P.ids, row), origin_id), moved[:, :2], moved[:, 2],
                              np.zeros(len(moved)))
        assert origin_id in neighbor_count_3d(recentred, metric, probes=128).neighbours


class TestPlanarCount:
    def test_hexagon(self):
        angles = np.arange(6) * math.pi / 3.0
        sample = planar_neighbor_count(np.column_stack([np.cos(angles), np.sin(angles)]))
        assert sample.k == 6 and not sample.unbounded and sample.mode == PLANAR

    def test_origin_on_hull(self):
        sample = planar_neighbor_count(np.array([[1.0, 0.0], [2.0, 1.0], [2.0, -1.0]]))
        assert sample.unbounded

    def test_too_few_points(self):
        sample = planar_neighbor_count(np.array([[1.0, 0.0], [0.0, 1.0]]), ids=np.array([4, 9]))
        assert sample.k == 2 and sample.unbounded and sample.neighbours == (4, 9)


class TestTrials:
    def test_local_radius(self):
        assert local_radius(27, A=2.0) == pytest.approx(12.0)

    def test_reproducible(self):
        a = face_trial(3, metric="jm", k_max=8, probes=64, mode=THREE_D, master_seed=5)
        b = face_trial(3, metric="jm", k_max=8, probes=64, mode=THREE_D, master_seed=5)
        assert a == b

    def test_planar_trial(self):
        sample = face_trial(0, metric="euclid3", k_max=25, probes=64, mode=PLANAR, master_seed=1)
        assert sample.mode == PLANAR and sample.k >= 3 and not sample.unbounded


class TestTail:
    def test_survival_from_samples(self):
        tail = face_tail_estimate("euclid3", 3, 5, 0, mode=PLANAR, samples=counts_as_samples([3, 4, 4, 5, 6]))
        assert tail.survival == pytest.approx([1.0, 0.8, 0.4])
        assert tail.histogram == {3: 1, 4: 2, 5: 1, 6: 1}
        assert tail.mean_k == pytest.approx(4.4)
        assert tail.log_differences == pytest.approx([math.log(0.8), math.log(0.5)])
        assert [r["k"] for r in tail.rows()] == [3, 4, 5]

    def test_zero_survival_drops_differences(self):
        tail = face_tail_estimate("euclid3", 5, 8, 0, mode=PLANAR, samples=counts_as_samples([5, 6, 6]))
        assert tail.survival[-2:] == [0.0, 0.0]
        assert len(tail.log_differences) == 1

    def test_bad_range(self):
        with pytest.raises(DomainError):
            face_tail_estimate("jm", 9, 3, 10)

    def test_sampled_survival_nonincreasing(self):
        tail = face_tail_estimate("jm", 2, 12, 8, probes=64, master_seed=3)
        assert all(b <= a for a, b in zip(tail.survival, tail.survival[1:]))


class TestAsymptoticRatio:
    def test_values(self):
        assert hilhorst_ratio(6) == pytest.approx(0.4339, abs=1e-4)
        assert hilhorst_ratio(8) == pytest.approx(0.2580, abs=1e-4)

    def test_rows_and_drops(self):
        samples = counts_as_samples([5] * 200 + [6] * 150 + [7] * 50)
        table = hilhorst_ratio_check([5, 6], 0, samples=samples)
        assert [row.k for row in table.rows] == [5]
        assert table.rows[0].ratio == pytest.approx(0.75)
        assert table.rows[0].relative_deviation == pytest.approx(abs(0.75 - hilhorst_ratio(5)) / hilhorst_ratio(5))
        assert table.dropped == [6] and table.trials == 400


@pytest.mark.slow
class TestPlanarStatistics:
    def test_mean_is_six(self):
        samples = face_counts(4000, "euclid3", 25, 64, PLANAR, master_seed=8)
        ks = np.array([s.k for s in samples])
        assert abs(ks.mean() - 6.0) < 4.0 * ks.std() / math.sqrt(len(ks))

    def test_ratio_deviation_shrinks(self):
        table = hilhorst_ratio_check([6, 7, 8], 100000, master_seed=9)
        assert len(table.rows) >= 2
        assert table.rows[-1].relative_deviation < table.rows[0].relative_deviation
