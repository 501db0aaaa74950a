"""Unit tests for norms, torus distances and rectangles."""
import math

import numpy as np
import pytest

from tessera.exceptions import DomainError
from tessera.geometry import (
    MetricKind, Rect, TorusGeometry, Vec3, metric_from_name, norm_value, norm_values, point_seed_distances,
    torus_distance, torus_distances, unit_cube_diameter,
)

ALL_METRICS = list(MetricKind)


class TestNorms:
    """Test the three norms on R^2 x R."""

    def test_johnson_mehl(self):
        assert norm_value(Vec3(3.0, 4.0, -2.0), MetricKind.JOHNSON_MEHL) == pytest.approx(7.0)

    def test_euclidean(self):
        assert norm_value(Vec3(1.0, 2.0, 2.0), MetricKind.EUCLIDEAN3) == pytest.approx(3.0)

    def test_l1(self):
        assert norm_value(Vec3(1.0, -2.0, 3.0), MetricKind.L1_SUM) == pytest.approx(6.0)

    @pytest.mark.parametrize("metric", ALL_METRICS)
    def test_triangle_inequality_and_symmetry(self, metric, rng):
        a, b, c = rng.normal(size=(3, 1000, 3))
        ab, bc, ac = norm_values(a - b, metric), norm_values(b - c, metric), norm_values(a - c, metric)
        assert np.all(ac <= ab + bc + 1e-12)
        assert np.allclose(norm_values(b - a, metric), ab)

    @pytest.mark.parametrize("metric", ALL_METRICS)
    def test_homogeneous(self, metric, rng):
        v = rng.normal(size=(100, 3))
        assert np.allclose(norm_values(2.5 * v, metric), 2.5 * norm_values(v, metric))

    def test_johnson_mehl_sphere_segments(self, rng):
        jm = MetricKind.JOHNSON_MEHL
        a, b = rng.normal(size=(2, 5000, 3))
        a /= norm_values(a, jm)[:, None]
        b /= norm_values(b, jm)[:, None]
        cos = np.sum(a[:, :2] * b[:, :2], axis=1) / (np.hypot(a[:, 0], a[:, 1]) * np.hypot(b[:, 0], b[:, 1]))
        # a flat segment needs parallel planar parts and heights of one sign
        keep = (np.linalg.norm(a - b, axis=1) >= 0.1) & ((cos < math.cos(0.1)) | (a[:, 2] * b[:, 2] < 0))
        assert keep.sum() > 1000
        assert np.all(norm_values(0.5 * (a[keep] + b[keep]), jm) < 1.0)

    def test_johnson_mehl_generatrix_is_flat(self):
        mid = norm_value(Vec3(0.5, 0.0, 0.5), MetricKind.JOHNSON_MEHL)
        assert mid == pytest.approx(1.0)

    def test_unit_cube_diameter(self):
        assert unit_cube_diameter(MetricKind.JOHNSON_MEHL) == pytest.approx(math.sqrt(2.0) + 1.0)
        assert unit_cube_diameter(MetricKind.EUCLIDEAN3) == pytest.approx(math.sqrt(3.0))
        assert unit_cube_diameter(MetricKind.L1_SUM) == pytest.approx(3.0)

    def test_point_seed_distances_shape(self):
        x = np.array([[0.0, 0.0], [1.0, 0.0]])
        w = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 0.0]])
        t = np.array([1.0, 0.0, 0.0])
        d = point_seed_distances(x, w, t, MetricKind.JOHNSON_MEHL)
        assert d.shape == (2, 3)
        assert d[0].tolist() == pytest.approx([1.0, 5.0, 1.0])
        assert d[1, 2] == pytest.approx(0.0)


class TestMetricNames:
    def test_known_names(self):
        assert metric_from_name("jm") is MetricKind.JOHNSON_MEHL
        assert metric_from_name("euclid3") is MetricKind.EUCLIDEAN3
        assert metric_from_name("l1") is MetricKind.L1_SUM

    def test_unknown_name(self):
        with pytest.raises(DomainError):
            metric_from_name("chebyshev")

    def test_domain_error_is_value_error(self):
        with pytest.raises(ValueError):
            metric_from_name("nope")


class TestTorus:
    """Test distances on T(s) x [0, h]."""

    def test_wraps_across_edge(self):
        g = TorusGeometry(10.0, 10.0)
        d = torus_distance(Vec3(0.5, 5.0, 0.0), Vec3(9.5, 5.0, 0.0), g, MetricKind.EUCLIDEAN3)
        assert d == pytest.approx(1.0)

    def test_height_does_not_wrap(self):
        g = TorusGeometry(10.0, 10.0)
        d = torus_distance(Vec3(1.0, 1.0, 0.5), Vec3(1.0, 1.0, 9.5), g, MetricKind.L1_SUM)
        assert d == pytest.approx(9.0)

    def test_outside_domain(self):
        g = TorusGeometry(10.0, 10.0)
        with pytest.raises(DomainError):
            torus_distance(Vec3(10.5, 0.0, 0.0), Vec3(1.0, 1.0, 1.0), g, MetricKind.JOHNSON_MEHL)

    def test_bad_geometry(self):
        with pytest.raises(DomainError):
            TorusGeometry(0.0, 1.0)

    @pytest.mark.parametrize("metric", ALL_METRICS)
    def test_vectorized_matches_scalar(self, metric, rng):
        g = TorusGeometry(7.0, 3.0)
        a = rng.random((50, 3)) * [7.0, 7.0, 3.0]
        b = rng.random((50, 3)) * [7.0, 7.0, 3.0]
        vec = torus_distances(a, b, 7.0, metric)
        scalar = [torus_distance(Vec3(*p), Vec3(*q), g, metric) for p, q in zip(a, b)]
        assert np.allclose(vec, scalar)

    def test_injectivity_radius(self):
        assert TorusGeometry(8.0, 1.0).injectivity_radius == 4.0


class TestRect:
    def test_degenerate(self):
        with pytest.raises(DomainError):
            Rect(1.0, 1.0, 0.0, 1.0)

    def test_measures(self):
        r = Rect(0.0, 6.0, 0.0, 3.0)
        assert r.width == 6.0 and r.height == 3.0
        assert r.aspect == 2.0 and r.scale == 3.0 and r.area == 18.0

    def test_expanded_and_contains(self):
        r = Rect(0.0, 2.0, 0.0, 2.0).expanded(1.0)
        assert (r.a, r.b, r.c, r.d) == (-1.0, 3.0, -1.0, 3.0)
        assert r.contains(np.array([[-0.5, 2.5], [3.5, 0.0]])).tolist() == [True, False]

    def test_distance_to_boundary(self):
        r = Rect(0.0, 4.0, 0.0, 2.0)
        assert r.distance_to_boundary(np.array([[1.0, 1.0], [3.5, 0.5]])).tolist() == pytest.approx([1.0, 0.5])
