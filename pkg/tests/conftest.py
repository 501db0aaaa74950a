"""Shared helpers for building small hand-made processes."""
from typing import Optional, Sequence

import numpy as np
import pytest

from tessera.geometry import MetricKind
from tessera.process import ColouredProcess, SeedArray
from tessera.tessellation import Tessellation


def seeds_from(points: Sequence[Sequence[float]], u: Optional[Sequence[float]] = None,
               ids: Optional[Sequence[int]] = None) -> SeedArray:
    """SeedArray from (w1, w2, t) triples; every seed black at p >= 0 unless u says otherwise."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    return SeedArray(
        np.arange(n) if ids is None else np.asarray(ids),
        pts[:, :2],
        pts[:, 2],
        np.zeros(n) if u is None else np.asarray(u, dtype=float),
    )


def tessellation_of(points, u=None, p: float = 0.5, metric: MetricKind = MetricKind.EUCLIDEAN3, domain=None,
                    ids=None) -> Tessellation:
    return Tessellation(ColouredProcess(seeds_from(points, u, ids), p), metric, domain)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
