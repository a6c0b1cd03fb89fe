import math

import numpy as np
import pytest
from scipy import stats

from mflow.errors import InvalidArgument
from mflow.synth import SynthManifold, normalize_cloud, sample_manifold, subsample


@pytest.mark.parametrize("kind,params", [("circle_uniform", {}), ("circle_nonuniform", {}),
                                         ("sphere", {}), ("torus", {"R": 1.0, "r": 0.3}),
                                         ("box_surface", {"a": 1.0, "b": 2.0, "c": 0.5})])
def test_samples_lie_on_manifold(kind, params):
    m = SynthManifold(kind, params)
    x = sample_manifold(m, 5000, 0)
    assert x.shape == (5000, m.dim)
    assert np.max(m.distance(x)) < 1e-12


def test_torus_tube_distance():
    x = sample_manifold(SynthManifold("torus", {"R": 1.0, "r": 0.3}), 2000, 1)
    rho = np.hypot(x[:, 0], x[:, 1])
    assert np.max(np.abs(np.hypot(rho - 1.0, x[:, 2]) - 0.3)) < 1e-12


def test_torus_area_weighting():
    # area element (R + r cos v): outer half carries (pi R + 2 r) / (2 pi R) of the area
    x = sample_manifold(SynthManifold("torus", {"R": 1.0, "r": 0.3}), 200_000, 2)
    outer = np.mean(np.hypot(x[:, 0], x[:, 1]) > 1.0)
    assert outer == pytest.approx((math.pi + 0.6) / (2 * math.pi), abs=0.005)


def test_box_faces_by_area():
    m = SynthManifold("box_surface", {"a": 1.0, "b": 2.0, "c": 0.5})
    x = sample_manifold(m, 100_000, 3)
    on_z = np.mean(np.isclose(np.abs(x[:, 2]), 0.25, atol=1e-12))
    total = 2 * (1 * 2 + 1 * 0.5 + 2 * 0.5)
    assert on_z == pytest.approx(2 * 2 / total, abs=0.01)


def test_nonuniform_first_moment():
    x = sample_manifold(SynthManifold("circle_nonuniform"), 1_000_000, 4)
    assert np.mean(x[:, 0]) == pytest.approx(0.25, abs=0.003)


def test_nonuniform_histogram_chi_square():
    x = sample_manifold(SynthManifold("circle_nonuniform"), 100_000, 5)
    theta = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2 * math.pi)
    edges = np.linspace(0, 2 * math.pi, 65)
    counts, _ = np.histogram(theta, edges)
    # exact bin mass of (1 + 0.5 cos t) / (2 pi)
    mass = (np.diff(edges) + 0.5 * np.diff(np.sin(edges))) / (2 * math.pi)
    assert stats.chisquare(counts, 100_000 * mass).pvalue > 0.01


def test_sampling_is_deterministic_and_validated():
    m = SynthManifold("sphere")
    assert np.array_equal(sample_manifold(m, 10, 7), sample_manifold(m, 10, 7))
    with pytest.raises(InvalidArgument):
        sample_manifold(m, 0, 0)
    with pytest.raises(InvalidArgument):
        SynthManifold("klein_bottle")
    with pytest.raises(InvalidArgument):
        SynthManifold("torus", {"R": 0.2, "r": 0.3})


def test_normalize_cloud():
    x = np.random.default_rng(0).normal(3.0, 2.5, (500, 3))
    y, tr = normalize_cloud(x)
    assert np.all(np.abs(y.mean(axis=0)) < 1e-12)
    assert abs(y.std() - 1.0) < 1e-12
    assert np.max(np.abs(tr.invert(y) - x)) < 1e-12
    assert np.allclose(tr.apply(x), y, atol=1e-15)
    with pytest.raises(InvalidArgument):
        normalize_cloud(np.ones((5, 3)))


def test_subsample():
    x = np.arange(30, dtype=float).reshape(10, 3)
    full = subsample(x, 10, 1)
    assert sorted(map(tuple, full)) == sorted(map(tuple, x))
    assert np.array_equal(subsample(x, 4, 2), subsample(x, 4, 2))
    with pytest.raises(InvalidArgument):
        subsample(x, 11, 0)
