import math
import warnings

import numpy as np
import pytest

from mflow.errors import InvalidArgument
from mflow.flow import FlowArchitecture, build_flow
from mflow.projector import LLMConfig, ProjectionWarning, llm_loss, llm_project, llm_project_batch

IDENTITY = build_flow(FlowArchitecture(2, 2, 8), 0)
LOG_2PI = math.log(2 * math.pi)


def test_defaults():
    c = LLMConfig()
    assert (c.lam, c.steps, c.lr) == (2.0, 25, 1e-3)
    with pytest.raises(InvalidArgument):
        LLMConfig(lam=-1)
    with pytest.raises(InvalidArgument):
        LLMConfig(lr=0)


def test_loss_values():
    x = np.array([1.0, 0.0])
    assert llm_loss(IDENTITY, x, np.zeros(2), 2.0) == pytest.approx(4.3379, abs=1e-4)
    assert llm_loss(IDENTITY, x, x, 2.0) == pytest.approx(-IDENTITY.log_prob(x))
    assert llm_loss(IDENTITY, x, np.zeros(2), 0.0) == pytest.approx(LOG_2PI + 0.5)


def test_steps_zero_returns_input(small_flow_2d):
    x = np.random.default_rng(0).standard_normal((10, 2))
    assert np.array_equal(llm_project_batch(small_flow_2d, x, LLMConfig(steps=0)), x)


def test_closed_form_minimizer():
    out = llm_project(IDENTITY, np.array([1.0, 0.0]), LLMConfig(2.0, 2000, 1e-3))
    assert np.allclose(out, [0.8, 0.0], atol=1e-3)


def test_pure_ascent_reaches_mode():
    out = llm_project(IDENTITY, np.array([0.3, -0.2]), LLMConfig(0.0, 2000, 1e-3))
    assert np.linalg.norm(out) < 1e-3


def test_lambda_monotone_on_closed_form():
    xp = np.array([0.7, 0.4])
    dist = [np.linalg.norm(llm_project(IDENTITY, xp, LLMConfig(lam, 400, 1e-2)) - xp)
            for lam in (0.5, 1.0, 2.0, 8.0)]
    assert all(b <= a + 1e-6 for a, b in zip(dist, dist[1:]))


def test_anchor_and_order(small_flow_2d):
    x = np.random.default_rng(1).standard_normal((32, 2)) * 1.5
    cfg = LLMConfig(2.0, 25, 1e-2)
    out = llm_project_batch(small_flow_2d, x, cfg)
    assert np.all(llm_loss(small_flow_2d, out, x, 2.0) <= llm_loss(small_flow_2d, x, x, 2.0))
    perm = np.random.default_rng(2).permutation(32)
    assert np.array_equal(llm_project_batch(small_flow_2d, x[perm], cfg), out[perm])
    # matrix products of different batch sizes may round differently
    assert np.allclose(llm_project(small_flow_2d, x[3], cfg), out[3], rtol=0, atol=1e-12)
    assert np.array_equal(llm_project_batch(small_flow_2d, x, cfg), out)


def test_non_finite_points_are_flagged():
    x = np.array([[0.5, 0.5], [1e200, 1e200]])
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        with np.errstate(over="ignore", invalid="ignore"):
            out, flags = llm_project_batch(IDENTITY, x, LLMConfig(2.0, 5, 1e-2), return_flags=True)
    assert flags.tolist() == [False, True]
    assert np.array_equal(out[1], x[1])
    assert any(issubclass(w.category, ProjectionWarning) for w in rec)
