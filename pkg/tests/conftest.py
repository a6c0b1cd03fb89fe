import numpy as np
import pytest

from mflow.flow import FlowArchitecture, build_flow


def perturbed_flow(arch, seed=0, scale=0.3):
    """A flow whose couplings are far from the identity."""
    model = build_flow(arch, seed)
    rng = np.random.default_rng(seed + 100)
    return model.with_params(model.params + scale * rng.standard_normal(model.params.size))


def central_diff(f, x, idx, h=1e-5):
    xp = x.copy()
    xm = x.copy()
    xp[idx] += h
    xm[idx] -= h
    return (f(xp) - f(xm)) / (2 * h)


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


@pytest.fixture(scope="session")
def small_flow_2d():
    return perturbed_flow(FlowArchitecture(2, 4, 16, "relu"), seed=3)


@pytest.fixture(scope="session")
def small_flow_3d():
    return perturbed_flow(FlowArchitecture(3, 6, 16, "swish"), seed=4)
