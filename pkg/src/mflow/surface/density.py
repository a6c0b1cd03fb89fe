"""Differentiable densities over 3-d points: flows or closed-form oracles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..flow import FlowModel


@dataclass(frozen=True)
class DensityField:
    """Vectorized ``log_density(points) -> (n,)`` and ``grad_log_density(points) -> (n, 3)``."""
    log_density: Callable[[np.ndarray], np.ndarray]
    grad_log_density: Callable[[np.ndarray], np.ndarray]
    name: str = "field"


def flow_density(model: FlowModel, cond=None) -> DensityField:
    def logp(x):
        return np.atleast_1d(model.log_prob(np.atleast_2d(x), cond))

    def grad(x):
        return np.atleast_2d(model.grad_x_log_prob(np.atleast_2d(x), cond))

    return DensityField(logp, grad, "flow")


def shell_density(radius: float = 1.0, sigma: float = 0.05) -> DensityField:
    """Unnormalized log p(x) = -(|x| - radius)^2 / (2 sigma^2).

    Its gradient is exactly radial and vanishes on the shell itself.
    """
    def logp(x):
        r = np.linalg.norm(np.atleast_2d(x), axis=1)
        return -((r - radius) ** 2) / (2.0 * sigma ** 2)

    def grad(x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        r = np.linalg.norm(x, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            coef = np.where(r > 0, -(r - radius) / (sigma ** 2 * r), 0.0)
        return coef[:, None] * x

    return DensityField(logp, grad, f"shell(r={radius}, sigma={sigma})")


def gaussian_density(dim: int = 3) -> DensityField:
    """Standard normal: grad log p = -x."""
    const = -0.5 * dim * np.log(2.0 * np.pi)

    def logp(x):
        x = np.atleast_2d(x)
        return const - 0.5 * np.sum(x * x, axis=1)

    def grad(x):
        return -np.atleast_2d(np.asarray(x, dtype=np.float64))

    return DensityField(logp, grad, "gaussian")
