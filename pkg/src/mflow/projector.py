"""Project samples onto the likelihood ridge by minimizing
-log p(x) + lam * ||x - x'||^2 with Adam, starting from x = x'."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgument
from .flow import FlowModel


class ProjectionWarning(RuntimeWarning):
    """Some points hit a non-finite loss; their best finite iterate was kept."""


@dataclass(frozen=True)
class LLMConfig:
    lam: float = 2.0
    steps: int = 25
    lr: float = 1e-3

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidArgument("lambda must be >= 0")
        if self.steps < 0:
            raise InvalidArgument("steps must be >= 0")
        if not self.lr > 0:
            raise InvalidArgument("lr must be > 0")

    def to_dict(self):
        return asdict(self)


def llm_loss(model: FlowModel, x, x_prime, lam: float, cond=None):
    """-log p(x) + lam * ||x - x'||^2 (scalar for one point, array for a batch)."""
    x = np.asarray(x, dtype=np.float64)
    xp = np.asarray(x_prime, dtype=np.float64)
    if x.shape != xp.shape:
        raise InvalidArgument("x and x_prime must have the same shape")
    pen = np.sum((x - xp) ** 2, axis=-1)
    return -model.log_prob(x, cond) + lam * pen


def _project(model, xp, config, cond):
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    x = xp.copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    best_x = xp.copy()
    best_loss = np.full(len(x), np.inf)
    active = np.ones(len(x), dtype=bool)
    failed = np.zeros(len(x), dtype=bool)
    for k in range(config.steps + 1):
        lp, g = model.log_prob_and_grad(x, cond, check=False)
        diff = x - xp
        loss = -lp + config.lam * np.sum(diff * diff, axis=1)
        ok = np.isfinite(loss) & np.all(np.isfinite(g), axis=1)
        bad = active & ~ok
        failed |= bad
        active &= ok
        better = active & (loss < best_loss)
        best_loss[better] = loss[better]
        best_x[better] = x[better]
        if k == config.steps or not active.any():
            break
        grad = np.where(active[:, None], -g + 2.0 * config.lam * diff, 0.0)
        t = k + 1
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        step = config.lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)
        x = np.where(active[:, None], x - step, x)
    return best_x, failed


def llm_project_batch(model: FlowModel, cloud, config: LLMConfig = LLMConfig(), cond=None,
                      return_flags: bool = False):
    """Project every point independently; output order matches input order.

    Adam is coordinate-wise, so running it on the stacked batch is the same
    as a fresh optimizer per point. Each point returns its lowest-loss
    iterate, hence its loss never exceeds the loss at its start.
    """
    xp = np.asarray(cloud, dtype=np.float64)
    if xp.ndim != 2 or xp.shape[1] != model.arch.data_dim:
        raise InvalidArgument(f"cloud must be (n, {model.arch.data_dim})")
    if not np.all(np.isfinite(xp)):
        raise InvalidArgument("starting points must be finite")
    if config.steps == 0 or len(xp) == 0:
        out, failed = xp.copy(), np.zeros(len(xp), dtype=bool)
    else:
        out, failed = _project(model, xp, config, cond)
    if failed.any():
        warnings.warn(f"{int(failed.sum())} point(s) hit a non-finite loss during projection",
                      ProjectionWarning, stacklevel=2)
    return (out, failed) if return_flags else out


def llm_project(model: FlowModel, x_prime, config: LLMConfig = LLMConfig(), cond=None):
    xp = np.asarray(x_prime, dtype=np.float64)
    if xp.ndim != 1:
        raise InvalidArgument("x_prime must be a single point")
    return llm_project_batch(model, xp[None, :], config, cond)[0]
