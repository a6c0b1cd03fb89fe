"""Maximum-likelihood training on noise-inflated data."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoder import EncoderModel
from .errors import InvalidArgument, NumericError
from .flow import FlowModel, update_running_stats
from .synth import SynthManifold

NOISE_WARN_FACTOR = 0.1


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str = "fixed"
    sigma: float = 0.02
    sigma_start: float = 0.25
    sigma_end: float = 0.02
    epoch_start: int = 100
    epoch_end: int = 1200

    def __post_init__(self):
        if self.kind == "fixed":
            if self.sigma < 0:
                raise InvalidArgument("sigma must be >= 0")
        elif self.kind == "exp_anneal":
            if not self.sigma_start >= self.sigma_end > 0:
                raise InvalidArgument("anneal needs sigma_start >= sigma_end > 0")
            if not self.epoch_start < self.epoch_end:
                raise InvalidArgument("anneal needs epoch_start < epoch_end")
        else:
            raise InvalidArgument(f"unknown noise schedule kind {self.kind!r}")

    @classmethod
    def fixed(cls, sigma: float) -> "NoiseSchedule":
        return cls(kind="fixed", sigma=sigma)

    @classmethod
    def anneal(cls, sigma_start=0.25, sigma_end=0.02, epoch_start=100, epoch_end=1200):
        return cls(kind="exp_anneal", sigma_start=sigma_start, sigma_end=sigma_end,
                   epoch_start=epoch_start, epoch_end=epoch_end)


def noise_sigma_at(schedule: NoiseSchedule, epoch: int) -> float:
    """Noise std at ``epoch``; the anneal interpolates geometrically."""
    if schedule.kind == "fixed":
        return float(schedule.sigma)
    if epoch <= schedule.epoch_start:
        return float(schedule.sigma_start)
    if epoch >= schedule.epoch_end:
        return float(schedule.sigma_end)
    frac = (epoch - schedule.epoch_start) / (schedule.epoch_end - schedule.epoch_start)
    return float(schedule.sigma_start * (schedule.sigma_end / schedule.sigma_start) ** frac)


def add_gaussian_noise(cloud, sigma: float, seed=None) -> np.ndarray:
    if sigma < 0:
        raise InvalidArgument("sigma must be >= 0")
    x = np.asarray(cloud, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return x + sigma * rng.standard_normal(x.shape)


def validate_noise_scale(sigma: float, manifold: SynthManifold) -> str:
    """'warn' when sigma is not well below 1 / max tangential density slope."""
    slope = manifold.max_density_slope
    if slope <= 0:
        return "ok"
    return "warn" if sigma >= NOISE_WARN_FACTOR / slope else "ok"


@dataclass(frozen=True)
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        p = np.array(params, dtype=np.float64)
        return cls(p, np.zeros_like(p), np.zeros_like(p), 0, beta1, beta2, eps)


def adam_step(state: AdamState, grads, lr: float) -> AdamState:
    """One bias-corrected Adam update; returns a new state."""
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != state.params.shape:
        raise InvalidArgument(f"gradient shape {g.shape} != parameter shape {state.params.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    params = state.params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return AdamState(params, m, v, t, state.beta1, state.beta2, state.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 128
    lr_initial: float = 1e-3
    lr_milestones: tuple[tuple[int, float], ...] = ()
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    noise: NoiseSchedule = field(default_factory=NoiseSchedule)
    grad_clip: float = 100.0
    # conditional training only: points drawn from each shape per step
    points_per_shape: int = 2048

    def __post_init__(self):
        object.__setattr__(self, "lr_milestones",
                           tuple((int(e), float(f)) for e, f in self.lr_milestones))
        if self.epochs < 0:
            raise InvalidArgument("epochs must be >= 0")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if any(f <= 0 for _, f in self.lr_milestones):
            raise InvalidArgument("learning-rate multipliers must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_milestones"] = [list(m) for m in self.lr_milestones]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "noise" in d and isinstance(d["noise"], dict):
            d["noise"] = NoiseSchedule(**d["noise"])
        if "lr_milestones" in d:
            d["lr_milestones"] = tuple(tuple(m) for m in d["lr_milestones"])
        return cls(**d)


def lr_at(config: TrainConfig, epoch: int) -> float:
    lr = config.lr_initial
    for milestone, factor in config.lr_milestones:
        if milestone <= epoch:
            lr *= factor
    return lr


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)
    nll: list[float] = field(default_factory=list)
    sigma: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.epoch)

    def to_csv(self, path, include_time: bool = True) -> None:
        cols = ["epoch", "nll", "sigma", "lr"] + (["seconds"] if include_time else [])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for i in range(len(self)):
                row = [self.epoch[i], repr(self.nll[i]), repr(self.sigma[i]), repr(self.lr[i])]
                if include_time:
                    row.append(f"{self.seconds[i]:.3f}")
                w.writerow(row)


@dataclass
class TrainResult:
    model: FlowModel
    history: TrainHistory
    encoder: EncoderModel | None = None


def _clip(grad, max_norm):
    norm = float(np.linalg.norm(grad))
    if max_norm and norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def train(model: FlowModel, dataset, config: TrainConfig,
          encoder: EncoderModel | None = None, progress=None) -> TrainResult:
    """Fit ``model`` by minimizing the mean NLL of noise-inflated points.

    Unconditional flows pool all clouds in ``dataset`` and run minibatches
    over the shuffled points. Conditional flows batch whole shapes: each
    shape is encoded from its clean points and the flow scores its noisy
    points given that latent; flow and encoder are updated jointly.
    Noise is redrawn for every batch. ``progress(epoch, nll)`` is called
    once per epoch when given.
    """
    clouds = [np.asarray(c, dtype=np.float64) for c in dataset]
    if not clouds or any(c.ndim != 2 or len(c) == 0 for c in clouds):
        raise InvalidArgument("dataset must contain at least one non-empty cloud")
    if model.arch.conditional != (encoder is not None):
        raise InvalidArgument("an encoder is required exactly when the flow is conditional")
    if encoder is not None and encoder.arch.latent_dim != model.arch.cond_dim:
        raise InvalidArgument("encoder latent size must equal the flow's cond_dim")

    rng = np.random.default_rng(config.seed)
    n_flow = model.arch.num_params
    joint = model.params if encoder is None else np.concatenate([model.params, encoder.params])
    state = AdamState.init(joint, config.beta1, config.beta2, config.eps)
    buffers = model.buffers
    history = TrainHistory()

    def current(params, bufs):
        m = model.with_params(params[:n_flow], bufs)
        e = encoder.with_params(params[n_flow:]) if encoder is not None else None
        return m, e

    good = current(state.params, buffers)
    pooled = np.concatenate(clouds) if encoder is None else None

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        sigma = noise_sigma_at(config.noise, epoch)
        lr = lr_at(config, epoch)
        total, count = 0.0, 0
        if encoder is None:
            order = rng.permutation(len(pooled))
            batches = [order[i:i + config.batch_size] for i in range(0, len(order), config.batch_size)]
        else:
            order = rng.permutation(len(clouds))
            batches = [order[i:i + config.batch_size] for i in range(0, len(order), config.batch_size)]
        for idx in batches:
            flow_m, enc_m = good
            try:
                if encoder is None:
                    clean = pooled[idx]
                    noisy = clean + sigma * rng.standard_normal(clean.shape)
                    res = flow_m.nll_and_grads(noisy, train=True)
                    grad = res.grad_params
                    n_pts = len(noisy)
                else:
                    grad, res, n_pts = _conditional_step(flow_m, enc_m, [clouds[i] for i in idx],
                                                         sigma, config.points_per_shape, rng)
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch}: {exc}",
                                   last_good=good) from exc
            grad = _clip(grad, config.grad_clip)
            new_state = adam_step(state, grad, lr)
            if not np.all(np.isfinite(new_state.params)):
                raise NumericError(f"non-finite parameters at epoch {epoch}", last_good=good)
            state = new_state
            buffers = update_running_stats(flow_m, res.batch_stats)
            good = current(state.params, buffers)
            total += res.loss * n_pts
            count += n_pts
        mean_nll = total / count
        if not math.isfinite(mean_nll):
            raise NumericError(f"non-finite epoch loss at epoch {epoch}", last_good=good)
        history.epoch.append(epoch)
        history.nll.append(mean_nll)
        history.sigma.append(sigma)
        history.lr.append(lr)
        history.seconds.append(time.perf_counter() - t0)
        if progress is not None:
            progress(epoch, mean_nll)

    flow_m, enc_m = good
    return TrainResult(flow_m, history, enc_m)


def _conditional_step(flow_m, enc_m, shapes, sigma, points_per_shape, rng):
    cleans, zs, noisy = [], [], []
    for shape in shapes:
        k = min(points_per_shape, len(shape))
        clean = shape[rng.permutation(len(shape))[:k]]
        z = enc_m.encode(clean)
        cleans.append(clean)
        zs.append(np.broadcast_to(z, (k, len(z))))
        noisy.append(clean + sigma * rng.standard_normal(clean.shape))
    cond = np.concatenate(zs)
    res = flow_m.nll_and_grads(np.concatenate(noisy), cond, train=True)
    g_enc = np.zeros(enc_m.arch.num_params)
    start = 0
    for clean in cleans:
        stop = start + len(clean)
        g_enc += enc_m.param_grads(res.grad_cond[start:stop].sum(axis=0), clean)
        start = stop
    return np.concatenate([res.grad_params, g_enc]), res, start
