"""Affine-coupling normalizing flow evaluated in float64 numpy.

Direction convention: ``forward`` maps base samples ``y`` to data ``x`` and
``inverse`` maps data back to the base space. Densities are evaluated on the
inverse path, so every gradient (w.r.t. inputs, parameters or the latent
code) is a reverse pass over the cached inverse computation.

Each coupling layer keeps a subset of coordinates and transforms the rest::

    x_t = y_t * exp(s(y_k)) + t(y_k),    s = scale * tanh(raw_s)

with a conditioner ``Linear -> [BatchNorm] -> [FiLM] -> act -> Linear``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericError

ACTIVATIONS = ("relu", "swish")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FlowArchitecture:
    data_dim: int = 2
    num_layers: int = 5
    hidden_dim: int = 128
    activation: str = "relu"
    cond_dim: int = 0
    use_batchnorm: bool = False

    def __post_init__(self):
        if self.data_dim not in (2, 3):
            raise InvalidArgument(f"data_dim must be 2 or 3, got {self.data_dim}")
        if self.num_layers < 1:
            raise InvalidArgument("num_layers must be >= 1")
        if self.hidden_dim < 1:
            raise InvalidArgument("hidden_dim must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"activation must be one of {ACTIVATIONS}")
        if self.cond_dim < 0:
            raise InvalidArgument("cond_dim must be >= 0")

    @property
    def conditional(self) -> bool:
        return self.cond_dim > 0

    def transformed_dims(self, layer: int) -> tuple[int, ...]:
        """Coordinates rewritten by coupling layer ``layer``.

        2-d data alternates {1}, {0}, {1}, ... For 3-d data a mask is
        followed by its complement and the kept coordinate rotates every
        pair: {1,2}, {0}, {0,2}, {1}, {0,1}, {2}, ...
        """
        if self.data_dim == 2:
            return ((layer + 1) % 2,)
        pivot = (layer // 2) % 3
        if layer % 2 == 0:
            return tuple(j for j in range(3) if j != pivot)
        return (pivot,)

    def kept_dims(self, layer: int) -> tuple[int, ...]:
        tr = self.transformed_dims(layer)
        return tuple(j for j in range(self.data_dim) if j not in tr)

    @property
    def num_params(self) -> int:
        return _layout(self)[1]

    @property
    def num_buffers(self) -> int:
        return 2 * self.hidden_dim * self.num_layers if self.use_batchnorm else 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FlowArchitecture":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@functools.lru_cache(maxsize=64)
def _layout(arch: FlowArchitecture):
    """Canonical parameter order, layer-major.

    Per layer: w1 (kept x hidden), w2 (hidden x 2*transformed), b1, b2,
    scale, then bn_gamma/bn_beta when batch norm is on, then the FiLM maps
    film_gamma/film_beta (cond x hidden) when conditional. Matrices are
    stored row-major.
    """
    layers = []
    offset = 0
    H, C = arch.hidden_dim, arch.cond_dim
    for i in range(arch.num_layers):
        dk = len(arch.kept_dims(i))
        dt = len(arch.transformed_dims(i))
        shapes = [("w1", (dk, H)), ("w2", (H, 2 * dt)), ("b1", (H,)),
                  ("b2", (2 * dt,)), ("scale", (dt,))]
        if arch.use_batchnorm:
            shapes += [("bn_gamma", (H,)), ("bn_beta", (H,))]
        if C:
            shapes += [("film_gamma", (C, H)), ("film_beta", (C, H))]
        entry = []
        for name, shape in shapes:
            size = int(np.prod(shape))
            entry.append((name, offset, shape))
            offset += size
        layers.append(tuple(entry))
    return tuple(layers), offset


def _unpack(arch: FlowArchitecture, params: np.ndarray) -> list[dict[str, np.ndarray]]:
    layers, _ = _layout(arch)
    out = []
    for entry in layers:
        out.append({name: params[off:off + int(np.prod(shape))].reshape(shape)
                    for name, off, shape in entry})
    return out


def _unpack_buffers(arch: FlowArchitecture, buffers: np.ndarray):
    if not arch.use_batchnorm:
        return [None] * arch.num_layers
    H = arch.hidden_dim
    b = buffers.reshape(arch.num_layers, 2, H)
    return [(b[i, 0], b[i, 1]) for i in range(arch.num_layers)]


def _act(name, h):
    if name == "relu":
        return np.maximum(h, 0.0)
    sig = 1.0 / (1.0 + np.exp(-h))
    return h * sig


def _act_grad(name, h):
    if name == "relu":
        return (h > 0).astype(h.dtype)
    sig = 1.0 / (1.0 + np.exp(-h))
    return sig * (1.0 + h * (1.0 - sig))


def _conditioner(arch, p, bn, xk, z, train):
    """Scale and shift for one layer; returns (s, t, cache)."""
    a1 = xk @ p["w1"] + p["b1"]
    cache = {"xk": xk, "z": z}
    if arch.use_batchnorm:
        if train:
            mu, var = a1.mean(axis=0), a1.var(axis=0)
        else:
            mu, var = bn
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (a1 - mu) * inv_std
        a1n = xhat * p["bn_gamma"] + p["bn_beta"]
        cache.update(xhat=xhat, inv_std=inv_std, batch_stats=(mu, var))
    else:
        a1n = a1
    if z is not None:
        gam = 1.0 + z @ p["film_gamma"]
        h = gam * a1n + z @ p["film_beta"]
        cache.update(a1n=a1n, gam=gam)
    else:
        h = a1n
    act = _act(arch.activation, h)
    out = act @ p["w2"] + p["b2"]
    dt = p["scale"].shape[0]
    th = np.tanh(out[:, :dt])
    s = p["scale"] * th
    t = out[:, dt:]
    cache.update(h=h, act=act, th=th)
    return s, t, cache


def _conditioner_backward(arch, p, cache, g_s, g_t, train):
    """Reverse pass of ``_conditioner``; returns (param grads, g_xk, g_z)."""
    g = {}
    th = cache["th"]
    g["scale"] = np.sum(g_s * th, axis=0)
    g_raw = g_s * p["scale"] * (1.0 - th * th)
    g_out = np.concatenate([g_raw, g_t], axis=1)
    g["w2"] = cache["act"].T @ g_out
    g["b2"] = g_out.sum(axis=0)
    g_h = (g_out @ p["w2"].T) * _act_grad(arch.activation, cache["h"])
    z = cache["z"]
    g_z = None
    if z is not None:
        a1n = cache["a1n"]
        g["film_gamma"] = z.T @ (g_h * a1n)
        g["film_beta"] = z.T @ g_h
        g_z = (g_h * a1n) @ p["film_gamma"].T + g_h @ p["film_beta"].T
        g_a1n = g_h * cache["gam"]
    else:
        g_a1n = g_h
    if arch.use_batchnorm:
        xhat, inv_std = cache["xhat"], cache["inv_std"]
        g["bn_gamma"] = np.sum(g_a1n * xhat, axis=0)
        g["bn_beta"] = g_a1n.sum(axis=0)
        g_xhat = g_a1n * p["bn_gamma"]
        if train:
            n = xhat.shape[0]
            g_a1 = (inv_std / n) * (n * g_xhat - g_xhat.sum(axis=0)
                                    - xhat * np.sum(g_xhat * xhat, axis=0))
        else:
            g_a1 = g_xhat * inv_std
    else:
        g_a1 = g_a1n
    g["w1"] = cache["xk"].T @ g_a1
    g["b1"] = g_a1.sum(axis=0)
    g_xk = g_a1 @ p["w1"].T
    return g, g_xk, g_z


def _as_batch(x, dim, what="point"):
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise InvalidArgument(f"{what} must have trailing dimension {dim}, got shape {np.shape(x)}")
    return arr, single


def _prepare_cond(arch, cond, n):
    if not arch.conditional:
        if cond is not None:
            raise InvalidArgument("unconditional flow does not accept a latent code")
        return None
    if cond is None:
        raise InvalidArgument("conditional flow requires a latent code")
    z = np.asarray(cond, dtype=np.float64)
    if z.ndim == 1:
        z = np.broadcast_to(z, (n, z.shape[0]))
    if z.ndim != 2 or z.shape[1] != arch.cond_dim or z.shape[0] != n:
        raise InvalidArgument(
            f"latent code must have length {arch.cond_dim}, got shape {np.shape(cond)}")
    return z


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value in {what}")


@dataclass(frozen=True)
class NLLResult:
    """Mean negative log-likelihood of a batch and its gradients."""
    loss: float
    grad_params: np.ndarray
    grad_x: np.ndarray
    grad_cond: np.ndarray | None
    batch_stats: list | None = None


@dataclass(frozen=True, eq=False)
class FlowModel:
    """Architecture plus flat parameter vector (and batch-norm running stats).

    Instances are treated as immutable: evaluation never writes to
    ``params`` or ``buffers``, training returns new models.
    """
    arch: FlowArchitecture
    params: np.ndarray
    buffers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    seed: int | None = None

    def __post_init__(self):
        p = np.ascontiguousarray(self.params, dtype=np.float64)
        if p.shape != (self.arch.num_params,):
            raise InvalidArgument(
                f"expected {self.arch.num_params} parameters, got {p.shape}")
        b = np.ascontiguousarray(self.buffers, dtype=np.float64)
        if b.shape != (self.arch.num_buffers,):
            raise InvalidArgument(
                f"expected {self.arch.num_buffers} buffer values, got {b.shape}")
        p = p.copy()
        b = b.copy()
        p.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "buffers", b)

    def with_params(self, params, buffers=None) -> "FlowModel":
        return FlowModel(self.arch, params,
                         self.buffers if buffers is None else buffers, self.seed)

    def layer_params(self) -> list[dict[str, np.ndarray]]:
        """Read-only per-layer views into ``params``."""
        return _unpack(self.arch, self.params)

    # -- passes ---------------------------------------------------------------

    def _inverse_pass(self, x, z, train=False, keep_cache=False):
        arch = self.arch
        layers = _unpack(arch, self.params)
        bns = _unpack_buffers(arch, self.buffers)
        logdet = np.zeros(x.shape[0])
        caches = []
        cur = x
        for i in reversed(range(arch.num_layers)):
            tr, kp = list(arch.transformed_dims(i)), list(arch.kept_dims(i))
            s, t, cc = _conditioner(arch, layers[i], bns[i], cur[:, kp], z, train)
            e = np.exp(-s)
            nxt = cur.copy()
            nxt[:, tr] = (cur[:, tr] - t) * e
            logdet -= s.sum(axis=1)
            if keep_cache:
                caches.append((i, e, nxt, cc))
            cur = nxt
        return cur, logdet, caches

    def _backward(self, y, caches, weights, train=False):
        """Gradient of sum_i weights_i * (-log p(x_i)).

        Walks the inverse-path caches from the base space back to the data.
        """
        arch = self.arch
        layers = _unpack(arch, self.params)
        grad = np.zeros(arch.num_params)
        gviews = _unpack(arch, grad)
        w = weights[:, None]
        gy = w * y
        g_z = None
        for i, e, y_out, cc in reversed(caches):
            tr, kp = list(arch.transformed_dims(i)), list(arch.kept_dims(i))
            gyt = gy[:, tr]
            g_s = -gyt * y_out[:, tr] + w
            g_t = -gyt * e
            gx = gy.copy()
            gx[:, tr] = gyt * e
            g, g_xk, gz_i = _conditioner_backward(arch, layers[i], cc, g_s, g_t, train)
            gx[:, kp] += g_xk
            for name, val in g.items():
                gviews[i][name][...] += val
            if gz_i is not None:
                g_z = gz_i if g_z is None else g_z + gz_i
            gy = gx
        return grad, gy, g_z

    # -- public API -------------------------------------------------------------

    def forward(self, y, cond=None):
        """Map base-space points to data space: returns (x, log|det dF/dy|)."""
        arch = self.arch
        yb, single = _as_batch(y, arch.data_dim)
        z = _prepare_cond(arch, cond, yb.shape[0])
        layers = _unpack(arch, self.params)
        bns = _unpack_buffers(arch, self.buffers)
        logdet = np.zeros(yb.shape[0])
        cur = yb
        for i in range(arch.num_layers):
            tr, kp = list(arch.transformed_dims(i)), list(arch.kept_dims(i))
            s, t, _ = _conditioner(arch, layers[i], bns[i], cur[:, kp], z, False)
            nxt = cur.copy()
            nxt[:, tr] = cur[:, tr] * np.exp(s) + t
            logdet += s.sum(axis=1)
            cur = nxt
        _check_finite(cur, "forward pass")
        _check_finite(logdet, "forward log-determinant")
        if single:
            return cur[0], float(logdet[0])
        return cur, logdet

    def inverse(self, x, cond=None):
        """Map data to base space: returns (y, log|det dF^{-1}/dx|)."""
        xb, single = _as_batch(x, self.arch.data_dim)
        z = _prepare_cond(self.arch, cond, xb.shape[0])
        y, logdet, _ = self._inverse_pass(xb, z)
        _check_finite(y, "inverse pass")
        _check_finite(logdet, "inverse log-determinant")
        if single:
            return y[0], float(logdet[0])
        return y, logdet

    def log_prob(self, x, cond=None):
        xb, single = _as_batch(x, self.arch.data_dim)
        z = _prepare_cond(self.arch, cond, xb.shape[0])
        y, logdet, _ = self._inverse_pass(xb, z)
        lp = _base_log_prob(y) + logdet
        _check_finite(lp, "log_prob")
        return float(lp[0]) if single else lp

    def sample(self, n: int, seed=None, cond=None) -> np.ndarray:
        """Draw ``n`` points; ``seed`` may be an int or a numpy Generator."""
        if n < 1:
            raise InvalidArgument("sample count must be >= 1")
        rng = np.random.default_rng(seed)
        y = rng.standard_normal((n, self.arch.data_dim))
        x, _ = self.forward(y, cond)
        return x

    def grad_x_log_prob(self, x, cond=None):
        return self.log_prob_and_grad(x, cond)[1]

    def log_prob_and_grad(self, x, cond=None, check=True):
        """log p(x) and its gradient w.r.t. x in one pass.

        With ``check=False`` non-finite results are returned as-is so batch
        callers can mask failed points instead of aborting.
        """
        xb, single = _as_batch(x, self.arch.data_dim)
        z = _prepare_cond(self.arch, cond, xb.shape[0])
        y, logdet, caches = self._inverse_pass(xb, z, keep_cache=True)
        lp = _base_log_prob(y) + logdet
        with np.errstate(invalid="ignore", over="ignore"):
            _, gx, _ = self._backward(y, caches, np.ones(xb.shape[0]))
        gx = -gx
        if check:
            _check_finite(lp, "log_prob")
            _check_finite(gx, "grad_x_log_prob")
        if single:
            return float(lp[0]), gx[0]
        return lp, gx

    def nll_and_grads(self, batch, cond=None, train=False) -> NLLResult:
        """Mean NLL of ``batch`` with gradients w.r.t. params, inputs and cond.

        ``train=True`` normalizes with batch statistics (batch norm only) and
        reports them in ``batch_stats``; otherwise running statistics are used.
        """
        xb, _ = _as_batch(batch, self.arch.data_dim, "batch")
        n = xb.shape[0]
        if n == 0:
            raise InvalidArgument("batch must be non-empty")
        z = _prepare_cond(self.arch, cond, n)
        y, logdet, caches = self._inverse_pass(xb, z, train=train, keep_cache=True)
        nll = -(_base_log_prob(y) + logdet)
        loss = float(np.mean(nll))
        if not math.isfinite(loss):
            raise NumericError("non-finite negative log-likelihood")
        grad, gx, gz = self._backward(y, caches, np.full(n, 1.0 / n), train=train)
        _check_finite(grad, "parameter gradient")
        stats = None
        if train and self.arch.use_batchnorm:
            stats = [cc["batch_stats"] for _, _, _, cc in sorted(caches, key=lambda c: c[0])]
        return NLLResult(loss, grad, gx, gz, stats)

    def param_grads(self, batch, cond=None) -> np.ndarray:
        """Gradient of the mean NLL over ``batch`` in canonical parameter order."""
        return self.nll_and_grads(batch, cond).grad_params


def _base_log_prob(y):
    return -0.5 * np.sum(y * y, axis=1) - 0.5 * y.shape[1] * _LOG_2PI


def build_flow(arch: FlowArchitecture, seed: int = 0) -> FlowModel:
    """Initialize a flow that is exactly the identity map.

    First conditioner layers get uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
    weights; the last layer and the FiLM maps start at zero so every
    coupling layer begins with s = t = 0.
    """
    if not isinstance(arch, FlowArchitecture):
        raise InvalidArgument("arch must be a FlowArchitecture")
    rng = np.random.default_rng(seed)
    params = np.zeros(arch.num_params)
    for i, p in enumerate(_unpack(arch, params)):
        fan_in = p["w1"].shape[0]
        bound = 1.0 / math.sqrt(fan_in)
        p["w1"][...] = rng.uniform(-bound, bound, p["w1"].shape)
        p["b1"][...] = rng.uniform(-bound, bound, p["b1"].shape)
        p["scale"][...] = 1.0
        if arch.use_batchnorm:
            p["bn_gamma"][...] = 1.0
    buffers = np.zeros(arch.num_buffers)
    if arch.use_batchnorm:
        buffers.reshape(arch.num_layers, 2, arch.hidden_dim)[:, 1, :] = 1.0
    return FlowModel(arch, params, buffers, seed)


def update_running_stats(model: FlowModel, batch_stats, momentum: float = BN_MOMENTUM) -> np.ndarray:
    """New buffer vector after one exponential-moving-average update."""
    if not model.arch.use_batchnorm or batch_stats is None:
        return model.buffers
    arch = model.arch
    buf = model.buffers.copy().reshape(arch.num_layers, 2, arch.hidden_dim)
    for i, (mu, var) in enumerate(batch_stats):
        buf[i, 0] = (1 - momentum) * buf[i, 0] + momentum * mu
        buf[i, 1] = (1 - momentum) * buf[i, 1] + momentum * var
    return buf.ravel()
