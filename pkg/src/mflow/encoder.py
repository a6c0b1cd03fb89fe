"""Permutation-invariant point-cloud encoder (shared per-point MLP + max-pool).

Per-point widths 128, 256, 512 with relu after the first two layers, a
max over points, then a single linear map to the latent code. Backprop
through the max routes each channel's gradient to the point holding the
maximum; ties go to the lowest point index (numpy's argmax rule).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class EncoderArchitecture:
    in_dim: int = 3
    widths: tuple[int, ...] = (128, 256, 512)
    latent_dim: int = 256

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.in_dim < 1 or self.latent_dim < 1 or not self.widths or min(self.widths) < 1:
            raise InvalidArgument("encoder dimensions must be positive")

    def shapes(self):
        dims = (self.in_dim,) + self.widths
        out = []
        for i in range(len(self.widths)):
            out += [(f"w{i}", (dims[i], dims[i + 1])), (f"b{i}", (dims[i + 1],))]
        out += [("w_out", (self.widths[-1], self.latent_dim)), ("b_out", (self.latent_dim,))]
        return out

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderArchitecture":
        return cls(in_dim=d["in_dim"], widths=tuple(d["widths"]), latent_dim=d["latent_dim"])


def _unpack(arch, params):
    out, off = {}, 0
    for name, shape in arch.shapes():
        size = int(np.prod(shape))
        out[name] = params[off:off + size].reshape(shape)
        off += size
    return out


class EncoderModel:
    """Encoder weights in canonical order: per layer weight then bias, output layer last."""

    def __init__(self, arch: EncoderArchitecture, params, seed=None):
        p = np.array(params, dtype=np.float64)
        if p.shape != (arch.num_params,):
            raise InvalidArgument(f"expected {arch.num_params} encoder parameters, got {p.shape}")
        p.setflags(write=False)
        self.arch = arch
        self.params = p
        self.seed = seed

    def with_params(self, params) -> "EncoderModel":
        return EncoderModel(self.arch, params, self.seed)

    def _forward(self, cloud):
        pts = np.asarray(cloud, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.arch.in_dim:
            raise InvalidArgument(f"cloud must be (n, {self.arch.in_dim}), got {pts.shape}")
        if pts.shape[0] == 0:
            raise InvalidArgument("cannot encode an empty cloud")
        p = _unpack(self.arch, self.params)
        nl = len(self.arch.widths)
        acts = [pts]
        pre = []
        h = pts
        for i in range(nl):
            # einsum keeps each row's rounding independent of its batch
            # position, which makes encode exactly permutation invariant
            a = np.einsum("ni,ij->nj", h, p[f"w{i}"]) + p[f"b{i}"]
            pre.append(a)
            h = np.maximum(a, 0.0) if i < nl - 1 else a
            acts.append(h)
        idx = np.argmax(h, axis=0)
        pooled = h[idx, np.arange(h.shape[1])]
        z = pooled @ p["w_out"] + p["b_out"]
        return z, (acts, pre, idx, pooled)

    def encode(self, cloud) -> np.ndarray:
        return self._forward(cloud)[0]

    def param_grads(self, grad_z, cloud) -> np.ndarray:
        """Gradient of a downstream loss w.r.t. encoder params given dL/dz."""
        gz = np.asarray(grad_z, dtype=np.float64)
        if gz.shape != (self.arch.latent_dim,):
            raise InvalidArgument(f"grad_z must have shape ({self.arch.latent_dim},), got {gz.shape}")
        z, (acts, pre, idx, pooled) = self._forward(cloud)
        p = _unpack(self.arch, self.params)
        grad = np.zeros(self.arch.num_params)
        g = _unpack(self.arch, grad)
        g["w_out"][...] = np.outer(pooled, gz)
        g["b_out"][...] = gz
        g_pooled = p["w_out"] @ gz
        nl = len(self.arch.widths)
        gh = np.zeros_like(acts[-1])
        gh[idx, np.arange(gh.shape[1])] = g_pooled
        for i in reversed(range(nl)):
            ga = gh * (pre[i] > 0) if i < nl - 1 else gh
            g[f"w{i}"][...] = np.einsum("ni,nj->ij", acts[i], ga)
            g[f"b{i}"][...] = ga.sum(axis=0)
            if i:
                gh = np.einsum("nj,ij->ni", ga, p[f"w{i}"])
        return grad


def build_encoder(arch: EncoderArchitecture | None = None, seed: int = 0) -> EncoderModel:
    arch = arch or EncoderArchitecture()
    rng = np.random.default_rng(seed)
    params = np.zeros(arch.num_params)
    views = _unpack(arch, params)
    for name, shape in arch.shapes():
        fan_in = shape[0] if name.startswith("w") else views["w" + name[1:]].shape[0]
        bound = 1.0 / math.sqrt(fan_in)
        views[name][...] = rng.uniform(-bound, bound, shape)
    return EncoderModel(arch, params, seed)


def encode(enc: EncoderModel, cloud) -> np.ndarray:
    return enc.encode(cloud)


def encoder_param_grads(enc: EncoderModel, grad_z, cloud) -> np.ndarray:
    return enc.param_grads(grad_z, cloud)
