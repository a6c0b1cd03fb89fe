"""Synthetic manifold samplers and per-shape preprocessing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

KINDS = ("circle_uniform", "circle_nonuniform", "sphere", "torus", "box_surface")

# angular density of circle_nonuniform: p(theta) = (1 + A cos theta) / (2 pi)
NONUNIFORM_AMPLITUDE = 0.5


@dataclass(frozen=True)
class SynthManifold:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown manifold kind {self.kind!r}; choose from {KINDS}")
        if self.kind == "torus":
            R, r = self.params.get("R", 1.0), self.params.get("r", 0.3)
            if not 0 < r < R:
                raise InvalidArgument("torus needs 0 < r < R")
        if self.kind == "box_surface":
            if min(self.params.get(k, 1.0) for k in "abc") <= 0:
                raise InvalidArgument("box side lengths must be positive")

    @property
    def dim(self) -> int:
        return 2 if self.kind.startswith("circle") else 3

    @property
    def max_density_slope(self) -> float:
        """max |d P_S / d arc-length| over the manifold (0 for uniform kinds)."""
        if self.kind == "circle_nonuniform":
            return NONUNIFORM_AMPLITUDE / (2.0 * math.pi)
        return 0.0

    def distance(self, points) -> np.ndarray:
        """Unsigned distance of each point to the manifold (box: to its surface)."""
        x = np.asarray(points, dtype=np.float64)
        if self.kind in ("circle_uniform", "circle_nonuniform", "sphere"):
            return np.abs(np.linalg.norm(x, axis=1) - 1.0)
        if self.kind == "torus":
            R, r = self.params.get("R", 1.0), self.params.get("r", 0.3)
            rho = np.hypot(x[:, 0], x[:, 1])
            return np.abs(np.hypot(rho - R, x[:, 2]) - r)
        half = np.array([self.params.get(k, 1.0) for k in "abc"]) / 2.0
        q = np.abs(x) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return np.abs(outside + inside)


def _circle_angles_nonuniform(rng, n):
    out = np.empty(0)
    while out.size < n:
        m = max(2 * (n - out.size), 16)
        th = rng.uniform(0.0, 2.0 * math.pi, m)
        accept = rng.uniform(0.0, 1.0 + NONUNIFORM_AMPLITUDE, m) < 1.0 + NONUNIFORM_AMPLITUDE * np.cos(th)
        out = np.concatenate([out, th[accept]])
    return out[:n]


def _torus(rng, n, R, r):
    th_all, ph_all = np.empty(0), np.empty(0)
    while th_all.size < n:
        m = max(2 * (n - th_all.size), 16)
        th = rng.uniform(0.0, 2.0 * math.pi, m)
        ph = rng.uniform(0.0, 2.0 * math.pi, m)
        # area element is proportional to R + r cos(theta)
        keep = rng.uniform(0.0, R + r, m) < R + r * np.cos(th)
        th_all = np.concatenate([th_all, th[keep]])
        ph_all = np.concatenate([ph_all, ph[keep]])
    th, ph = th_all[:n], ph_all[:n]
    rho = R + r * np.cos(th)
    return np.stack([rho * np.cos(ph), rho * np.sin(ph), r * np.sin(th)], axis=1)


def _box(rng, n, a, b, c):
    half = np.array([a, b, c]) / 2.0
    # faces normal to axis k have area prod(other sides)
    areas = np.array([b * c, a * c, a * b])
    probs = np.repeat(areas, 2) / (2.0 * areas.sum())
    face = rng.choice(6, size=n, p=probs)
    pts = rng.uniform(-1.0, 1.0, (n, 3)) * half
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    return pts


def sample_manifold(m: SynthManifold, n: int, seed=None) -> np.ndarray:
    """Exact samples from the manifold's density."""
    if n < 1:
        raise InvalidArgument("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    if m.kind == "circle_uniform":
        th = rng.uniform(0.0, 2.0 * math.pi, n)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    if m.kind == "circle_nonuniform":
        th = _circle_angles_nonuniform(rng, n)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    if m.kind == "sphere":
        g = rng.standard_normal((n, 3))
        return g / np.linalg.norm(g, axis=1, keepdims=True)
    if m.kind == "torus":
        return _torus(rng, n, m.params.get("R", 1.0), m.params.get("r", 0.3))
    return _box(rng, n, *(m.params.get(k, 1.0) for k in "abc"))


@dataclass(frozen=True)
class NormalizeTransform:
    """x_normalized = (x - shift) / scale."""
    shift: np.ndarray
    scale: float

    def apply(self, cloud):
        return (np.asarray(cloud, dtype=np.float64) - self.shift) / self.scale

    def invert(self, cloud):
        return np.asarray(cloud, dtype=np.float64) * self.scale + self.shift


def normalize_cloud(cloud) -> tuple[np.ndarray, NormalizeTransform]:
    """Zero mean and unit overall coordinate standard deviation."""
    x = np.asarray(cloud, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidArgument("normalize_cloud needs at least 2 points")
    shift = x.mean(axis=0)
    scale = float(np.std(x - shift))
    if not scale > 0:
        raise InvalidArgument("cloud has zero variance")
    tf = NormalizeTransform(shift, scale)
    return tf.apply(x), tf


def subsample(cloud, n: int, seed=None) -> np.ndarray:
    """Uniform subset of ``n`` points without replacement."""
    x = np.asarray(cloud)
    if n > x.shape[0] or n < 0:
        raise InvalidArgument(f"cannot draw {n} points from a cloud of {x.shape[0]}")
    rng = np.random.default_rng(seed)
    return x[rng.permutation(x.shape[0])[:n]]
