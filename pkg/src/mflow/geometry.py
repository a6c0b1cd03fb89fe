"""Oriented point sets, triangle meshes and scalar grids."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument


@dataclass
class OrientedPointSet:
    points: np.ndarray
    normals: np.ndarray
    loglik: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.normals = np.asarray(self.normals, dtype=np.float64)
        self.loglik = np.asarray(self.loglik, dtype=np.float64)
        n = self.points.shape[0]
        if self.normals.shape != self.points.shape or self.loglik.shape != (n,):
            raise InvalidArgument("points, normals and loglik must have matching lengths")
        if n and np.any(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0) > 1e-9):
            raise InvalidArgument("normals must be unit vectors")

    def __len__(self):
        return self.points.shape[0]

    def subset(self, idx) -> "OrientedPointSet":
        return OrientedPointSet(self.points[idx], self.normals[idx], self.loglik[idx], self.dropped)


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    vertex_loglik: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise InvalidArgument("face index out of range")
        if self.vertex_loglik is not None:
            self.vertex_loglik = np.asarray(self.vertex_loglik, dtype=np.float64)
            if self.vertex_loglik.shape != (len(self.vertices),):
                raise InvalidArgument("vertex_loglik must have one value per vertex")

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def edge_face_counts(self) -> np.ndarray:
        """Number of faces incident to each undirected edge."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_watertight(self) -> bool:
        return len(self.faces) > 0 and bool(np.all(self.edge_face_counts() == 2))

    def euler_characteristic(self) -> int:
        used = np.unique(self.faces)
        return int(len(used) - len(self.edge_face_counts()) + len(self.faces))


@dataclass
class ScalarField:
    """Values on a regular lattice; node (i, j, k) sits at origin + spacing * (i, j, k)."""
    values: np.ndarray
    origin: np.ndarray
    spacing: float
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.origin, dtype=np.float64)
        return lo, lo + self.spacing * (np.array(self.values.shape) - 1)

    def interpolate(self, points) -> np.ndarray:
        """Trilinear interpolation; points outside the box are clamped to it."""
        g = (np.asarray(points, dtype=np.float64) - self.origin) / self.spacing
        hi = np.array(self.values.shape) - 1
        g = np.clip(g, 0, hi)
        i0 = np.minimum(np.floor(g).astype(np.int64), hi - 1)
        f = g - i0
        out = np.zeros(len(g))
        for dx in (0, 1):
            wx = f[:, 0] if dx else 1 - f[:, 0]
            for dy in (0, 1):
                wy = f[:, 1] if dy else 1 - f[:, 1]
                for dz in (0, 1):
                    wz = f[:, 2] if dz else 1 - f[:, 2]
                    out += wx * wy * wz * self.values[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
        return out


def weld_and_clean(mesh: TriangleMesh, tol: float = 0.0) -> TriangleMesh:
    """Merge coincident vertices, drop degenerate faces and unreferenced vertices.

    Degenerate faces are those with a repeated vertex after welding or with
    zero area. Welding before dropping keeps edge incidence intact.
    """
    v = mesh.vertices
    f = mesh.faces
    ll = mesh.vertex_loglik
    if len(v):
        key = np.round(v / tol).astype(np.int64) if tol > 0 else v
        _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
        inverse = inverse.ravel()
        # keep the lowest original index as representative for determinism
        order = np.argsort(first)
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        v = v[first[order]]
        if ll is not None:
            ll = ll[first[order]]
        f = rank[inverse[f]]
    if len(f):
        distinct = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
        f = f[distinct]
    cleaned = TriangleMesh(v, f, ll)
    if len(f):
        cleaned = TriangleMesh(v, f[cleaned.face_areas() > 0], ll)
    return remove_unreferenced(cleaned)


def remove_unreferenced(mesh: TriangleMesh) -> TriangleMesh:
    used = np.unique(mesh.faces)
    remap = -np.ones(len(mesh.vertices), dtype=np.int64)
    remap[used] = np.arange(len(used))
    ll = None if mesh.vertex_loglik is None else mesh.vertex_loglik[used]
    return TriangleMesh(mesh.vertices[used], remap[mesh.faces], ll)
