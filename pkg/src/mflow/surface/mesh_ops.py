"""Likelihood pruning and area-uniform sampling of triangle meshes."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgument, ReconstructionError
from ..geometry import OrientedPointSet, TriangleMesh, remove_unreferenced, weld_and_clean
from .density import DensityField


def loglik_percentile(loglik, alpha: float) -> float:
    """alpha-quantile with linear interpolation between order statistics."""
    if not 0 <= alpha < 1:
        raise InvalidArgument("alpha must lie in [0, 1)")
    return float(np.quantile(np.asarray(loglik, dtype=np.float64), alpha, method="linear"))


def prune_vertices(mesh: TriangleMesh, field: DensityField, ops: OrientedPointSet,
                   alpha: float) -> TriangleMesh:
    """Drop vertices whose log-density falls below the alpha-percentile of ``ops.loglik``,
    together with every face touching them."""
    perc = loglik_percentile(ops.loglik, alpha)
    ll = np.asarray(field.log_density(mesh.vertices), dtype=np.float64)
    keep = ll >= perc
    if not keep.any():
        raise ReconstructionError("prune", "every mesh vertex lies below the likelihood percentile")
    faces = mesh.faces[np.all(keep[mesh.faces], axis=1)]
    pruned = remove_unreferenced(TriangleMesh(mesh.vertices, faces, ll))
    pruned = weld_and_clean(pruned)
    if len(pruned.faces) == 0:
        raise ReconstructionError("prune", "no faces survive pruning")
    return pruned


def sample_mesh_uniform(mesh: TriangleMesh, k2: int, seed=None) -> np.ndarray:
    """``k2`` points uniform over the surface area."""
    if len(mesh.faces) == 0:
        raise InvalidArgument("mesh has no faces")
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise InvalidArgument("mesh has zero total area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=k2, p=areas / total)
    u = rng.uniform(size=k2)
    v = rng.uniform(size=k2)
    fold = u + v > 1.0
    u[fold], v[fold] = 1.0 - u[fold], 1.0 - v[fold]
    tri = mesh.vertices[mesh.faces[face]]
    return tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
