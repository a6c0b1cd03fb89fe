"""End-to-end surface sampling: likelihood-gradient normals or the PCA baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import MflowError, ReconstructionError
from ..geometry import OrientedPointSet, ScalarField, TriangleMesh
from .density import DensityField
from .mesh_ops import prune_vertices, sample_mesh_uniform
from .normals import gradient_normals, pca_normals, propagate_orientation
from .poisson import PoissonConfig, poisson_reconstruct


@dataclass
class SurfaceResult:
    points: np.ndarray
    mesh: TriangleMesh
    raw_mesh: TriangleMesh
    oriented: OrientedPointSet
    indicator: ScalarField


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ReconstructionError:
        raise
    except MflowError as exc:
        raise ReconstructionError(name, str(exc)) from exc


def ll_poisson_detailed(field: DensityField, initial, config: PoissonConfig = PoissonConfig(),
                        seed=0) -> SurfaceResult:
    pts = np.asarray(initial, dtype=np.float64)
    ops = _stage("gradient_normals", gradient_normals, field, pts)
    ops = _stage("propagate_orientation", propagate_orientation, ops, config.k_neighbors)
    chi, mesh = _stage("poisson", poisson_reconstruct, ops, config, field)
    pruned = _stage("prune", prune_vertices, mesh, field, ops, config.alpha)
    samples = _stage("sample", sample_mesh_uniform, pruned, config.k2, seed)
    return SurfaceResult(samples, pruned, mesh, ops, chi)


def ll_poisson(field: DensityField, initial, config: PoissonConfig = PoissonConfig(),
               seed=0) -> tuple[np.ndarray, TriangleMesh]:
    """Likelihood-gradient normals -> orientation -> Poisson -> pruning -> sampling.

    Returns the ``config.k2`` surface samples and the pruned mesh.
    """
    res = ll_poisson_detailed(field, initial, config, seed)
    return res.points, res.mesh


def pca_poisson(points, config: PoissonConfig = PoissonConfig(), seed=0) -> SurfaceResult:
    """Baseline without likelihoods: PCA normals, same orientation and solve, no pruning."""
    pts = np.asarray(points, dtype=np.float64)
    ops = _stage("pca_normals", pca_normals, pts, config.k_neighbors)
    ops = _stage("propagate_orientation", propagate_orientation, ops, config.k_neighbors)
    chi, mesh = _stage("poisson", poisson_reconstruct, ops, config)
    samples = _stage("sample", sample_mesh_uniform, mesh, config.k2, seed)
    return SurfaceResult(samples, mesh, mesh, ops, chi)
