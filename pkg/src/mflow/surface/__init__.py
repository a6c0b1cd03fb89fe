from .density import DensityField, flow_density, gaussian_density, shell_density
from .mesh_ops import loglik_percentile, prune_vertices, sample_mesh_uniform
from .normals import gradient_normals, pca_normals, propagate_orientation
from .pipeline import SurfaceResult, ll_poisson, ll_poisson_detailed, pca_poisson
from .poisson import PoissonConfig, poisson_reconstruct, solve_indicator

__all__ = [
    "DensityField", "flow_density", "gaussian_density", "shell_density",
    "loglik_percentile", "prune_vertices", "sample_mesh_uniform",
    "gradient_normals", "pca_normals", "propagate_orientation",
    "SurfaceResult", "ll_poisson", "ll_poisson_detailed", "pca_poisson",
    "PoissonConfig", "poisson_reconstruct", "solve_indicator",
]
