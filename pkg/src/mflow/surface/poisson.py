"""Screened Poisson indicator solve on a regular grid, plus iso-surface extraction.

Grid units are used throughout the solve (cell size 1), so the screening
weight is relative to the 7-point Laplacian's diagonal of 6.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
from skimage.measure import marching_cubes

from ..errors import ConvergenceError, InvalidArgument, ReconstructionError
from ..geometry import OrientedPointSet, ScalarField, TriangleMesh, weld_and_clean
from .density import DensityField


@dataclass(frozen=True)
class PoissonConfig:
    k1: int = 10000
    k_neighbors: int = 20
    grid_res: int = 64
    screening_weight: float = 4.0
    alpha: float = 0.05
    k2: int = 2048
    padding: float = 0.1
    cg_tol: float = 1e-6
    cg_max_iter: int = 5000

    def __post_init__(self):
        if self.grid_res < 8:
            raise InvalidArgument("grid_res must be >= 8")
        if not 0 <= self.alpha < 1:
            raise InvalidArgument("alpha must lie in [0, 1)")
        if self.screening_weight < 0:
            raise InvalidArgument("screening_weight must be >= 0")
        if self.k_neighbors < 1 or self.k2 < 1 or self.k1 < 1:
            raise InvalidArgument("k1, k2 and k_neighbors must be positive")

    def to_dict(self):
        return asdict(self)


def grid_for(points, grid_res: int, padding: float):
    """Cubic lattice around ``points``: (origin, spacing)."""
    lo, hi = points.min(axis=0), points.max(axis=0)
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise ReconstructionError("poisson", "points span no volume")
    spacing = extent * (1.0 + 2.0 * padding) / (grid_res - 1)
    center = 0.5 * (lo + hi)
    origin = center - spacing * (grid_res - 1) / 2.0
    return origin, spacing


def trilinear_splat(points, values, origin, spacing, res):
    """Accumulate per-point values onto lattice nodes with trilinear weights.

    ``values`` is (n, c); returns (c, res, res, res). Accumulation goes
    through ``np.bincount`` and is order-deterministic.
    """
    g = (points - origin) / spacing
    i0 = np.clip(np.floor(g).astype(np.int64), 0, res - 2)
    f = np.clip(g - i0, 0.0, 1.0)
    out = np.zeros((values.shape[1], res ** 3))
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                w = wx * wy * wz
                flat = ((i0[:, 0] + dx) * res + (i0[:, 1] + dy)) * res + (i0[:, 2] + dz)
                for c in range(values.shape[1]):
                    out[c] += np.bincount(flat, weights=w * values[:, c], minlength=res ** 3)
    return out.reshape(values.shape[1], res, res, res)


def neumann_laplacian(res: int) -> sp.csr_matrix:
    """7-point Laplacian on a res^3 lattice with zero-flux boundaries."""
    main = -2.0 * np.ones(res)
    main[0] = main[-1] = -1.0
    d1 = sp.diags([np.ones(res - 1), main, np.ones(res - 1)], [-1, 0, 1], format="csr")
    eye = sp.identity(res, format="csr")
    return (sp.kron(sp.kron(d1, eye), eye) + sp.kron(sp.kron(eye, d1), eye)
            + sp.kron(sp.kron(eye, eye), d1)).tocsr()


def pcg(A, b, tol=1e-6, max_iter=5000):
    """Jacobi-preconditioned conjugate gradient for SPD ``A``.

    Stops when ||r|| <= tol * ||b||; returns (x, iterations, relative residual).
    """
    inv_diag = 1.0 / A.diagonal()
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0:
        return x, 0, 0.0
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    rel = 1.0
    for it in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rel = float(np.linalg.norm(r)) / bnorm
        if rel <= tol:
            return x, it, rel
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"CG stopped after {max_iter} iterations at relative residual {rel:.3e}",
                           residual=rel, iterations=max_iter)


def solve_indicator(ops: OrientedPointSet, config: PoissonConfig) -> ScalarField:
    """Solve lap(chi) - w M chi = div V for the indicator field chi.

    V is the trilinear splat of the normals and M the splat of unit point
    masses, both divided by the mean nonzero node mass. chi grows along the
    normals, so it is lower inside a surface with outward normals.
    """
    pts = ops.points
    res = config.grid_res
    origin, spacing = grid_for(pts, res, config.padding)
    splat = trilinear_splat(pts, np.column_stack([ops.normals, np.ones(len(pts))]),
                            origin, spacing, res)
    mass = splat[3]
    scale = mass[mass > 0].mean()
    field_v = splat[:3] / scale
    screen = (mass / scale).ravel()
    div = sum(np.gradient(field_v[a], axis=a) for a in range(3)).ravel()
    if not np.any(div != 0):
        raise ReconstructionError("poisson", "normal field has zero divergence; nothing to reconstruct")
    A = (-neumann_laplacian(res) + sp.diags(config.screening_weight * screen)).tocsr()
    chi, iters, rel = pcg(A, -div, config.cg_tol, config.cg_max_iter)
    values = chi.reshape(res, res, res)
    out = ScalarField(values, origin, spacing, {"cg_iterations": iters, "cg_residual": rel})
    out.meta["iso"] = float(out.interpolate(pts).mean())
    return out


def extract_mesh(field: ScalarField, iso: float) -> TriangleMesh:
    vals = field.values
    if not (vals.min() < iso < vals.max()):
        raise ReconstructionError("marching_cubes", f"iso-value {iso:.6g} outside field range")
    try:
        verts, faces, _, _ = marching_cubes(vals, level=iso, spacing=(field.spacing,) * 3,
                                            gradient_direction="ascent")
    except (ValueError, RuntimeError) as exc:
        raise ReconstructionError("marching_cubes", str(exc)) from exc
    mesh = weld_and_clean(TriangleMesh(verts + field.origin, faces))
    if len(mesh.faces) == 0:
        raise ReconstructionError("marching_cubes", "iso-surface is empty")
    return mesh


def poisson_reconstruct(ops: OrientedPointSet, config: PoissonConfig,
                        field: DensityField | None = None) -> tuple[ScalarField, TriangleMesh]:
    """Indicator grid and its iso-surface mesh at the mean indicator value of the points.

    When ``field`` is given, vertex log-likelihoods are filled in.
    """
    if len(ops) == 0:
        raise ReconstructionError("poisson", "no oriented points")
    chi = solve_indicator(ops, config)
    mesh = extract_mesh(chi, chi.meta["iso"])
    if field is not None:
        mesh.vertex_loglik = np.asarray(field.log_density(mesh.vertices), dtype=np.float64)
    return chi, mesh
