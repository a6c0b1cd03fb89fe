import numpy as np
import pytest
import scipy.sparse as sp

from mflow.errors import ConvergenceError, InvalidArgument, ReconstructionError
from mflow.geometry import OrientedPointSet, ScalarField, TriangleMesh, weld_and_clean
from mflow.surface import (PoissonConfig, gaussian_density, gradient_normals, ll_poisson,
                           ll_poisson_detailed, loglik_percentile, pca_normals, pca_poisson,
                           poisson_reconstruct, propagate_orientation, prune_vertices,
                           sample_mesh_uniform, shell_density, solve_indicator)
from mflow.surface.poisson import pcg, trilinear_splat
from mflow.synth import SynthManifold, sample_manifold

from conftest import central_diff, rel_err

SPHERE = SynthManifold("sphere")


def unit_sphere_ops(n, seed=0):
    p = sample_manifold(SPHERE, n, seed)
    return OrientedPointSet(p, p.copy(), np.zeros(n))


def near_shell(n, noise, seed):
    p = sample_manifold(SPHERE, n, seed)
    return p + noise * np.random.default_rng(seed + 1000).standard_normal(p.shape)


# -- densities and normals ----------------------------------------------------

def test_shell_gradient_matches_finite_differences():
    f = shell_density(1.0, 0.05)
    for x in np.random.default_rng(0).standard_normal((5, 3)):
        g = f.grad_log_density(x[None])[0]
        for j in range(3):
            fd = central_diff(lambda v: f.log_density(v[None])[0], x.copy(), j)
            assert rel_err(g[j], fd) < 1e-4


def test_shell_gradient_is_radial_in_annulus():
    rng = np.random.default_rng(1)
    d = rng.standard_normal((2000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    off = rng.uniform(0.05, 0.3, 2000) * rng.choice([-1, 1], 2000)
    x = d * (1 + off)[:, None]
    g = shell_density().grad_log_density(x)
    cos = np.abs(np.sum(g * d, axis=1)) / np.linalg.norm(g, axis=1)
    assert np.max(np.abs(cos - 1)) < 1e-9


def test_gradient_normals_examples():
    x = near_shell(500, 0.02, 0)
    ops = gradient_normals(shell_density(), x)
    radial = x / np.linalg.norm(x, axis=1, keepdims=True)
    assert np.max(np.abs(np.abs(np.sum(ops.normals * radial, axis=1)) - 1)) < 1e-9
    g = gradient_normals(gaussian_density(), np.array([[2.0, 0, 0]]))
    assert np.allclose(g.normals, [[-1, 0, 0]])
    on = np.array([[1.0, 0, 0], [0, 1.2, 0]])
    out = gradient_normals(shell_density(), on)
    assert len(out) == 1 and out.dropped == 1
    with pytest.raises(ReconstructionError, match="gradient_normals"):
        gradient_normals(shell_density(), on[:1])


def test_orientation_fixes_random_flips():
    ops = unit_sphere_ops(2000, 1)
    signs = np.random.default_rng(2).choice([-1.0, 1.0], 2000)
    flipped = OrientedPointSet(ops.points, ops.normals * signs[:, None],
                               np.random.default_rng(3).standard_normal(2000))
    out, edges = propagate_orientation(flipped, 20, return_tree=True)
    assert np.all(np.sum(out.normals * out.points, axis=1) > 0)
    assert np.all(np.sum(out.normals[edges[:, 0]] * out.normals[edges[:, 1]], axis=1) >= 0)
    assert len(edges) == 1999


def test_orientation_keeps_consistent_normals():
    ops = unit_sphere_ops(500, 4)
    out = propagate_orientation(ops, 10)
    assert np.array_equal(out.normals, ops.normals)
    inward = propagate_orientation(OrientedPointSet(ops.points, -ops.normals, ops.loglik), 10)
    assert np.array_equal(inward.normals, ops.normals)


def test_orientation_two_components():
    a = unit_sphere_ops(400, 5)
    pts = np.vstack([a.points, a.points + [10.0, 0, 0]])
    nrm = np.vstack([a.points, a.points]) * np.random.default_rng(6).choice([-1.0, 1.0], (800, 1))
    out = propagate_orientation(OrientedPointSet(pts, nrm, np.zeros(800)), 10)
    centers = np.repeat([[0, 0, 0], [10.0, 0, 0]], 400, axis=0)
    assert np.all(np.sum(out.normals * (pts - centers), axis=1) > 0)


def test_orientation_needs_k_below_n():
    with pytest.raises(InvalidArgument):
        propagate_orientation(unit_sphere_ops(10), 10)


def test_pca_normals():
    rng = np.random.default_rng(7)
    plane = np.column_stack([rng.uniform(-1, 1, (300, 2)), np.zeros(300)])
    ops = pca_normals(plane, 10)
    assert np.max(np.abs(np.abs(ops.normals[:, 2]) - 1)) < 1e-6
    assert np.all(ops.loglik == 0)
    pts = sample_manifold(SPHERE, 10000, 8)
    ops = pca_normals(pts, 20)
    dots = np.abs(np.sum(ops.normals * pts, axis=1))
    assert np.mean(dots > 0.99) >= 0.99
    with pytest.raises(InvalidArgument):
        pca_normals(pts, 2)


def test_pca_drops_degenerate_neighborhoods():
    line = np.column_stack([np.linspace(0, 1, 30), np.zeros(30), np.zeros(30)])
    blob = np.random.default_rng(9).standard_normal((30, 3)) + 5
    ops = pca_normals(np.vstack([line, blob]), 5)
    assert ops.dropped >= 25 and len(ops) + ops.dropped == 60


# -- grid, solve and meshing ----------------------------------------------------

def test_splat_weights_and_interpolation():
    s = trilinear_splat(np.array([[2.25, 3.0, 4.0]]), np.ones((1, 1)), np.zeros(3), 1.0, 8)[0]
    assert s[2, 3, 4] == 0.75 and s[3, 3, 4] == 0.25 and s.sum() == 1.0
    f = ScalarField(s, np.zeros(3), 1.0)
    assert f.interpolate(np.array([[2.25, 3.0, 4.0]]))[0] == pytest.approx(0.625)


def test_pcg_solves_and_reports_failure():
    A = sp.diags([-1, 2.5, -1], [-1, 0, 1], shape=(50, 50), format="csr")
    b = np.random.default_rng(0).standard_normal(50)
    x, it, rel = pcg(A, b, 1e-10, 500)
    assert np.linalg.norm(A @ x - b) <= 1e-9 * np.linalg.norm(b)
    with pytest.raises(ConvergenceError) as info:
        pcg(A, b, 1e-12, 2)
    assert info.value.residual > 1e-12


def test_sphere_mesh_is_close_and_closed():
    ops = unit_sphere_ops(10000, 10)
    chi, mesh = poisson_reconstruct(ops, PoissonConfig())
    err = np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1)
    assert np.mean(err < 3 * chi.spacing) >= 0.99
    assert mesh.is_watertight() and mesh.euler_characteristic() == 2
    assert chi.meta["cg_residual"] <= 1e-6


def test_finer_grid_does_not_increase_error():
    ops = unit_sphere_ops(10000, 11)
    med = []
    for res in (32, 64):
        _, mesh = poisson_reconstruct(ops, PoissonConfig(grid_res=res))
        med.append(np.median(np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1)))
    assert med[1] <= med[0]


def test_zero_normals_are_rejected():
    ops = unit_sphere_ops(200, 12)
    ops.normals = np.zeros_like(ops.normals)
    with pytest.raises(ReconstructionError):
        solve_indicator(ops, PoissonConfig(grid_res=16))


def test_config_validation():
    with pytest.raises(InvalidArgument):
        PoissonConfig(grid_res=4)
    with pytest.raises(InvalidArgument):
        PoissonConfig(alpha=1.0)


def test_weld_and_clean():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 0, 0], [5, 5, 5]], dtype=float)
    mesh = TriangleMesh(v, [[0, 1, 2], [0, 3, 2], [0, 1, 3]])
    out = weld_and_clean(mesh)
    assert len(out.vertices) == 3 and len(out.faces) == 2


# -- pruning and sampling -------------------------------------------------------

def test_percentile_linear_interpolation():
    assert loglik_percentile(np.arange(100), 0.05) == pytest.approx(4.95)


def _tetra_with_outlier():
    v = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, 0, 0], [0, 0, 4.0]])
    v[:4] /= np.linalg.norm(v[:4], axis=1, keepdims=True)
    faces = [[0, 1, 2], [0, 2, 3], [1, 3, 2], [0, 3, 1], [0, 1, 4], [1, 3, 4]]
    return TriangleMesh(v, faces)


def test_prune_removes_exactly_the_outlier():
    mesh = _tetra_with_outlier()
    ops = OrientedPointSet(mesh.vertices[:4], mesh.vertices[:4], np.zeros(4))
    out = prune_vertices(mesh, shell_density(), ops, 0.0)
    assert len(out.vertices) == 4 and len(out.faces) == 4
    assert np.all(np.abs(np.linalg.norm(out.vertices, axis=1) - 1) < 1e-12)


def test_prune_alpha_zero_keeps_likely_mesh():
    mesh = _tetra_with_outlier()
    keep = TriangleMesh(mesh.vertices[:4], mesh.faces[:4])
    ops = OrientedPointSet(keep.vertices * 1.1, keep.vertices, shell_density().log_density(keep.vertices * 1.1))
    out = prune_vertices(keep, shell_density(), ops, 0.0)
    assert np.array_equal(out.vertices, keep.vertices) and np.array_equal(out.faces, keep.faces)
    far = OrientedPointSet(keep.vertices, keep.vertices, np.full(4, 10.0))
    with pytest.raises(ReconstructionError):
        prune_vertices(keep, shell_density(), far, 0.0)


def test_sampling_single_triangle_and_seed():
    tri = TriangleMesh(np.array([[0, 0, 0], [2, 0, 0], [0, 1, 0.0]]), [[0, 1, 2]])
    x = sample_mesh_uniform(tri, 5000, 1)
    assert np.all(x[:, 0] >= 0) and np.all(x[:, 1] >= 0)
    assert np.all(x[:, 0] / 2 + x[:, 1] <= 1 + 1e-12)
    assert np.array_equal(x, sample_mesh_uniform(tri, 5000, 1))


def test_sampling_follows_area():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0], [10, 0, 0], [13, 0, 0], [10, 2, 0.0]])
    mesh = TriangleMesh(v, [[0, 1, 2], [3, 4, 5]])
    x = sample_mesh_uniform(mesh, 40000, 2)
    small = int(np.sum(x[:, 0] < 5))
    assert abs(small - 10000) <= 200 and abs((40000 - small) - 30000) <= 600


def test_zero_area_mesh_is_rejected():
    flat = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]]), [[0, 1, 2]])
    with pytest.raises(InvalidArgument):
        sample_mesh_uniform(flat, 10, 0)


# -- composed pipeline ----------------------------------------------------------

def test_sparse_shell_mesh_is_a_sphere():
    res = ll_poisson_detailed(shell_density(), near_shell(256, 0.02, 13), PoissonConfig(k1=256))
    assert res.raw_mesh.is_watertight() and res.raw_mesh.euler_characteristic() == 2
    perc = loglik_percentile(res.oriented.loglik, 0.05)
    assert np.all(shell_density().log_density(res.mesh.vertices) >= perc)


def test_pipeline_is_deterministic():
    x = near_shell(2000, 0.02, 14)
    cfg = PoissonConfig(k1=2000, grid_res=32, k2=512)
    a, ma = ll_poisson(shell_density(), x, cfg, seed=3)
    b, mb = ll_poisson(shell_density(), x, cfg, seed=3)
    assert np.array_equal(a, b) and np.array_equal(ma.faces, mb.faces)
    assert a.shape == (512, 3)


def test_stage_errors_are_labelled():
    with pytest.raises(ReconstructionError, match=r"\[propagate_orientation\]"):
        ll_poisson(shell_density(), near_shell(10, 0.02, 15), PoissonConfig(k1=10))
    with pytest.raises(ReconstructionError, match=r"\[pca_normals\]"):
        pca_poisson(near_shell(10, 0.02, 15), PoissonConfig(k1=10))


def test_pca_baseline_runs():
    res = pca_poisson(near_shell(3000, 0.01, 16), PoissonConfig(grid_res=32, k2=256))
    assert res.points.shape == (256, 3)
    assert np.median(np.abs(np.linalg.norm(res.points, axis=1) - 1)) < 0.05
