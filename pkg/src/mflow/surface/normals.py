"""Normals from likelihood gradients or local PCA, and MST orientation propagation."""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree
from scipy.spatial import cKDTree

from ..errors import InvalidArgument, ReconstructionError
from ..geometry import OrientedPointSet
from .density import DensityField

GRAD_FLOOR = 1e-12
# added to every edge weight so exactly parallel normals still form an edge
_EDGE_EPS = 1e-9


def gradient_normals(field: DensityField, points) -> OrientedPointSet:
    """Unit normals along grad log p; points with a vanishing gradient are dropped."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidArgument("gradient_normals needs (n, 3) points")
    g = np.asarray(field.grad_log_density(pts), dtype=np.float64)
    norm = np.linalg.norm(g, axis=1)
    keep = np.isfinite(norm) & (norm >= GRAD_FLOOR)
    if not keep.any():
        raise ReconstructionError("gradient_normals", "every point has a vanishing gradient")
    pts = pts[keep]
    normals = g[keep] / norm[keep, None]
    loglik = np.asarray(field.log_density(pts), dtype=np.float64)
    return OrientedPointSet(pts, normals, loglik, dropped=int((~keep).sum()))


def pca_normals(points, k: int) -> OrientedPointSet:
    """Smallest-eigenvalue direction of each point's k-neighborhood covariance.

    Signs are left as the eigen-solver returns them. Neighborhoods of rank
    below 2 have no defined normal and are dropped.
    """
    pts = np.asarray(points, dtype=np.float64)
    if k < 3:
        raise InvalidArgument("pca_normals needs k >= 3")
    if len(pts) < k + 1:
        raise InvalidArgument(f"pca_normals needs more than k={k} points")
    _, idx = cKDTree(pts).query(pts, k=k)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    scale = np.maximum(evals[:, 2], 1e-300)
    keep = evals[:, 1] > 1e-12 * scale
    keep &= evals[:, 2] > 0
    normals = evecs[keep, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return OrientedPointSet(pts[keep], normals, np.zeros(int(keep.sum())),
                            dropped=int((~keep).sum()))


def _knn_graph(points, normals, k):
    n = len(points)
    _, idx = cKDTree(points).query(points, k=k + 1)
    rows = np.repeat(np.arange(n), k)
    cols = idx[:, 1:].ravel()
    w = 1.0 - np.abs(np.sum(normals[rows] * normals[cols], axis=1)) + _EDGE_EPS
    g = coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
    # symmetrize; weights are symmetric so max keeps them intact
    return g.maximum(g.T)


def propagate_orientation(ops: OrientedPointSet, k: int, return_tree: bool = False):
    """Make normal signs consistent along a minimum spanning tree of the k-NN graph.

    Each connected component is rooted at its highest-loglik point and
    children are flipped to agree with their parent. Finally each component
    is flipped, if needed, so its normals point away from its centroid on
    average. With ``return_tree`` the MST edges (parent, child) are returned
    too.
    """
    n = len(ops)
    if k < 1 or k >= n:
        raise InvalidArgument(f"orientation needs 1 <= k < n (k={k}, n={n})")
    graph = _knn_graph(ops.points, ops.normals, k)
    tree = minimum_spanning_tree(graph)
    tree = tree + tree.T
    n_comp, labels = connected_components(graph, directed=False)
    normals = ops.normals.copy()
    edges = []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        root = members[np.argmax(ops.loglik[members])]
        order, pred = breadth_first_order(tree, root, directed=False, return_predecessors=True)
        for node in order[1:]:
            parent = pred[node]
            if normals[node] @ normals[parent] < 0:
                normals[node] = -normals[node]
            edges.append((parent, node))
        centroid = ops.points[members].mean(axis=0)
        outward = np.mean(np.sum(normals[members] * (ops.points[members] - centroid), axis=1))
        if outward < 0:
            normals[members] = -normals[members]
    out = OrientedPointSet(ops.points, normals, ops.loglik, ops.dropped)
    if return_tree:
        return out, np.array(edges, dtype=np.int64).reshape(-1, 2)
    return out
