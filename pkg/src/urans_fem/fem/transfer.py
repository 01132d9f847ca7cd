"""Evaluation of finite element fields at arbitrary points, and mesh-to-mesh transfer."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .basis import shape_values
from .space import FESpace

_CANDIDATES = 12


def locate_points(space: FESpace, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Containing triangle and reference coordinates of each point.

    Points outside the triangulation (a curved boundary resolved by a
    different polygon) are assigned to the nearby triangle they are least
    outside of, and the field is extrapolated there.
    """
    mesh = space.mesh
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    k = min(_CANDIDATES, mesh.n_triangles)
    _, cand = cKDTree(centroids).query(points, k=k)
    cand = cand.reshape(len(points), k)
    origin, _, _, inv = space._affine
    rel = points[:, None, :] - origin[cand]
    ref = np.einsum("pkij,pkj->pki", inv[cand], rel)  # (xi, eta) in each candidate
    lam = np.concatenate([1.0 - ref.sum(axis=-1, keepdims=True), ref], axis=-1)
    best = np.argmax(lam.min(axis=-1), axis=1)
    rows = np.arange(len(points))
    return cand[rows, best], ref[rows, best]


def evaluation_matrix(space: FESpace, points: np.ndarray) -> sp.csr_matrix:
    """Sparse E with (E @ u_scalar)[i] = u_h(points[i]) for scalar nodal fields."""
    tri, ref = locate_points(space, points)
    vals = shape_values(space.degree, ref)  # (npts, nb)
    nb = vals.shape[1]
    rows = np.repeat(np.arange(len(tri)), nb)
    cols = space.cell_nodes[tri].ravel()
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(len(tri), space.n_nodes))


def transfer_matrix(coarse: FESpace, fine: FESpace) -> sp.csr_matrix:
    """Interpolate coarse velocities into the fine space (nodal evaluation).

    Fine no-slip dofs are set to zero, matching the boundary condition both
    fields satisfy.
    """
    E = evaluation_matrix(coarse, fine.node_coords).tolil()
    E[fine.dirichlet_nodes, :] = 0.0
    E = E.tocsr()
    E.eliminate_zeros()
    return sp.block_diag([E, E], format="csr")
