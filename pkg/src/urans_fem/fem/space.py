"""Taylor-Hood degree-of-freedom maps and per-element geometry."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np

from ..mesh import NOSLIP_TAG, Mesh
from .basis import shape_gradients, shape_values
from .quadrature import quadrature_rule

ASSEMBLY_ORDER = 5


@dataclass(frozen=True, eq=False)
class ElementGeometry:
    """Affine-map data for all triangles at one quadrature rule.

    ``dx`` holds weight times |det J| per (element, point); ``phi``/``psi``
    are velocity/pressure shape values, ``dphi``/``dpsi`` physical gradients.
    """

    order: int
    points: np.ndarray  # (nt, nq, 2) physical quadrature points
    dx: np.ndarray  # (nt, nq)
    phi: np.ndarray  # (nq, nb)
    dphi: np.ndarray  # (nt, nq, nb, 2)
    psi: np.ndarray  # (nq, 3)
    dpsi: np.ndarray  # (nt, nq, 3, 2)


class FESpace:
    """Velocity (P2 or, for negative controls, P1) x pressure (P1) space.

    Velocity dofs are component-blocked: dof ``c * n_nodes + j`` is component
    ``c`` at scalar node ``j``. Scalar P2 nodes are the mesh vertices followed
    by the edge midpoints.
    """

    def __init__(self, mesh: Mesh, noslip_tags: Iterable[int] = (NOSLIP_TAG,), degree: int = 2):
        if degree not in (1, 2):
            raise ValueError("velocity degree must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        self.noslip_tags = tuple(sorted(set(int(t) for t in noslip_tags)))
        nv = mesh.n_vertices
        if degree == 2:
            self.n_nodes = nv + mesh.n_edges
            self.cell_nodes = np.hstack([mesh.triangles, nv + mesh.triangle_edges])
            self.node_coords = mesh.p2_nodes
            boundary_nodes = mesh.tagged_p2_nodes(self.noslip_tags)
        else:
            self.n_nodes = nv
            self.cell_nodes = np.asarray(mesh.triangles)
            self.node_coords = mesh.vertices
            boundary_nodes = np.unique(mesh.tagged_edges(self.noslip_tags).ravel())
        self.dirichlet_nodes = boundary_nodes
        self.dirichlet_dofs = np.concatenate([boundary_nodes, boundary_nodes + self.n_nodes])
        mask = np.ones(self.n_v, dtype=bool)
        mask[self.dirichlet_dofs] = False
        self.free_dofs = np.flatnonzero(mask)
        self._geometry: dict[int, ElementGeometry] = {}

    @property
    def n_v(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_p(self) -> int:
        return self.mesh.n_vertices

    @property
    def area(self) -> float:
        return self.mesh.domain_area

    @cached_property
    def _affine(self):
        p = self.mesh.vertices[self.mesh.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edge vectors
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1] / det
        inv[:, 1, 1] = jac[:, 0, 0] / det
        inv[:, 0, 1] = -jac[:, 0, 1] / det
        inv[:, 1, 0] = -jac[:, 1, 0] / det
        return p[:, 0], jac, det, inv

    def geometry(self, order: int = ASSEMBLY_ORDER) -> ElementGeometry:
        if order not in self._geometry:
            ref, weights = quadrature_rule(order)
            origin, jac, det, inv = self._affine
            points = origin[:, None, :] + np.einsum("tij,qj->tqi", jac, ref)
            dx = np.abs(det)[:, None] * weights[None, :]
            # physical gradient = J^{-T} reference gradient
            dphi = np.einsum("qbk,tkj->tqbj", shape_gradients(self.degree, ref), inv)
            dpsi = np.einsum("qbk,tkj->tqbj", shape_gradients(1, ref), inv)
            self._geometry[order] = ElementGeometry(
                order, points, dx, shape_values(self.degree, ref), dphi, shape_values(1, ref), dpsi
            )
        return self._geometry[order]

    # -- coefficient vectors -------------------------------------------------

    def interpolate(self, func, t: float | None = None) -> np.ndarray:
        """Nodal interpolant of a vector field ``func(x, y[, t]) -> (u1, u2)``."""
        x, y = self.node_coords[:, 0], self.node_coords[:, 1]
        vals = func(x, y) if t is None else func(x, y, t)
        u1, u2 = (np.broadcast_to(np.asarray(v, dtype=float), x.shape) for v in vals)
        return np.concatenate([u1, u2])

    def interpolate_pressure(self, func, t: float | None = None) -> np.ndarray:
        x, y = self.mesh.vertices[:, 0], self.mesh.vertices[:, 1]
        vals = func(x, y) if t is None else func(x, y, t)
        return np.broadcast_to(np.asarray(vals, dtype=float), x.shape).copy()

    def components(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        v = np.asarray(v)
        if v.shape != (self.n_v,):
            raise ValueError(f"velocity vector must have length {self.n_v}, got {v.shape}")
        return v[: self.n_nodes], v[self.n_nodes :]

    def velocity_at_quadrature(self, v: np.ndarray, order: int = ASSEMBLY_ORDER):
        """Values (nt, nq, 2) and gradients (nt, nq, 2, 2) with [c, j] = d u_c / d x_j."""
        g = self.geometry(order)
        u1, u2 = self.components(v)
        local = np.stack([u1[self.cell_nodes], u2[self.cell_nodes]], axis=-1)  # (nt, nb, 2)
        vals = np.einsum("qb,tbc->tqc", g.phi, local)
        grads = np.einsum("tqbj,tbc->tqcj", g.dphi, local)
        return vals, grads

    def scalar_at_quadrature(self, nodal: np.ndarray, order: int = ASSEMBLY_ORDER) -> np.ndarray:
        """Interpolate a scalar nodal field (velocity nodes) to quadrature points."""
        nodal = np.asarray(nodal, dtype=float)
        if nodal.shape != (self.n_nodes,):
            raise ValueError(f"nodal field must have length {self.n_nodes}")
        return np.einsum("qb,tb->tq", self.geometry(order).phi, nodal[self.cell_nodes])

    def pressure_at_quadrature(self, p: np.ndarray, order: int = ASSEMBLY_ORDER) -> np.ndarray:
        return np.einsum("qb,tb->tq", self.geometry(order).psi, np.asarray(p)[self.mesh.triangles])
