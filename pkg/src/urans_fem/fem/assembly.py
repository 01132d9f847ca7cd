"""Sparse assembly of the forms in the Backward-Euler URANS step.

Every routine integrates with the degree-5 rule of the space unless told
otherwise; element contributions are accumulated through COO summation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .space import ASSEMBLY_ORDER, FESpace


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Nonnegative scalar coefficient sampled at the quadrature points."""

    values: np.ndarray  # (nt, nq)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("coefficient has non-finite values")
        if np.any(self.values < 0):
            raise ValueError(f"negative coefficient at a quadrature point (min {self.values.min():.3e})")

    @classmethod
    def constant(cls, space: FESpace, value: float, order: int = ASSEMBLY_ORDER) -> "CoefficientField":
        g = space.geometry(order)
        return cls(np.full(g.dx.shape, float(value)))

    @classmethod
    def from_function(cls, space: FESpace, func: Callable, order: int = ASSEMBLY_ORDER):
        g = space.geometry(order)
        x, y = g.points[..., 0], g.points[..., 1]
        return cls(np.broadcast_to(np.asarray(func(x, y), dtype=float), g.dx.shape).copy())

    @classmethod
    def from_nodal(cls, space: FESpace, nodal: np.ndarray, order: int = ASSEMBLY_ORDER):
        return cls(space.scalar_at_quadrature(nodal, order))


Coefficient = Union[float, np.ndarray, CoefficientField, Callable]


def coefficient_values(space: FESpace, a: Coefficient, order: int = ASSEMBLY_ORDER) -> np.ndarray:
    if isinstance(a, CoefficientField):
        vals = a.values
    elif callable(a):
        vals = CoefficientField.from_function(space, a, order).values
    elif np.isscalar(a):
        vals = CoefficientField.constant(space, a, order).values
    else:
        vals = CoefficientField(np.asarray(a, dtype=float)).values
    if vals.shape != space.geometry(order).dx.shape:
        raise ValueError("coefficient does not match the quadrature layout")
    return vals


def _scatter(rows, cols, data, shape) -> sp.csr_matrix:
    mat = sp.coo_matrix((data.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()
    mat.sum_duplicates()
    return mat


def _scalar_block(space: FESpace, local: np.ndarray) -> sp.csr_matrix:
    cn = space.cell_nodes
    nb = cn.shape[1]
    rows = np.broadcast_to(cn[:, :, None], (len(cn), nb, nb))
    cols = np.broadcast_to(cn[:, None, :], (len(cn), nb, nb))
    return _scatter(rows, cols, local, (space.n_nodes, space.n_nodes))


def _vector(block: sp.spmatrix) -> sp.csr_matrix:
    return sp.block_diag([block, block], format="csr")


def assemble_mass(space: FESpace, vector: bool = True, order: int = ASSEMBLY_ORDER) -> sp.csr_matrix:
    """Velocity mass matrix (or its scalar block when ``vector=False``)."""
    g = space.geometry(order)
    local = np.einsum("tq,qi,qj->tij", g.dx, g.phi, g.phi)
    block = _scalar_block(space, local)
    return _vector(block) if vector else block


def assemble_pressure_mass(space: FESpace, order: int = ASSEMBLY_ORDER) -> sp.csr_matrix:
    g = space.geometry(order)
    local = np.einsum("tq,qi,qj->tij", g.dx, g.psi, g.psi)
    t = space.mesh.triangles
    rows = np.broadcast_to(t[:, :, None], local.shape)
    cols = np.broadcast_to(t[:, None, :], local.shape)
    return _scatter(rows, cols, local, (space.n_p, space.n_p))


def pressure_mean_vector(space: FESpace, order: int = ASSEMBLY_ORDER) -> np.ndarray:
    """Entries int(psi_i) so that ``m @ p`` is the integral of p_h."""
    g = space.geometry(order)
    local = np.einsum("tq,qi->ti", g.dx, g.psi)
    return np.bincount(space.mesh.triangles.ravel(), weights=local.ravel(), minlength=space.n_p)


def assemble_diffusion(
    space: FESpace,
    a: Coefficient = 1.0,
    form: str = "full",
    vector: bool = True,
    order: int = ASSEMBLY_ORDER,
) -> sp.csr_matrix:
    """Viscous operator for ``int a(x) grad v : grad w``.

    ``form="symmetric"`` assembles ``2 int a(x) eps(v) : eps(w)`` instead;
    it needs ``vector=True``.
    """
    g = space.geometry(order)
    coef = coefficient_values(space, a, order) * g.dx
    # K_ij = sum_q w a dphi_j . dphi_i  (row i = test function)
    lap = np.einsum("tq,tqik,tqjk->tij", coef, g.dphi, g.dphi)
    if form == "full":
        block = _scalar_block(space, lap)
        return _vector(block) if vector else block
    if form != "symmetric":
        raise ValueError(f"unknown viscous form {form!r}")
    if not vector:
        raise ValueError("symmetric-gradient form is vector-valued only")
    # block (d, c): delta_cd grad phi_j . grad phi_i + d_d phi_j d_c phi_i
    blocks = [[None, None], [None, None]]
    for d in range(2):
        for c in range(2):
            extra = np.einsum("tq,tqj,tqi->tij", coef, g.dphi[..., d], g.dphi[..., c])
            blocks[d][c] = _scalar_block(space, extra + (lap if c == d else 0.0))
    return sp.bmat(blocks, format="csr")


def assemble_trilinear(space: FESpace, u: np.ndarray, order: int = ASSEMBLY_ORDER) -> sp.csr_matrix:
    """Convection operator N(u) with w^T N(u) v = ((u.grad)v, w) + 1/2 ((div u) v, w)."""
    u = np.asarray(u, dtype=float)
    if u.shape != (space.n_v,):
        raise ValueError(f"advecting field must have length {space.n_v}, got {u.shape}")
    g = space.geometry(order)
    uq, gu = space.velocity_at_quadrature(u, order)
    div = gu[..., 0, 0] + gu[..., 1, 1]
    adv = np.einsum("tqk,tqjk->tqj", uq, g.dphi)  # u . grad phi_j
    kernel = adv + 0.5 * div[..., None] * g.phi[None]
    local = np.einsum("tq,qi,tqj->tij", g.dx, g.phi, kernel)
    return _vector(_scalar_block(space, local))


def assemble_divergence(space: FESpace, order: int = ASSEMBLY_ORDER) -> sp.csr_matrix:
    """B with (B v)_i = (div v_h, psi_i); shape (n_p, n_v)."""
    g = space.geometry(order)
    t = space.mesh.triangles
    cn = space.cell_nodes
    blocks = []
    for c in range(2):
        local = np.einsum("tq,qi,tqj->tij", g.dx, g.psi, g.dphi[..., c])
        rows = np.broadcast_to(t[:, :, None], local.shape)
        cols = np.broadcast_to(cn[:, None, :], local.shape)
        blocks.append(_scatter(rows, cols, local, (space.n_p, space.n_nodes)))
    return sp.hstack(blocks, format="csr")


def assemble_load(space: FESpace, f: Callable | None, t: float = 0.0, order: int = ASSEMBLY_ORDER) -> np.ndarray:
    """Right-hand side int f(x, t) . w_h for every velocity basis function.

    ``f(x, y, t)`` returns the two force components; ``None`` means zero force.
    """
    out = np.zeros(space.n_v)
    if f is None:
        return out
    g = space.geometry(order)
    fx, fy = f(g.points[..., 0], g.points[..., 1], t)
    for c, comp in enumerate((fx, fy)):
        comp = np.broadcast_to(np.asarray(comp, dtype=float), g.dx.shape)
        local = np.einsum("tq,qi->ti", g.dx * comp, g.phi)
        out[c * space.n_nodes : (c + 1) * space.n_nodes] = np.bincount(
            space.cell_nodes.ravel(), weights=local.ravel(), minlength=space.n_nodes
        )
    return out
