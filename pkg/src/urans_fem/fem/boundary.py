"""Symmetric elimination of Dirichlet constraints."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    constrained: np.ndarray
    values: np.ndarray
    size: int

    def extend(self, x_free: np.ndarray) -> np.ndarray:
        """Full solution vector: free unknowns plus the boundary data."""
        x = np.empty(self.size)
        x[self.free] = x_free
        x[self.constrained] = self.values
        return x


def apply_dirichlet(
    matrix: sp.spmatrix,
    rhs: np.ndarray,
    dofs: np.ndarray,
    values: np.ndarray | float = 0.0,
    admissible: np.ndarray | None = None,
) -> ReducedSystem:
    """Remove constrained rows and columns, moving their coupling to the rhs.

    ``admissible``, when given, lists the dofs that may be constrained
    (e.g. the space's Dirichlet dofs); anything else raises ValueError.
    """
    matrix = sp.csr_matrix(matrix)
    n = matrix.shape[0]
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape).copy()
    if len(np.unique(dofs)) != len(dofs):
        raise ValueError("duplicate constrained dofs")
    if admissible is not None:
        bad = np.setdiff1d(dofs, admissible)
        if len(bad):
            raise ValueError(f"boundary value given for non-boundary dofs {bad[:5].tolist()}")
    mask = np.ones(n, dtype=bool)
    mask[dofs] = False
    free = np.flatnonzero(mask)
    rhs_free = np.asarray(rhs, dtype=float)[free]
    if len(dofs) and np.any(values != 0):
        rhs_free = rhs_free - matrix[free][:, dofs] @ values
    reduced = matrix[free][:, free].tocsr()
    return ReducedSystem(reduced, rhs_free, free, dofs, values, n)
