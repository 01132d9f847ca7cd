"""Lagrange P1/P2 shape functions on the reference triangle.

Local node order: vertices 0, 1, 2, then (P2) midpoints of the edges opposite
vertices 0, 1, 2, i.e. edges (1,2), (2,0), (0,1).
"""
from __future__ import annotations

import numpy as np


def _bary(points):
    points = np.asarray(points, dtype=float)
    x, y = points[..., 0], points[..., 1]
    return 1.0 - x - y, x, y


# d(lambda_i)/d(x, y) on the reference element
_DLAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def shape_values(degree: int, points) -> np.ndarray:
    """(npts, nbasis) values at reference points."""
    l0, l1, l2 = _bary(points)
    if degree == 1:
        return np.stack([l0, l1, l2], axis=-1)
    if degree == 2:
        return np.stack(
            [
                l0 * (2 * l0 - 1),
                l1 * (2 * l1 - 1),
                l2 * (2 * l2 - 1),
                4 * l1 * l2,
                4 * l2 * l0,
                4 * l0 * l1,
            ],
            axis=-1,
        )
    raise ValueError(f"unsupported degree {degree}")


def shape_gradients(degree: int, points) -> np.ndarray:
    """(npts, nbasis, 2) reference gradients."""
    lam = np.stack(_bary(points), axis=-1)
    npts = lam.shape[:-1]
    if degree == 1:
        return np.broadcast_to(_DLAMBDA, npts + (3, 2)).copy()
    if degree == 2:
        out = np.empty(npts + (6, 2))
        for i in range(3):
            out[..., i, :] = (4 * lam[..., i] - 1)[..., None] * _DLAMBDA[i]
        for k, (i, j) in enumerate([(1, 2), (2, 0), (0, 1)]):
            out[..., 3 + k, :] = 4 * (lam[..., i, None] * _DLAMBDA[j] + lam[..., j, None] * _DLAMBDA[i])
        return out
    raise ValueError(f"unsupported degree {degree}")


def n_basis(degree: int) -> int:
    return {1: 3, 2: 6}[degree]
