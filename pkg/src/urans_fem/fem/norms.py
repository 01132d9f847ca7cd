"""Norms and dissipation functionals evaluated with the assembly quadrature."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .assembly import Coefficient, coefficient_values
from .space import ASSEMBLY_ORDER, FESpace


def _grad_density(grads: np.ndarray, form: str) -> np.ndarray:
    if form == "full":
        return np.einsum("tqcj,tqcj->tq", grads, grads)
    if form == "symmetric":
        sym = 0.5 * (grads + np.swapaxes(grads, -1, -2))
        return 2.0 * np.einsum("tqcj,tqcj->tq", sym, sym)
    raise ValueError(f"unknown viscous form {form!r}")


def l2_norm_sq(space: FESpace, v: np.ndarray, order: int = ASSEMBLY_ORDER) -> float:
    vals, _ = space.velocity_at_quadrature(v, order)
    return float(np.sum(space.geometry(order).dx * np.einsum("tqc,tqc->tq", vals, vals)))


def weighted_dissipation(
    space: FESpace, v: np.ndarray, weight: Coefficient = 1.0, form: str = "full",
    order: int = ASSEMBLY_ORDER,
) -> float:
    """int w(x) |grad v_h|^2 (or 2 w |eps(v_h)|^2 for the symmetric form)."""
    _, grads = space.velocity_at_quadrature(v, order)
    w = coefficient_values(space, weight, order)
    return float(np.sum(space.geometry(order).dx * w * _grad_density(grads, form)))


def norms(space: FESpace, v: np.ndarray, weight: Coefficient | None = None,
          form: str = "full") -> dict[str, float]:
    """L2 norm, H1 seminorm, and weighted dissipation (weight 1 by default)."""
    g = space.geometry()
    vals, grads = space.velocity_at_quadrature(v)
    l2 = np.sum(g.dx * np.einsum("tqc,tqc->tq", vals, vals))
    h1 = np.sum(g.dx * _grad_density(grads, "full"))
    w = coefficient_values(space, 1.0 if weight is None else weight)
    diss = np.sum(g.dx * w * _grad_density(grads, form))
    return {"l2": float(np.sqrt(l2)), "h1_semi": float(np.sqrt(h1)), "dissipation": float(diss)}


def forcing_power(space: FESpace, v: np.ndarray, f: Callable | None, t: float,
                  order: int = ASSEMBLY_ORDER) -> tuple[float, float]:
    """Return ``(f, v_h)`` and ``||f||^2``, both by quadrature."""
    if f is None:
        return 0.0, 0.0
    g = space.geometry(order)
    vals, _ = space.velocity_at_quadrature(v, order)
    fx, fy = f(g.points[..., 0], g.points[..., 1], t)
    fq = np.stack(np.broadcast_arrays(np.asarray(fx, float), np.asarray(fy, float)), axis=-1)
    fq = np.broadcast_to(fq, vals.shape)
    power = np.sum(g.dx * np.einsum("tqc,tqc->tq", fq, vals))
    fsq = np.sum(g.dx * np.einsum("tqc,tqc->tq", fq, fq))
    return float(power), float(fsq)


def error_norms_exact(space: FESpace, v: np.ndarray, u: Callable, grad_u: Callable,
                      t: float | None = None, order: int = 6) -> tuple[float, float]:
    """(||u - u_h||, ||grad(u - u_h)||) against closed forms ``u(x, y[, t])``
    returning two components and ``grad_u`` returning ((u1x, u1y), (u2x, u2y))."""
    g = space.geometry(order)
    x, y = g.points[..., 0], g.points[..., 1]
    args = (x, y) if t is None else (x, y, t)
    vals, grads = space.velocity_at_quadrature(v, order)
    ue = np.stack(np.broadcast_arrays(*[np.asarray(c, float) for c in u(*args)]), axis=-1)
    ge = np.array(grad_u(*args), dtype=object)
    gex = np.empty(grads.shape)
    for c in range(2):
        for j in range(2):
            gex[..., c, j] = np.broadcast_to(np.asarray(ge[c][j], dtype=float), x.shape)
    e = ue - vals
    ge_ = gex - grads
    l2 = np.sum(g.dx * np.einsum("tqc,tqc->tq", e, e))
    h1 = np.sum(g.dx * np.einsum("tqcj,tqcj->tq", ge_, ge_))
    return float(np.sqrt(l2)), float(np.sqrt(h1))
