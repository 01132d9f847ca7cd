"""1/2-equation model: parameters, eddy viscosity, and the scalar k updates.

The turbulent kinetic energy is a single space-averaged scalar k(t) obeying

    dk/dt + (sqrt(2)/2) k / tau = eps(v) k,
    eps(v) = (tau / |Omega|) int mu(y) |grad v|^2 dx,

and the eddy viscosity is nu_T(x) = mu(y(x)) k tau, where the damping
function mu(y) depends on the selector in :class:`ModelParams`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fem.assembly import CoefficientField
from .fem.norms import weighted_dissipation
from .fem.space import ASSEMBLY_ORDER, FESpace
from .mesh import Mesh, WallDistanceField

SQRT2 = math.sqrt(2.0)
DAMPING_CHOICES = ("constant", "model_quadratic", "test_variant")


@dataclass(frozen=True)
class ModelParams:
    """Physical and model constants (nondimensional)."""

    nu: float = 1e-4
    tau: float = 0.1
    mu: float = 0.55
    kappa: float = 0.41
    L: float = 1.0
    U: float = 1.0
    t_star: float = 1.0
    damping: str = "test_variant"

    def __post_init__(self):
        for name in ("nu", "tau", "mu", "L"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.t_star >= 0:
            raise ValueError(f"t_star must be nonnegative, got {self.t_star}")
        if self.damping not in DAMPING_CHOICES:
            raise ValueError(f"damping must be one of {DAMPING_CHOICES}, got {self.damping!r}")

    @property
    def Re(self) -> float:
        return self.U * self.L / self.nu

    @property
    def decay_rate(self) -> float:
        """Linear decay coefficient (sqrt(2)/2) / tau of the k equation."""
        return SQRT2 / (2.0 * self.tau)


@dataclass(frozen=True)
class KState:
    k: float
    time: float

    def __post_init__(self):
        if not self.k >= 0:
            raise ValueError(f"k must be nonnegative, got {self.k}")


def damping_function(params: ModelParams, y) -> np.ndarray:
    """mu(y) for the configured selector (y is clipped at zero)."""
    y = np.maximum(np.asarray(y, dtype=float), 0.0)
    if params.damping == "constant":
        return np.full_like(y, params.mu)
    if params.damping == "model_quadratic":
        return params.mu * (y / params.L) ** 2
    return SQRT2 * params.mu * (params.kappa * y / params.L) ** 2


def _wall_distance_q(space: FESpace, y: WallDistanceField | None, order=ASSEMBLY_ORDER) -> np.ndarray:
    shape = space.geometry(order).dx.shape
    if y is None:
        return np.zeros(shape)
    if y.mesh is not space.mesh:
        raise ValueError("wall distance was computed on a different mesh")
    if space.degree == 2:
        return np.maximum(space.scalar_at_quadrature(y.values, order), 0.0)
    return np.maximum(space.scalar_at_quadrature(y.values[: space.n_nodes], order), 0.0)


def damping_at_quadrature(space: FESpace, params: ModelParams, y: WallDistanceField | None,
                          order: int = ASSEMBLY_ORDER) -> np.ndarray:
    if params.damping == "constant":
        return np.full(space.geometry(order).dx.shape, params.mu)
    if y is None:
        raise ValueError(f"damping {params.damping!r} needs a wall distance field")
    return damping_function(params, _wall_distance_q(space, y, order))


def viscosity_field(space: FESpace, params: ModelParams, k: KState, y: WallDistanceField | None,
                    order: int = ASSEMBLY_ORDER) -> CoefficientField:
    """a(x) = nu + nu_T(x); nu_T vanishes before the activation time t_star."""
    if k.k < 0:
        raise ValueError("negative k")
    base = np.full(space.geometry(order).dx.shape, params.nu)
    if k.time < params.t_star - 1e-12 or k.k == 0.0:
        return CoefficientField(base)
    return CoefficientField(base + damping_at_quadrature(space, params, y, order) * k.k * params.tau)


def dissipation_coefficient(space: FESpace, v: np.ndarray, params: ModelParams,
                            y: WallDistanceField | None, form: str = "full") -> float:
    """eps = (tau / |Omega|) int mu(y) |grad v_h|^2, the factor multiplying k^n."""
    weight = damping_at_quadrature(space, params, y)
    return params.tau / space.area * weighted_dissipation(space, v, weight, form)


def _check_step(k_n: float, dt: float, eps: float):
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if k_n < 0:
        raise ValueError(f"k must be nonnegative, got {k_n}")
    if eps < 0:
        raise ValueError(f"dissipation coefficient must be nonnegative, got {eps}")


def k_update_be(k_n: float, dt: float, tau: float, eps: float) -> float:
    """Backward-Euler step: (k1 - k0)/dt + (sqrt2/2) k1/tau = eps k0."""
    _check_step(k_n, dt, eps)
    return k_n * (1.0 + dt * eps) / (1.0 + SQRT2 / 2.0 * dt / tau)


def k_update_exact(k_n: float, dt: float, tau: float, eps: float) -> float:
    """Exact solution of the linear k ODE over one step with eps frozen."""
    _check_step(k_n, dt, eps)
    return k_n * math.exp((eps - SQRT2 / (2.0 * tau)) * dt)


def k_initialize(mesh: Mesh, y: WallDistanceField, params: ModelParams,
                 space: FESpace | None = None) -> KState:
    """k(t_star) = (1/|Omega|) (1/(2 tau^2)) int l(x)^2 dx,
    l = min(kappa y, 0.082 Re^{-1/2})."""
    if not params.Re > 0:
        raise ValueError("Re must be positive")
    if space is None:
        space = FESpace(mesh, y.noslip_tags)
    yq = _wall_distance_q(space, y)
    cap = 0.082 / math.sqrt(params.Re)
    ell = np.minimum(params.kappa * yq, cap)
    integral = float(np.sum(space.geometry().dx * ell**2))
    return KState(integral / (space.area * 2.0 * params.tau**2), params.t_star)
