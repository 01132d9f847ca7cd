"""Linearly implicit Backward-Euler stepping of the coupled velocity/pressure/k system.

Each step solves one Taylor-Hood saddle-point system

    (M/dt + A(nu + nu_T^n) + N(v^n)) v^{n+1} - B^T q^{n+1} = F^{n+1} + M v^n / dt,
    B v^{n+1} = 0,

with the advecting velocity and the eddy viscosity lagged, then advances the
scalar k with the dissipation evaluated at v^{n+1}.
"""
from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import diagnostics
from .config import RunConfig
from .fem.assembly import (
    CoefficientField,
    assemble_diffusion,
    assemble_divergence,
    assemble_load,
    assemble_mass,
    assemble_trilinear,
    pressure_mean_vector,
)
from .fem.boundary import apply_dirichlet
from .fem.space import FESpace
from .mesh import (
    Mesh,
    WallDistanceField,
    build_structured_square,
    compute_wall_distance,
    load_offset_circles,
    offset_circles_distance,
    parse_gmsh,
)
from .model import (
    ModelParams,
    damping_at_quadrature,
    k_initialize,
    k_update_be,
    k_update_exact,
)

log = logging.getLogger(__name__)

SOLVE_TOL = 1e-10
# symmetric-mode ordering is several times faster on Taylor-Hood blocks;
# plain partial pivoting is the fallback when its residual check fails
LU_STRATEGIES = (
    dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01, options=dict(SymmetricMode=True)),
    dict(permc_spec="COLAMD"),
)


class SolveError(RuntimeError):
    pass


@dataclass
class State:
    v: np.ndarray
    p: np.ndarray
    k: float = 0.0
    t: float = 0.0
    n: int = 0
    k_active: bool = False

    @classmethod
    def zero(cls, space: FESpace) -> "State":
        return cls(np.zeros(space.n_v), np.zeros(space.n_p))


@dataclass
class StepReport:
    solve_residual: float
    energy_residual: float
    k_residual: float
    wall_time: float
    record: diagnostics.BudgetRecord


class SaddleSolution(NamedTuple):
    v: np.ndarray
    p: np.ndarray
    residual: float


def saddle_matrix(A: sp.spmatrix, B: sp.spmatrix, mean: np.ndarray | None) -> sp.csc_matrix:
    """[[A, B^T, 0], [B, 0, m], [0, m^T, 0]]; the last row/column pins mean(p) = 0."""
    if mean is None:
        return sp.bmat([[A, B.T], [B, None]], format="csc")
    m = sp.csr_matrix(np.asarray(mean, dtype=float)[:, None])
    return sp.bmat([[A, B.T, None], [B, None, m], [None, m.T, None]], format="csc")


def solve_saddle(A: sp.spmatrix, B: sp.spmatrix, rhs_v: np.ndarray, rhs_p: np.ndarray | None = None,
                 mean: np.ndarray | None = None, tol: float = SOLVE_TOL) -> SaddleSolution:
    """Solve [A B^T; B 0](v, p) = (rhs_v, rhs_p) by sparse LU.

    With ``mean`` (the vector of pressure basis integrals) the pressure is
    made mean-zero through one Lagrange multiplier. The relative residual of
    the augmented system is checked against ``tol`` after up to three
    refinement sweeps; failure raises :class:`SolveError`.
    """
    nv, np_ = A.shape[0], B.shape[0]
    if B.shape[1] != nv:
        raise ValueError("divergence block does not match the velocity block")
    rhs_p = np.zeros(np_) if rhs_p is None else np.asarray(rhs_p, dtype=float)
    rhs = np.concatenate([rhs_v, rhs_p, [0.0] if mean is not None else []])
    rnorm = np.linalg.norm(rhs)
    if rnorm == 0.0:
        return SaddleSolution(np.zeros(nv), np.zeros(np_), 0.0)
    K = saddle_matrix(A, B, mean)
    res, x, errors = math.inf, None, []
    for options in LU_STRATEGIES:
        try:
            lu = spla.splu(K, **options)
        except RuntimeError as exc:
            errors.append(str(exc))
            continue
        x = lu.solve(rhs)
        res = np.linalg.norm(K @ x - rhs) / rnorm
        for _ in range(3):
            if res <= tol or not np.isfinite(res):
                break
            x = x + lu.solve(rhs - K @ x)
            res = np.linalg.norm(K @ x - rhs) / rnorm
        if np.all(np.isfinite(x)) and res <= tol:
            return SaddleSolution(x[:nv], x[nv : nv + np_], float(res))
    if x is None:
        raise SolveError(f"factorization failed: {'; '.join(errors)}")
    raise SolveError(f"saddle-point residual {res:.3e} above tolerance {tol:.1e}")


# ----------------------------------------------------------------- forcing


def offset_circles_force(x, y, t):
    """(4x min(t,1)(1 - x^2 - y^2), -4y min(t,1)(1 - x^2 - y^2))."""
    s = 4.0 * min(t, 1.0) * (1.0 - x * x - y * y)
    return s * x, -s * y


def offset_circles_rotational_force(x, y, t):
    """Counterclockwise variant (-4y, 4x) min(t,1)(1 - x^2 - y^2)."""
    s = 4.0 * min(t, 1.0) * (1.0 - x * x - y * y)
    return -s * y, s * x


FORCINGS: dict[str, Callable | None] = {
    "offset_circles": offset_circles_force,
    "offset_circles_rotational": offset_circles_rotational_force,
    "zero": None,
}


# ----------------------------------------------------------------- stepping


class TimeStepper:
    """Assembles the step-invariant operators once and advances states.

    Parameters
    ----------
    space : FESpace
    params : ModelParams
    dt : float
    forcing : callable ``f(x, y, t) -> (fx, fy)`` or None
    wall_distance : WallDistanceField, needed unless damping is "constant"
    k_mode : "be" or "exact"
    form : "full" or "symmetric" viscous term
    convection : include N(v^n); False gives the Stokes limit
    boundary : callable ``g(x, y, t) -> (g1, g2)`` for Dirichlet data (default 0)
    diagnostics_stride : compute the energy identity every this many steps
    """

    def __init__(self, space: FESpace, params: ModelParams, dt: float, forcing=None,
                 wall_distance: WallDistanceField | None = None, *, k_mode: str = "be",
                 form: str = "full", convection: bool = True, boundary=None,
                 diagnostics_stride: int = 1):
        if not dt > 0:
            raise ValueError(f"time step must be positive, got {dt}")
        if k_mode not in ("be", "exact"):
            raise ValueError(f"unknown k update {k_mode!r}")
        self.space, self.params, self.dt = space, params, float(dt)
        self.forcing, self.boundary = forcing, boundary
        self.k_mode, self.form, self.convection = k_mode, form, convection
        self.stride = max(int(diagnostics_stride), 1)
        self.wall_distance = wall_distance
        self.M = assemble_mass(space)
        self.A_unit = assemble_diffusion(space, 1.0, form)
        self.B = assemble_divergence(space)
        self.mean = pressure_mean_vector(space)
        # nu_T(x) = k * tau * mu(y): assemble the k-independent part once
        self.damping_q = None
        self.A_turb = None
        if params.damping == "constant" or wall_distance is not None:
            self.damping_q = damping_at_quadrature(space, params, wall_distance)
            self.A_turb = assemble_diffusion(space, CoefficientField(params.tau * self.damping_q), form)
        self.free = space.free_dofs
        self.B_free = self.B[:, self.free]

    def boundary_values(self, t: float) -> np.ndarray:
        d = self.space.dirichlet_dofs
        if self.boundary is None:
            return np.zeros(len(d))
        return self.space.interpolate(self.boundary, t)[d]

    def eddy_viscosity_q(self, state: State) -> np.ndarray | None:
        if not state.k_active or state.k == 0.0:
            return None
        if self.damping_q is None:
            raise ValueError(f"damping {self.params.damping!r} needs a wall distance field")
        return state.k * self.params.tau * self.damping_q

    def dissipation_coefficient(self, v: np.ndarray) -> float:
        from .fem.norms import weighted_dissipation

        return self.params.tau / self.space.area * weighted_dissipation(
            self.space, v, self.damping_q, self.form)

    def step(self, state: State) -> tuple[State, StepReport]:
        start = time.perf_counter()
        sp_, dt, params = self.space, self.dt, self.params
        n1 = state.n + 1
        t1 = n1 * dt
        k_on = state.k_active and state.k > 0.0
        V = self.M / dt + params.nu * self.A_unit
        if k_on:
            if self.A_turb is None:
                raise ValueError(f"damping {params.damping!r} needs a wall distance field")
            V = V + state.k * self.A_turb
        if self.convection:
            V = V + assemble_trilinear(sp_, state.v)
        rhs = assemble_load(sp_, self.forcing, t1) + self.M @ state.v / dt
        g = self.boundary_values(t1)
        red = apply_dirichlet(V, rhs, sp_.dirichlet_dofs, g, admissible=sp_.dirichlet_dofs)
        rhs_p = -(self.B[:, sp_.dirichlet_dofs] @ g) if np.any(g) else None
        sol = solve_saddle(red.matrix, self.B_free, red.rhs, rhs_p, mean=self.mean)
        v1 = red.extend(sol.v)
        q1 = -sol.p  # the momentum equation carries -(div w, q)

        k1, eps, kres = state.k, math.nan, math.nan
        if state.k_active:
            eps = self.dissipation_coefficient(v1) if self.damping_q is not None else 0.0
            update = k_update_be if self.k_mode == "be" else k_update_exact
            k1 = update(state.k, dt, params.tau, eps)
            kres = diagnostics.k_residual(state.k, k1, dt, params.tau, eps)

        if n1 % self.stride == 0:
            record = diagnostics.budget_record(sp_, state.v, v1, dt, params.nu,
                                               self.eddy_viscosity_q(state), self.forcing, t1, n1,
                                               self.form)
        else:
            record = diagnostics.BudgetRecord(n=n1, t=t1, dt=dt)
        record.k, record.k_prev, record.eps, record.k_residual = k1, state.k, eps, kres
        record.solve_residual = sol.residual
        new = State(v1, q1, k1, t1, n1, state.k_active)
        record.wall_time = time.perf_counter() - start
        report = StepReport(sol.residual, record.energy_residual, kres, record.wall_time, record)
        return new, report


def step(state: State, dt: float, params: ModelParams, space: FESpace,
         y: WallDistanceField | None = None, forcing=None, **options) -> tuple[State, StepReport]:
    """One Backward-Euler step; builds a throwaway :class:`TimeStepper`."""
    return TimeStepper(space, params, dt, forcing, y, **options).step(state)


# ----------------------------------------------------------------- transient runs


@dataclass
class Problem:
    mesh: Mesh
    space: FESpace
    params: ModelParams
    wall_distance: WallDistanceField | None
    forcing: Callable | None
    fingerprint: str


def mesh_fingerprint(mesh: Mesh) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices).tobytes())
    h.update(np.ascontiguousarray(mesh.triangles).tobytes())
    return h.hexdigest()[:16]


def build_mesh(config: RunConfig, base_dir: str | Path | None = None) -> Mesh:
    if config.mesh_source == "square":
        return build_structured_square(config.square_n)
    if config.mesh_source == "offset_circles":
        return load_offset_circles(config.lc)
    path = Path(config.mesh_file)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    return parse_gmsh(path)


def build_problem(config: RunConfig, base_dir=None, mesh: Mesh | None = None) -> Problem:
    mesh = mesh or build_mesh(config, base_dir)
    space = FESpace(mesh, config.noslip_tags)
    analytic = config.wall_distance == "analytic" or (
        config.wall_distance == "auto" and config.mesh_source == "offset_circles")
    y = compute_wall_distance(mesh, config.noslip_tags, offset_circles_distance if analytic else None)
    return Problem(mesh, space, config.params(), y, FORCINGS[config.forcing], mesh_fingerprint(mesh))


@dataclass
class RunResult:
    final: State
    records: list[diagnostics.BudgetRecord]
    k_init: float | None
    poincare: float
    out_dir: Path | None
    states: list[State] = field(default_factory=list)


def activation_step(t_star: float, dt: float) -> int:
    """First step index n with n * dt >= t_star."""
    return int(math.ceil(t_star / dt - 1e-9))


def run_meta(config: RunConfig, problem: Problem, poincare: float) -> dict:
    return {
        "area": repr(problem.mesh.domain_area), "nu": repr(config.nu), "tau": repr(config.tau),
        "poincare": repr(poincare), "dt": repr(config.dt), "k_update": config.k_update,
        "viscous_form": config.viscous_form, "damping": config.damping, "mesh": problem.mesh.name,
        "mesh_fingerprint": problem.fingerprint, "h_max": repr(problem.mesh.h_max),
        "size_ratio": repr(problem.mesh.size_ratio),
    }


def run_transient(config: RunConfig, out_dir: str | Path | None = None, *,
                  recorder: Callable[[State], None] | None = None,
                  problem: Problem | None = None, base_dir=None,
                  keep_states: bool = False, stop_at: int | None = None) -> RunResult:
    """Spin up with plain NSE until t_star, initialize k, then run coupled to t_end.

    Writes ``stats.csv``, optional VTK snapshots and ``final_state.npz`` into
    ``out_dir`` (nothing is written when it is None). ``stop_at`` ends the run
    early at that step index, e.g. to produce restart files.
    """
    from . import io as rio

    config.validate(base_dir)
    problem = problem or build_problem(config, base_dir)
    space, params = problem.space, problem.params
    stepper = TimeStepper(space, params, config.dt, problem.forcing, problem.wall_distance,
                          k_mode=config.k_update, form=config.viscous_form,
                          diagnostics_stride=config.diagnostics_stride)
    poincare = diagnostics.poincare_constant(space, config.viscous_form)
    n_end = config.n_steps if stop_at is None else min(stop_at, config.n_steps)
    n_star = activation_step(config.t_star, config.dt)
    k_init_value = None

    def maybe_activate(state: State, record: diagnostics.BudgetRecord):
        nonlocal k_init_value
        if not state.k_active and state.n >= n_star:
            kstate = k_initialize(problem.mesh, problem.wall_distance, params, space)
            k_init_value = kstate.k
            state.k, state.k_active = kstate.k, True
            record.k, record.k_injection = kstate.k, kstate.k
            log.info("k initialized to %.6e at t=%.6g", kstate.k, state.t)

    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if config.restart:
        restart_path = Path(config.restart)
        if base_dir is not None and not restart_path.is_absolute():
            restart_path = Path(base_dir) / restart_path
        state, fp, rdt = rio.load_state(restart_path)
        if fp != problem.fingerprint:
            raise ValueError("restart file was written for a different mesh")
        if abs(rdt - config.dt) > 1e-15:
            raise ValueError("restart file was written with a different dt")
        records = []
    else:
        state = State.zero(space)
        rec0 = diagnostics.initial_record(space, state.v, problem.forcing, 0.0,
                                          config.viscous_form, params.nu)
        maybe_activate(state, rec0)
        records = [rec0]
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        writer = rio.StatsWriter(out / "stats.csv", run_meta(config, problem, poincare))
        for rec in records:
            writer.write(rec)
    states = [state] if keep_states else []
    if recorder:
        recorder(state)

    def snapshot(s: State):
        if out is None:
            return
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        fd = {"time": s.t}
        if s.k_active:
            fd["k"] = s.k
        rio.write_vtk(snap_dir / f"snapshot_{s.n:06d}.vtk", space, s.v, s.p,
                      {"wall_distance": problem.wall_distance.values}, fd)

    if config.snapshot_every and state.n % config.snapshot_every == 0:
        snapshot(state)
    try:
        while state.n < n_end:
            new, report = stepper.step(state)
            maybe_activate(new, report.record)
            records.append(report.record)
            if writer:
                writer.write(report.record)
            state = new
            if keep_states:
                states.append(state)
            if recorder:
                recorder(state)
            if config.snapshot_every and state.n % config.snapshot_every == 0:
                snapshot(state)
    except Exception:
        if out is not None:
            rio.save_state(out / "final_state.npz", state, problem.fingerprint, config.dt)
            log.error("step %d failed; last good state saved", state.n + 1)
        raise
    finally:
        if writer:
            writer.close()
    if out is not None:
        rio.save_state(out / "final_state.npz", state, problem.fingerprint, config.dt)
    return RunResult(state, records, k_init_value, poincare, out, states)
