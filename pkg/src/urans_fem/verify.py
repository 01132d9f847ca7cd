"""Convergence-rate machinery.

* :class:`RateTable` and the two order estimators (successive errors, and the
  ratio of successive differences ``(u_h - u_ah) / (u_ah - u_aah) = a^-p``).
* :func:`error_norms` over solution streams and the self-convergence studies
  in time (:func:`time_rate_study`) and space (:func:`space_rate_study`).
* Manufactured solutions for the Navier-Stokes core (:func:`mms_nse`).
* Closed-form oracles for the scalar k updates (:func:`ode_oracle_suite`).
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import sympy

from .config import ConfigError, RunConfig, StudyConfig, replace
from .fem.assembly import assemble_diffusion, assemble_divergence, assemble_load, assemble_trilinear, \
    pressure_mean_vector
from .fem.boundary import apply_dirichlet
from .fem.norms import error_norms_exact, l2_norm_sq, weighted_dissipation
from .fem.space import FESpace
from .fem.transfer import transfer_matrix
from .mesh import build_structured_square
from .model import SQRT2, ModelParams, k_update_be, k_update_exact
from .solver import State, TimeStepper, build_problem, run_transient, solve_saddle

log = logging.getLogger(__name__)

PAPER_SCALE_LC = 1 / 30  # finer meshes need an explicit opt-in
TIME_KEY_SCALE = 1e9  # times are matched on a nanosecond-resolution integer grid

# ----------------------------------------------------------------- rate tables


def compute_rates(resolutions: Sequence[float], errors: Sequence[float]) -> list[float]:
    """rate_i = log(e_{i-1}/e_i) / log(r_{i-1}/r_i); the first entry is nan."""
    if len(resolutions) != len(errors):
        raise ValueError("resolutions and errors differ in length")
    rates = [math.nan]
    for i in range(1, len(errors)):
        e0, e1 = errors[i - 1], errors[i]
        if e0 > 0 and e1 > 0:
            rates.append(math.log(e0 / e1) / math.log(resolutions[i - 1] / resolutions[i]))
        else:
            rates.append(math.nan)
    return rates


def ratio_rate(d_coarse: float, d_fine: float, alpha: float) -> float:
    """Order p from the ratio of successive differences, ratio = alpha^-p."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if not (d_coarse > 0 and d_fine > 0):
        return math.nan
    return -math.log(d_coarse / d_fine) / math.log(alpha)


@dataclass
class RateTable:
    """Rows of (resolution, norms, rates).

    ``sqrt_rate`` lists columns holding squared quantities (time-integrated
    H1 errors); their rates are taken on the square root so that every column
    reports the order of a norm.
    """

    resolution_name: str
    columns: list[str]
    resolutions: list[float] = field(default_factory=list)
    values: dict[str, list[float]] = field(default_factory=dict)
    rates: dict[str, list[float]] = field(default_factory=dict)
    sqrt_rate: tuple[str, ...] = ()
    title: str = ""

    @classmethod
    def from_errors(cls, resolution_name, resolutions, values: Mapping[str, Sequence[float]],
                    sqrt_rate=(), title="") -> "RateTable":
        table = cls(resolution_name, list(values), list(map(float, resolutions)),
                    {k: list(map(float, v)) for k, v in values.items()}, {}, tuple(sqrt_rate), title)
        for name, vals in table.values.items():
            norm = np.sqrt(vals) if name in table.sqrt_rate else np.asarray(vals)
            table.rates[name] = compute_rates(table.resolutions, list(norm))
        return table

    @classmethod
    def from_differences(cls, resolution_name, resolutions, values: Mapping[str, Sequence[float]],
                         alpha: float, sqrt_rate=(), title="") -> "RateTable":
        """Rows hold differences between consecutive levels; rates via :func:`ratio_rate`."""
        table = cls(resolution_name, list(values), list(map(float, resolutions)),
                    {k: list(map(float, v)) for k, v in values.items()}, {}, tuple(sqrt_rate), title)
        for name, vals in table.values.items():
            norm = np.sqrt(vals) if name in table.sqrt_rate else np.asarray(vals)
            table.rates[name] = [math.nan] + [ratio_rate(norm[i - 1], norm[i], alpha)
                                              for i in range(1, len(norm))]
        return table

    def __len__(self):
        return len(self.resolutions)

    def rows(self) -> list[dict]:
        out = []
        for i, r in enumerate(self.resolutions):
            row = {self.resolution_name: r}
            for c in self.columns:
                row[c] = self.values[c][i]
                row[f"rate_{c}"] = self.rates[c][i]
            out.append(row)
        return out

    def to_csv(self, path: str | Path) -> None:
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else [self.resolution_name])
            writer.writeheader()
            for row in rows:
                writer.writerow({k: f"{v:.17g}" for k, v in row.items()})

    def to_text(self) -> str:
        head = [self.resolution_name] + [h for c in self.columns for h in (c, "rate")]
        body = []
        for row in self.rows():
            cells = [f"{row[self.resolution_name]:.6g}"]
            for c in self.columns:
                rate = row[f"rate_{c}"]
                cells += [f"{row[c]:.4e}", "-" if math.isnan(rate) else f"{rate:.2f}"]
            body.append(cells)
        widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
        lines = [self.title] if self.title else []
        lines.append("  ".join(h.rjust(w) for h, w in zip(head, widths)))
        lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in body]
        return "\n".join(lines) + "\n"

    def write(self, directory: str | Path, stem: str) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path, txt_path = directory / f"{stem}.csv", directory / f"{stem}.txt"
        self.to_csv(csv_path)
        txt_path.write_text(self.to_text())
        return csv_path, txt_path


# ----------------------------------------------------------------- stream norms


def time_key(t: float) -> int:
    return int(round(t * TIME_KEY_SCALE))


Stream = Mapping[int, np.ndarray]  # time_key(t) -> velocity coefficients


def error_norms(space: FESpace, stream_h: Stream, stream_ref: Stream, t0: float, t1: float,
                transfer=None) -> tuple[float, float]:
    """(max_n ||u_ref - u_h||, sum_n dt ||grad(u_ref - u_h)||^2) over the window.

    The maximum runs over coincident times in [t0, t1]; the rectangle rule
    sums over coincident times in (t0, t1] with the spacing of the coincident
    grid. ``transfer`` maps ``stream_h`` vectors into ``space`` (the space of
    ``stream_ref``) when they live on a coarser mesh.
    """
    k0, k1 = time_key(t0), time_key(t1)
    common = sorted(k for k in stream_h if k in stream_ref and k0 <= k <= k1)
    if not common:
        raise ValueError("streams share no time points in the window")
    if len(common) > 1:
        spacing = min(b - a for a, b in zip(common[:-1], common[1:]))
    else:
        spacing = common[0] - k0
    max_l2, h1_sq = 0.0, 0.0
    for key in common:
        vh = stream_h[key] if transfer is None else transfer @ stream_h[key]
        e = stream_ref[key] - vh
        max_l2 = max(max_l2, math.sqrt(max(l2_norm_sq(space, e), 0.0)))
        if key > k0:
            h1_sq += spacing / TIME_KEY_SCALE * weighted_dissipation(space, e)
    return max_l2, h1_sq


class StreamRecorder:
    """Keeps the velocity of every state whose time lies in the window."""

    def __init__(self, t0: float, t1: float):
        self.k0, self.k1 = time_key(t0), time_key(t1)
        self.stream: dict[int, np.ndarray] = {}

    def __call__(self, state: State):
        key = time_key(state.t)
        if self.k0 <= key <= self.k1:
            self.stream[key] = state.v.copy()


# ----------------------------------------------------------------- self-convergence studies


def require_paper_scale(lc_finest: float, paper_scale: bool) -> None:
    if lc_finest < PAPER_SCALE_LC and not paper_scale:
        raise ConfigError({"lc": f"mesh size {lc_finest:.4g} is paper scale (below 1/30); "
                                 f"pass --paper-scale to run it"})


def _run_window(config: RunConfig, t0: float, t1: float, out_dir: Path | None):
    cfg = replace(config, t_end=math.ceil(t1 / config.dt - 1e-9) * config.dt)
    rec = StreamRecorder(t0, t1)
    run_transient(cfg, out_dir, recorder=rec)
    return rec.stream


def _run_job(args):
    config, t0, t1, out_dir = args
    return _run_window(config, t0, t1, out_dir)


def _map(jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


def time_rate_study(study: StudyConfig, out_dir: str | Path | None = None,
                    paper_scale: bool = False) -> RateTable:
    """Errors against a small-dt reference on a fixed mesh, one run per dt."""
    study.validate()
    run = study.run
    if run.mesh_source == "offset_circles":
        require_paper_scale(run.lc, paper_scale)
    out = Path(out_dir) if out_dir is not None else None
    dts = list(study.dt_list)
    jobs = [(replace(run, dt=dt), study.window_start, study.window_end,
             out / f"dt_{dt:g}" if out else None) for dt in dts + [study.dt_ref]]
    *streams, ref = _map(jobs, study.workers)
    space = build_problem(run).space
    l2, h1 = [], []
    for stream in streams:
        a, b = error_norms(space, stream, ref, study.window_start, study.window_end)
        l2.append(a)
        h1.append(b)
    table = RateTable.from_errors("dt", dts, {"max_l2": l2, "int_h1_sq": h1}, sqrt_rate=("int_h1_sq",),
                                  title="Errors and convergence rates in time")
    if out:
        table.write(out, "time_rates")
    return table


def space_levels(h0: float, alpha: float, levels: int) -> list[float]:
    return [h0 * alpha**i for i in range(levels)]


def space_rate_study(study: StudyConfig, out_dir: str | Path | None = None,
                     paper_scale: bool = False) -> RateTable:
    """Differences between solutions at mesh sizes h0 alpha^i on the finer mesh."""
    study.validate()
    run = study.run
    if run.mesh_source != "offset_circles":
        raise ConfigError({"mesh_source": "space study needs the offset_circles generator"})
    lcs = space_levels(study.h0, study.alpha, study.levels)
    require_paper_scale(lcs[-1], paper_scale)
    out = Path(out_dir) if out_dir is not None else None
    jobs = [(replace(run, lc=lc), study.window_start, study.window_end,
             out / f"level_{i}" if out else None) for i, lc in enumerate(lcs)]
    streams = _map(jobs, study.workers)
    spaces = [build_problem(replace(run, lc=lc)).space for lc in lcs]
    l2, h1 = [], []
    for i in range(len(lcs) - 1):
        T = transfer_matrix(spaces[i], spaces[i + 1])
        a, b = error_norms(spaces[i + 1], streams[i], streams[i + 1], study.window_start,
                           study.window_end, transfer=T)
        l2.append(a)
        h1.append(b)
    table = RateTable.from_differences("h", lcs[:-1], {"max_l2": l2, "int_h1_sq": h1}, study.alpha,
                                       sqrt_rate=("int_h1_sq",),
                                       title="Differences and convergence rates in space")
    if out:
        table.write(out, "space_rates")
    return table


def synthetic_time_table(order: float, dts=(8e-3, 4e-3, 2e-3), C: float = 3.0) -> RateTable:
    """Exact power-law errors e = C dt^p pushed through the rate formula."""
    return RateTable.from_errors("dt", dts, {"max_l2": [C * d**order for d in dts],
                                             "int_h1_sq": [(C * d**order) ** 2 for d in dts]},
                                 sqrt_rate=("int_h1_sq",), title=f"synthetic order {order:g}")


def synthetic_space_table(order: float, h0=1 / 60, alpha=0.75, levels=5, C: float = 2.0,
                          offset: float = 0.0) -> RateTable:
    """u_h = offset + C h^p at h0 alpha^i, differenced as in the space study."""
    hs = space_levels(h0, alpha, levels)
    u = [offset + C * h**order for h in hs]
    d = [abs(u[i] - u[i + 1]) for i in range(levels - 1)]
    return RateTable.from_differences("h", hs[:-1], {"max_l2": d, "int_h1_sq": [x * x for x in d]},
                                      alpha, sqrt_rate=("int_h1_sq",),
                                      title=f"synthetic order {order:g}")


# ----------------------------------------------------------------- manufactured solutions

X, Y, T = sympy.symbols("x y t", real=True)


def _vectorize(expr, args=(X, Y, T)):
    fn = sympy.lambdify(args, expr, "numpy")

    def wrapped(x, y, t=0.0):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(fn(x, np.asarray(y, dtype=float), t), dtype=float),
                               np.broadcast(x, y).shape)

    return wrapped


@dataclass
class ManufacturedSolution:
    """Closed forms of u, grad u, p and the compatible forcing.

    Callables take ``(x, y, t)``. The forcing is
    f = du/dt + (u . grad) u - nu lap u + grad p.
    """

    u_expr: tuple
    p_expr: object
    nu: float
    convection: bool = True

    def __post_init__(self):
        u1, u2 = self.u_expr
        p = self.p_expr
        self._u = [_vectorize(u1), _vectorize(u2)]
        self._grad = [[_vectorize(sympy.diff(c, v)) for v in (X, Y)] for c in (u1, u2)]
        self._p = _vectorize(p)
        f = []
        for c, pc in ((u1, sympy.diff(p, X)), (u2, sympy.diff(p, Y))):
            expr = sympy.diff(c, T) - self.nu * (sympy.diff(c, X, 2) + sympy.diff(c, Y, 2)) + pc
            if self.convection:
                expr += u1 * sympy.diff(c, X) + u2 * sympy.diff(c, Y)
            f.append(_vectorize(sympy.simplify(expr)))
        self._f = f
        self.divergence = _vectorize(sympy.diff(u1, X) + sympy.diff(u2, Y))

    def u(self, x, y, t=0.0):
        return self._u[0](x, y, t), self._u[1](x, y, t)

    def grad_u(self, x, y, t=0.0):
        return [[g(x, y, t) for g in row] for row in self._grad]

    def p(self, x, y, t=0.0):
        return self._p(x, y, t)

    def forcing(self, x, y, t=0.0):
        return self._f[0](x, y, t), self._f[1](x, y, t)


def mms_nse(u_exact, p_exact, params: ModelParams | float, *, convection=True,
            samples: int = 64, seed: int = 0) -> ManufacturedSolution:
    """Forcing and boundary data for a manufactured (u, p) in sympy form.

    ``u_exact`` is a pair of expressions in the symbols ``X, Y, T`` of this
    module. Raises ``ValueError`` if the divergence exceeds 1e-10 at random
    sample points of the unit square and time interval [0, 1].
    """
    nu = params.nu if isinstance(params, ModelParams) else float(params)
    ms = ManufacturedSolution(tuple(sympy.sympify(e) for e in u_exact), sympy.sympify(p_exact), nu,
                              convection)
    rng = np.random.default_rng(seed)
    x, y, t = rng.random((3, samples))
    div = np.array([ms.divergence(x[i], y[i], t[i]) for i in range(samples)], dtype=float)
    if np.max(np.abs(div)) > 1e-10:
        raise ValueError(f"manufactured velocity is not divergence free (max |div u| = "
                         f"{np.max(np.abs(div)):.2e})")
    return ms


def stream_function_solution(g=1):
    """u = curl of g(t) sin^2(pi x) sin^2(pi y); p = g(t) cos(pi x) cos(pi y)."""
    g = sympy.sympify(g)
    psi = g * sympy.sin(sympy.pi * X) ** 2 * sympy.sin(sympy.pi * Y) ** 2
    return (sympy.diff(psi, Y), -sympy.diff(psi, X)), g * sympy.cos(sympy.pi * X) * sympy.cos(sympy.pi * Y)


def polynomial_solution(g=1):
    """u = g(t) (y^2, x^2), p = g(t) (x - 1/2); P2-P1 reproduces it at every t.

    Its discrete error is pure time-discretization error, which isolates the
    temporal order from spatial truncation.
    """
    g = sympy.sympify(g)
    return (g * Y**2, g * X**2), g * (X - sympy.Rational(1, 2))


def steady_solve(space: FESpace, nu: float, forcing=None, boundary=None, *, convection=True,
                 tol: float = 1e-12, max_iter: int = 60) -> tuple[np.ndarray, np.ndarray, int]:
    """Picard iteration for the steady problem with the same discrete forms.

    Returns ``(v, q, iterations)`` with q the mean-zero pressure.
    """
    A = nu * assemble_diffusion(space, 1.0)
    B = assemble_divergence(space)
    m = pressure_mean_vector(space)
    F = assemble_load(space, forcing, 0.0)
    d = space.dirichlet_dofs
    g = np.zeros(len(d)) if boundary is None else space.interpolate(boundary, 0.0)[d]
    rhs_p = -(B[:, d] @ g)
    v = np.zeros(space.n_v)
    v[d] = g
    for it in range(1, max_iter + 1):
        V = A + assemble_trilinear(space, v) if convection else A
        red = apply_dirichlet(V, F, d, g, admissible=d)
        sol = solve_saddle(red.matrix, B[:, red.free], red.rhs, rhs_p, mean=m)
        v_new = red.extend(sol.v)
        change = np.linalg.norm(v_new - v)
        v = v_new
        if not convection or change <= tol * max(np.linalg.norm(v), 1.0):
            return v, -sol.p, it
    raise RuntimeError(f"Picard iteration did not converge in {max_iter} iterations")


def mms_steady_errors(ms: ManufacturedSolution, n: int, order: int = 6) -> tuple[float, float]:
    """(L2, H1-seminorm) errors of the steady discrete solution on the n x n square."""
    space = FESpace(build_structured_square(n))
    v, _, _ = steady_solve(space, ms.nu, ms.forcing, ms.u, convection=ms.convection)
    return error_norms_exact(space, v, ms.u, ms.grad_u, 0.0, order)


def mms_spatial_study(ns: Sequence[int] = (4, 8, 16, 32), ms: ManufacturedSolution | None = None
                      ) -> RateTable:
    ms = ms or mms_nse(*stream_function_solution(), 1.0)
    errs = [mms_steady_errors(ms, n) for n in ns]
    return RateTable.from_errors("h", [1.0 / n for n in ns],
                                 {"l2": [e[0] for e in errs], "h1": [e[1] for e in errs]},
                                 title="Manufactured solution, spatial rates")


def mms_transient_errors(ms: ManufacturedSolution, n: int, dt: float, t_end: float,
                         order: int = 6) -> tuple[float, float]:
    """(max_n L2 error, sum_n dt H1-seminorm error squared) of a Navier-Stokes run."""
    space = FESpace(build_structured_square(n))
    params = ModelParams(nu=ms.nu)
    stepper = TimeStepper(space, params, dt, ms.forcing, None, convection=ms.convection,
                          boundary=ms.u, diagnostics_stride=10**9)
    state = State(space.interpolate(ms.u, 0.0), np.zeros(space.n_p))
    steps = int(round(t_end / dt))
    max_l2, h1_sq = 0.0, 0.0
    for _ in range(steps):
        state, _ = stepper.step(state)
        l2, h1 = error_norms_exact(space, state.v, ms.u, ms.grad_u, state.t, order)
        max_l2 = max(max_l2, l2)
        h1_sq += dt * h1**2
    return max_l2, h1_sq


def mms_temporal_study(dts: Sequence[float] = (0.1, 0.05, 0.025, 0.0125), n: int = 16,
                       t_end: float = 1.0, ms: ManufacturedSolution | None = None) -> RateTable:
    ms = ms or mms_nse(*polynomial_solution(sympy.exp(T)), 1.0)
    errs = [mms_transient_errors(ms, n, dt, t_end) for dt in dts]
    return RateTable.from_errors("dt", list(dts), {"max_l2": [e[0] for e in errs],
                                                   "int_h1_sq": [e[1] for e in errs]},
                                 sqrt_rate=("int_h1_sq",), title="Manufactured solution, temporal rates")


def mms_polynomial_reproduction(n: int = 3, nu: float = 1.0) -> dict[str, float]:
    """Steady Stokes with u = (y^2, x^2), p = x - 1/2: reproduced exactly by P2-P1."""
    ms = mms_nse(*polynomial_solution(), nu, convection=False)
    space = FESpace(build_structured_square(n))
    v, q, _ = steady_solve(space, nu, ms.forcing, ms.u, convection=False)
    l2, h1 = error_norms_exact(space, v, ms.u, ms.grad_u, 0.0)
    p_err = float(np.max(np.abs(q - space.interpolate_pressure(ms.p, 0.0))))
    return {"l2": l2, "h1": h1, "p_max": p_err}


# ----------------------------------------------------------------- ODE oracles


@dataclass
class OracleResult:
    name: str
    passed: bool
    value: float
    detail: str


def _be_path(k0, dt, tau, eps_values):
    k = k0
    for eps in eps_values:
        k = k_update_be(k, dt, tau, eps)
    return k


def ode_oracle_suite(tau: float = 0.1, k0: float = 1.0) -> list[OracleResult]:
    """k updates against closed-form solutions of dk/dt = (eps - sqrt2/(2 tau)) k."""
    out = []
    a = SQRT2 / (2.0 * tau)

    # homogeneous decay with the exact update
    dt, n = 0.01, 150
    k = k0
    for _ in range(n):
        k = k_update_exact(k, dt, tau, 0.0)
    exact = k0 * math.exp(-a * n * dt)
    err = abs(k - exact) / exact
    out.append(OracleResult("exact_decay", err <= 1e-12, err,
                            f"eps=0, {n} steps: relative error {err:.2e} (tol 1e-12)"))

    # global order of BE for constant eps
    eps, t_end = 3.0, 1.0
    dts = [t_end / 2**j for j in range(6, 11)]
    exact = k0 * math.exp((eps - a) * t_end)
    errors = [abs(_be_path(k0, d, tau, [eps] * int(round(t_end / d))) - exact) for d in dts]
    rates = compute_rates(dts, errors)[1:]
    worst = max(abs(r - 1.0) for r in rates)
    out.append(OracleResult("be_global_order", worst <= 0.1, rates[-1],
                            "observed orders " + ", ".join(f"{r:.3f}" for r in rates)))

    # exact update along a piecewise-constant eps path
    rng = np.random.default_rng(1)
    dt = 0.02
    eps_path = rng.uniform(0.0, 2 * a, size=200)
    k = k0
    for e in eps_path:
        k = k_update_exact(k, dt, tau, e)
    closed = k0 * math.exp(float(np.sum((eps_path - a) * dt)))
    err = abs(k - closed) / closed
    out.append(OracleResult("exact_piecewise", err <= 1e-12, err,
                            f"piecewise-constant eps: relative error {err:.2e} (tol 1e-12)"))

    # BE and exact agree to second order over one step
    dts = [0.1 / 2**j for j in range(6)]
    local = [abs(k_update_be(k0, d, tau, eps) - k_update_exact(k0, d, tau, eps)) for d in dts]
    order = compute_rates(dts, local)[-1]
    out.append(OracleResult("one_step_consistency", order >= 1.9, order,
                            f"local difference order {order:.3f} (>= 1.9)"))
    return out
