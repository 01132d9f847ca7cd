import numpy as np
import pytest

from urans_fem import io as rio
from urans_fem.config import RunConfig
from urans_fem.fem import FESpace, assemble_diffusion, assemble_divergence, assemble_load, assemble_mass
from urans_fem.fem.assembly import pressure_mean_vector
from urans_fem.mesh import build_structured_square, compute_wall_distance
from urans_fem.model import ModelParams
from urans_fem.solver import (
    SolveError,
    State,
    TimeStepper,
    activation_step,
    run_transient,
    solve_saddle,
    step,
)

SWIRL = lambda x, y, t: (np.sin(np.pi * y) * (1 + t), np.cos(np.pi * x) * x)


def _dense_saddle(A, B, m, rhs_v, rhs_p):
    nv, np_ = A.shape[0], B.shape[0]
    K = np.zeros((nv + np_ + 1, nv + np_ + 1))
    K[:nv, :nv] = A
    K[:nv, nv : nv + np_] = B.T
    K[nv : nv + np_, :nv] = B
    K[nv : nv + np_, -1] = m
    K[-1, nv : nv + np_] = m
    x = np.linalg.solve(K, np.concatenate([rhs_v, rhs_p, [0.0]]))
    return x[:nv], x[nv : nv + np_]


@pytest.fixture(scope="module")
def small():
    mesh = build_structured_square(2)
    space = FESpace(mesh)
    A = (assemble_diffusion(space, 1.0) + assemble_mass(space))[space.free_dofs][:, space.free_dofs]
    B = assemble_divergence(space)[:, space.free_dofs]
    return space, A, B, pressure_mean_vector(space)


def test_zero_rhs(small):
    space, A, B, m = small
    sol = solve_saddle(A, B, np.zeros(A.shape[0]), mean=m)
    assert not np.any(sol.v) and not np.any(sol.p)


def test_matches_dense_oracle(small, rng):
    space, A, B, m = small
    rhs = rng.standard_normal(A.shape[0])
    sol = solve_saddle(A, B, rhs, mean=m)
    v, p = _dense_saddle(A.toarray(), B.toarray(), m, rhs, np.zeros(B.shape[0]))
    assert np.allclose(sol.v, v, atol=1e-10)
    assert np.allclose(sol.p, p, atol=1e-10)
    assert np.abs(B @ sol.v).max() < 1e-10
    assert abs(m @ sol.p) <= 1e-10 * np.linalg.norm(sol.p)
    assert sol.residual <= 1e-10


def test_singular_system_reported(small):
    space, A, B, m = small
    with pytest.raises(SolveError):
        solve_saddle(0 * A, B, np.ones(A.shape[0]), mean=m)


def test_shape_mismatch(small):
    space, A, B, m = small
    with pytest.raises(ValueError):
        solve_saddle(A, B[:, :-1], np.ones(A.shape[0]))


def test_zero_is_fixed_point():
    space = FESpace(build_structured_square(3))
    state = State.zero(space)
    stepper = TimeStepper(space, ModelParams(), 0.1)
    for _ in range(3):
        state, report = stepper.step(state)
        assert not np.any(state.v) and not np.any(state.p) and state.k == 0
        assert report.energy_residual == 0.0


def test_stokes_step_matches_dense_oracle():
    space = FESpace(build_structured_square(2))
    params = ModelParams(nu=0.5)
    dt = 0.1
    v0 = np.zeros(space.n_v)
    v0[space.free_dofs] = 0.3
    new, _ = step(State(v0, np.zeros(space.n_p)), dt, params, space, forcing=SWIRL, convection=False)
    f = space.free_dofs
    M, A = assemble_mass(space).toarray(), assemble_diffusion(space, 1.0).toarray()
    K = (M / dt + params.nu * A)[np.ix_(f, f)]
    rhs = (assemble_load(space, SWIRL, dt) + M @ v0 / dt)[f]
    v, p = _dense_saddle(K, assemble_divergence(space).toarray()[:, f], pressure_mean_vector(space), rhs,
                         np.zeros(space.n_p))
    assert np.allclose(new.v[f], v, atol=1e-10)
    assert np.allclose(new.p, -p, atol=1e-10)  # physical pressure sign


def test_step_invariants_and_energy_identity():
    mesh = build_structured_square(4)
    space = FESpace(mesh)
    y = compute_wall_distance(mesh, (1,))
    stepper = TimeStepper(space, ModelParams(nu=1e-3), 0.05, SWIRL, y)
    state = State.zero(space)
    state.k, state.k_active = 0.02, True
    m = pressure_mean_vector(space)
    for _ in range(5):
        state, report = stepper.step(state)
        assert not np.any(state.v[space.dirichlet_dofs])
        assert abs(m @ state.p) <= 1e-10 * np.linalg.norm(state.p)
        assert abs(report.energy_residual) <= 1e-9
        assert report.k_residual <= 1e-14
        assert state.k >= 0
        assert np.isfinite([report.solve_residual, report.wall_time]).all()


def test_nonpositive_dt():
    space = FESpace(build_structured_square(2))
    with pytest.raises(ValueError):
        TimeStepper(space, ModelParams(), 0.0)


def test_activation_step():
    assert activation_step(1.0, 5e-3) == 200
    assert activation_step(1.0, 3e-3) == 334
    assert activation_step(0.0, 0.1) == 0


def _square_config(tmp_path, **kw):
    base = dict(mesh_source="square", square_n=4, noslip_tags=[1], dt=0.05, t_end=0.5, t_star=0.2,
                nu=1e-3, output_dir=str(tmp_path))
    base.update(kw)
    return RunConfig(**base)


def test_pure_nse_run_before_activation(tmp_path):
    config = _square_config(tmp_path, t_end=0.3, t_star=1.0, snapshot_every=2)
    result = run_transient(config, tmp_path)
    assert result.k_init is None
    assert all(r.k == 0 for r in result.records)
    snaps = sorted((tmp_path / "snapshots").glob("*.vtk"))
    assert len(snaps) == 4
    assert all("k" not in rio.read_vtk_field_data(s) for s in snaps)


def test_activation_and_snapshot_k(tmp_path):
    config = _square_config(tmp_path, snapshot_every=4)
    result = run_transient(config, tmp_path)
    rows, _ = rio.read_stats(tmp_path / "stats.csv")
    first = next(r for r in rows if r["k"] > 0)
    assert first["t"] == pytest.approx(0.2)
    assert first["k"] == result.k_init == first["k_injection"]
    data = rio.read_vtk_field_data(tmp_path / "snapshots" / "snapshot_000008.vtk")
    assert data["time"] == pytest.approx(0.4) and data["k"] > 0


def test_activation_at_time_zero(tmp_path):
    result = run_transient(_square_config(tmp_path, t_star=0.0, t_end=0.1), tmp_path)
    assert result.records[0].k == result.k_init > 0


def test_restart_is_bitwise(tmp_path):
    full = run_transient(_square_config(tmp_path / "full"), tmp_path / "full")
    run_transient(_square_config(tmp_path / "a"), tmp_path / "a", stop_at=3)
    cont = _square_config(tmp_path / "b", restart=str(tmp_path / "a" / "final_state.npz"))
    run_transient(cont, tmp_path / "b")
    tail, _ = rio.read_stats(tmp_path / "b" / "stats.csv")
    ref, _ = rio.read_stats(tmp_path / "full" / "stats.csv")
    skip = {"wall_time"}
    assert [r["n"] for r in tail] == list(range(4, 11))
    for a, b in zip(tail, ref[4:]):
        assert {k: v for k, v in a.items() if k not in skip} == pytest.approx(
            {k: v for k, v in b.items() if k not in skip}, rel=0, abs=0, nan_ok=True)
    final = np.load(tmp_path / "b" / "final_state.npz")
    assert np.array_equal(final["v"], full.final.v)


def test_restart_rejects_other_mesh(tmp_path):
    run_transient(_square_config(tmp_path / "a"), tmp_path / "a", stop_at=2)
    other = _square_config(tmp_path / "b", square_n=3, restart=str(tmp_path / "a" / "final_state.npz"))
    with pytest.raises(ValueError, match="different mesh"):
        run_transient(other, tmp_path / "b")


def test_deterministic(tmp_path):
    a = run_transient(_square_config(tmp_path / "a"), None)
    b = run_transient(_square_config(tmp_path / "b"), None)
    assert np.array_equal(a.final.v, b.final.v) and a.final.k == b.final.k


def test_failed_step_persists_last_state(tmp_path, monkeypatch):
    import urans_fem.solver as solver

    calls = {"n": 0}
    real = solver.solve_saddle

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 4:
            raise SolveError("injected failure")
        return real(*args, **kwargs)

    monkeypatch.setattr(solver, "solve_saddle", flaky)
    with pytest.raises(SolveError):
        run_transient(_square_config(tmp_path), tmp_path)
    state, _, _ = rio.load_state(tmp_path / "final_state.npz")
    assert state.n == 3
