import math

import numpy as np
import pytest
import sympy

from urans_fem.config import ConfigError, RunConfig, StudyConfig
from urans_fem.fem import FESpace
from urans_fem.mesh import build_structured_square
from urans_fem.verify import (
    RateTable,
    T,
    X,
    Y,
    compute_rates,
    error_norms,
    mms_nse,
    mms_polynomial_reproduction,
    mms_spatial_study,
    ode_oracle_suite,
    polynomial_solution,
    ratio_rate,
    require_paper_scale,
    space_levels,
    space_rate_study,
    stream_function_solution,
    synthetic_space_table,
    synthetic_time_table,
    time_key,
    time_rate_study,
)

# ------------------------------------------------------------------ rate formulas


def test_compute_rates_examples():
    assert compute_rates([1, 0.5], [1, 0.25])[1] == pytest.approx(2.0)
    r = compute_rates([1, 0.5, 0.25], [1, 0.5, 0.0])
    assert math.isnan(r[0]) and r[1] == pytest.approx(1.0) and math.isnan(r[2])
    with pytest.raises(ValueError):
        compute_rates([1, 2], [1])


def test_ratio_rate_examples():
    assert ratio_rate(1.0, 0.75**2, 0.75) == pytest.approx(2.0)
    assert math.isnan(ratio_rate(0.0, 1.0, 0.5))
    with pytest.raises(ValueError):
        ratio_rate(1.0, 0.5, 1.5)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_synthetic_time_rates_exact(order):
    table = synthetic_time_table(order)
    for col in ("max_l2", "int_h1_sq"):
        assert np.allclose(table.rates[col][1:], order, atol=1e-10)


@pytest.mark.parametrize("order", [1, 2, 3])
@pytest.mark.parametrize("offset", [0.0, 7.5])
def test_synthetic_space_rates_exact(order, offset):
    table = synthetic_space_table(order, offset=offset)
    assert len(table) == 4
    for col in ("max_l2", "int_h1_sq"):
        assert np.allclose(table.rates[col][1:], order, atol=1e-9)


def test_space_levels():
    assert space_levels(1 / 60, 0.75, 3) == pytest.approx([1 / 60, 0.0125, 0.009375])


def test_rate_table_outputs(tmp_path):
    table = RateTable.from_errors("dt", [0.1, 0.05], {"e": [1.0, 0.5]}, title="demo")
    csv_path, txt_path = table.write(tmp_path, "rates")
    text = txt_path.read_text()
    assert text.startswith("demo") and "1.00" in text and "-" in text
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "dt,e,rate_e" and len(lines) == 3


# ------------------------------------------------------------------ stream norms


@pytest.fixture(scope="module")
def sq4():
    return FESpace(build_structured_square(4))


def _stream(space, fn, times):
    return {time_key(t): space.interpolate(fn) for t in times}


def test_error_norms_identical_streams(sq4):
    times = np.arange(11) * 0.1
    s = _stream(sq4, lambda x, y: (y * (1 - y), x * 0), times)
    assert error_norms(sq4, s, s, 0.0, 1.0) == (0.0, 0.0)


def test_error_norms_shear_difference(sq4):
    times = np.arange(11) * 0.1
    zero = _stream(sq4, lambda x, y: (0 * x, 0 * x), times)
    shear = _stream(sq4, lambda x, y: (y, 0 * x), times)
    l2, h1 = error_norms(sq4, zero, shear, 0.0, 1.0)
    assert l2 == pytest.approx(math.sqrt(1 / 3), rel=1e-12)
    assert h1 == pytest.approx(1.0, rel=1e-12)


def test_error_norms_uses_coincident_grid(sq4):
    fine = _stream(sq4, lambda x, y: (y, 0 * x), np.arange(21) * 0.05)
    coarse = _stream(sq4, lambda x, y: (0 * x, 0 * x), np.arange(11) * 0.1)
    assert error_norms(sq4, coarse, fine, 0.0, 1.0)[1] == pytest.approx(1.0, rel=1e-12)


def test_error_norms_disjoint_grids(sq4):
    a = _stream(sq4, lambda x, y: (y, 0 * x), [0.1, 0.3])
    b = _stream(sq4, lambda x, y: (y, 0 * x), [0.2, 0.4])
    with pytest.raises(ValueError, match="no time points"):
        error_norms(sq4, a, b, 0.0, 1.0)


def test_time_key_absorbs_rounding():
    assert time_key(0.1 + 0.2) == time_key(0.3)
    assert time_key(3 * 0.1) != time_key(0.3 + 1e-6)


# ------------------------------------------------------------------ study gates


def test_paper_scale_gate():
    require_paper_scale(1 / 16, False)
    require_paper_scale(1 / 36, True)
    with pytest.raises(ConfigError) as err:
        require_paper_scale(1 / 36, False)
    assert "lc" in err.value.fields


def test_space_study_refuses_paper_scale_by_default():
    study = StudyConfig(RunConfig(), h0=1 / 60)
    with pytest.raises(ConfigError, match="paper-scale"):
        space_rate_study(study)


def test_time_study_refuses_paper_scale_by_default():
    study = StudyConfig(RunConfig(lc=1 / 36))
    with pytest.raises(ConfigError, match="paper-scale"):
        time_rate_study(study)


def test_time_study_on_square():
    run = RunConfig(mesh_source="square", square_n=4, noslip_tags=[1], t_star=0.2, nu=1e-2,
                    forcing="offset_circles_rotational", dt=0.01, t_end=0.3)
    study = StudyConfig(run, dt_list=[0.04, 0.02, 0.01], dt_ref=0.0025, window_start=0.2,
                        window_end=0.4)
    table = time_rate_study(study)
    assert len(table) == 3
    assert all(0.7 <= r <= 1.6 for r in table.rates["max_l2"][1:])


# ------------------------------------------------------------------ manufactured solutions


def test_mms_rejects_divergent_field():
    with pytest.raises(ValueError, match="divergence"):
        mms_nse((X, Y), sympy.Integer(0), 1.0)


def test_mms_forcing_vanishes_for_static_stokes_null_solution():
    # u = (1, 0), p = 0 is steady, convection-free and harmonic
    ms = mms_nse((sympy.Integer(1), sympy.Integer(0)), sympy.Integer(0), 0.3)
    fx, fy = ms.forcing(np.array([0.2, 0.7]), np.array([0.4, 0.1]), 0.5)
    assert np.allclose(fx, 0) and np.allclose(fy, 0)


def test_mms_forcing_matches_hand_computation():
    # u = (y^2, x^2), p = x - 1/2, nu = 2: f = u_t - nu lap u + (u.grad)u + grad p
    ms = mms_nse(*polynomial_solution(), 2.0)
    x, y = np.array([0.3]), np.array([0.8])
    fx, fy = ms.forcing(x, y, 0.0)
    assert fx == pytest.approx(-4 + x**2 * 2 * y + 1)
    assert fy == pytest.approx(-4 + y**2 * 2 * x)


def test_stream_function_solution_is_divergence_free():
    ms = mms_nse(*stream_function_solution(sympy.exp(-T)), 0.1)
    pts = np.random.default_rng(3).random((2, 50))
    assert np.abs(ms.divergence(pts[0], pts[1], 0.4)).max() < 1e-12


def test_polynomial_reproduction():
    out = mms_polynomial_reproduction()
    assert out["l2"] < 1e-12 and out["h1"] < 1e-11 and out["p_max"] < 1e-10


def test_spatial_mms_coarse_rates():
    table = mms_spatial_study(ns=(4, 8, 16))
    assert table.rates["l2"][-1] == pytest.approx(3.0, abs=0.3)
    assert table.rates["h1"][-1] == pytest.approx(2.0, abs=0.2)


# ------------------------------------------------------------------ ODE oracles


def test_ode_oracles_pass():
    results = ode_oracle_suite()
    assert {r.name for r in results} >= {"exact_decay", "be_global_order"}
    assert all(r.passed for r in results), [r for r in results if not r.passed]
