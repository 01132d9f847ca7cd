"""Acceptance suite: one pass/fail line per criterion, printed in the terminal summary.

Criterion 8 (paper-scale reproduction) takes hours and runs only with
URANS_PAPER_SCALE=1; otherwise it is reported as NOT RUN.
"""
import math
import os
import warnings
from pathlib import Path

import numpy as np
import pytest

from urans_fem import io as rio
from urans_fem.config import load_study
from urans_fem.diagnostics import DofDeficiencyWarning, infsup_estimate, stability_ledger
from urans_fem.fem import FESpace, assemble_trilinear, norms
from urans_fem.mesh import build_structured_square, compute_wall_distance, load_offset_circles, offset_circles_distance
from urans_fem.model import ModelParams, k_initialize
from urans_fem.verify import (
    mms_spatial_study,
    mms_temporal_study,
    ode_oracle_suite,
    space_rate_study,
    synthetic_space_table,
    synthetic_time_table,
    time_rate_study,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _h1(space, v):
    n = norms(space, v)
    return math.sqrt(n["l2"] ** 2 + n["h1_semi"] ** 2)


def test_criterion_01_skew_symmetry(acceptance, rng):
    spaces = [FESpace(build_structured_square(3)), FESpace(build_structured_square(6)),
              FESpace(load_offset_circles(1 / 8), (1, 2))]
    worst = 0.0
    for space in spaces:
        for _ in range(100):
            u, v = rng.standard_normal((2, space.n_v))
            v[space.dirichlet_dofs] = 0
            b = v @ assemble_trilinear(space, u) @ v
            worst = max(worst, abs(b) / (_h1(space, u) * _h1(space, v) ** 2))
    passed = worst <= 1e-12
    acceptance.record(1, passed, f"skew symmetry, 300 pairs on 3 meshes: max |b(u,v,v)|/(|u||v|^2) "
                                 f"= {worst:.2e} (tol 1e-12)")
    assert passed


def test_criterion_02_energy_identity(acceptance, offset_circles_run):
    _, result, _ = offset_circles_run
    steps = result.records[1:]
    e = max(abs(r.energy_residual) for r in steps)
    # the k identity is defined once k is active
    k_steps = [abs(r.k_residual) for r in steps if math.isfinite(r.k_residual)]
    k = max(k_steps, default=math.nan)
    passed = e <= 1e-9 and len(k_steps) > 0 and k <= 1e-14
    acceptance.record(2, passed, f"energy identity over {len(steps)} steps: max energy residual {e:.2e} "
                                 f"(tol 1e-9); max k residual {k:.2e} over {len(k_steps)} active steps "
                                 f"(tol 1e-14)")
    assert passed


def test_criterion_03_positivity_and_ledger(acceptance, offset_circles_run):
    _, result, out = offset_circles_run
    rows, meta = rio.read_stats(out / "stats.csv")
    kmin = min(r["k"] for r in rows)
    led = stability_ledger(rows, nu=float(meta["nu"]), tau=float(meta["tau"]), area=float(meta["area"]),
                           poincare=float(meta["poincare"]))
    passed = kmin >= 0 and led.holds
    acceptance.record(3, passed, f"min k {kmin:.3e}; stability ledger max margin {led.margin.max():.3e} "
                                 f"(must be <= 0)")
    assert passed


def test_criterion_04_ode_oracles(acceptance):
    results = {r.name: r for r in ode_oracle_suite()}
    order = results["be_global_order"].value
    piecewise = results["exact_piecewise"].value
    passed = abs(order - 1.0) <= 0.1 and piecewise <= 1e-12 and all(r.passed for r in results.values())
    acceptance.record(4, passed, f"BE global order {order:.3f} (1.0 +- 0.1); exact update vs piecewise "
                                 f"exponential {piecewise:.1e} (tol 1e-12)")
    assert passed


def test_criterion_05_mms_spatial(acceptance):
    table = mms_spatial_study(ns=(4, 8, 16, 32))
    l2, h1 = table.rates["l2"][1:], table.rates["h1"][1:]
    passed = all(abs(r - 3.0) <= 0.2 for r in l2) and all(abs(r - 2.0) <= 0.2 for r in h1)
    acceptance.record(5, passed, "MMS spatial, 3 refinements: L2 orders "
                                 + ", ".join(f"{r:.2f}" for r in l2) + " (3.0 +- 0.2); H1 orders "
                                 + ", ".join(f"{r:.2f}" for r in h1) + " (2.0 +- 0.2)")
    assert passed


def test_criterion_06_mms_temporal(acceptance):
    table = mms_temporal_study()
    rates = table.rates["max_l2"][1:] + table.rates["int_h1_sq"][1:]
    passed = all(abs(r - 1.0) <= 0.2 for r in rates)
    acceptance.record(6, passed, "MMS temporal, dt halving: orders "
                                 + ", ".join(f"{r:.2f}" for r in rates) + " (1.0 +- 0.2)")
    assert passed


def test_criterion_07_rate_estimators(acceptance):
    worst = 0.0
    for p in (1, 2, 3):
        for table in (synthetic_time_table(p), synthetic_space_table(p)):
            for col in table.columns:
                worst = max(worst, max(abs(r - p) for r in table.rates[col][1:]))
    passed = worst <= 1e-10
    acceptance.record(7, passed, f"rate estimators on exact power laws, p in 1,2,3: max error {worst:.1e} "
                                 f"(tol 1e-10)")
    assert passed


@pytest.mark.paper_scale
def test_criterion_08_paper_scale(acceptance, tmp_path):
    if os.environ.get("URANS_PAPER_SCALE") != "1":
        acceptance.record(8, None, "paper-scale reproduction takes hours; set URANS_PAPER_SCALE=1 to run it")
        pytest.skip("paper-scale reproduction needs URANS_PAPER_SCALE=1")
    time_table = time_rate_study(load_study(CONFIGS / "time_study_paper.yaml"), tmp_path / "time", True)
    space_table = space_rate_study(load_study(CONFIGS / "space_study_paper.yaml"), tmp_path / "space", True)
    t_rates = [r for c in time_table.columns for r in time_table.rates[c][1:]]
    s_means = [float(np.mean(space_table.rates[c][-2:])) for c in space_table.columns]
    passed = all(0.8 <= r <= 1.6 for r in t_rates) and all(1.5 <= m <= 2.5 for m in s_means)
    acceptance.record(8, passed, "time rates " + ", ".join(f"{r:.2f}" for r in t_rates)
                                 + " in [0.8, 1.6]; space rate means over the last two pairs "
                                 + ", ".join(f"{m:.2f}" for m in s_means) + " in [1.5, 2.5]")
    assert passed


def test_criterion_09_k_initialization(acceptance, offset_circles_run):
    _, result, _ = offset_circles_run
    fine = load_offset_circles(1 / 36)
    k36 = k_initialize(fine, compute_wall_distance(fine, (1, 2), offset_circles_distance), ModelParams()).k
    values = [result.k_init, k36]
    passed = all(3.2e-5 <= k <= 3.362e-5 for k in values)
    acceptance.record(9, passed, f"k at t* on lc=1/16: {values[0]:.6e}, lc=1/36: {values[1]:.6e} "
                                 f"(in [3.2e-5, 3.362e-5])")
    assert passed


def test_criterion_10_infsup(acceptance):
    th = [infsup_estimate(FESpace(build_structured_square(n))) for n in (2, 4, 8)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DofDeficiencyWarning)
        p1 = [infsup_estimate(FESpace(build_structured_square(n), degree=1)) for n in (2, 4, 8)]
    passed = min(th) > 0.1 and max(th) / min(th) <= 1.2 and max(p1) < 0.1 * min(th)
    acceptance.record(10, passed, "Taylor-Hood beta " + ", ".join(f"{b:.4f}" for b in th)
                                  + " (within 20%, > 0.1); P1-P1 control "
                                  + ", ".join(f"{b:.1e}" for b in p1))
    assert passed
