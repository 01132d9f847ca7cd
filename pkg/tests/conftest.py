from __future__ import annotations

import os

import numpy as np
import pytest

from urans_fem.config import RunConfig
from urans_fem.fem.space import FESpace
from urans_fem.mesh import build_structured_square, load_offset_circles

ACCEPTANCE_LINES: list[str] = []


class AcceptanceReport:
    def record(self, number: int, passed: bool | None, detail: str) -> None:
        status = {True: "PASS", False: "FAIL", None: "NOT RUN"}[passed]
        ACCEPTANCE_LINES.append(f"criterion {number:2d}: {status}  {detail}")
        print(ACCEPTANCE_LINES[-1])


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceReport()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session", autouse=True)
def _isolated_cache(tmp_path_factory):
    os.environ.setdefault("URANS_FEM_CACHE", str(tmp_path_factory.mktemp("mesh-cache")))


@pytest.fixture(scope="session")
def square2():
    return build_structured_square(2)


@pytest.fixture(scope="session")
def square4_space():
    return FESpace(build_structured_square(4))


@pytest.fixture(scope="session")
def circles16():
    return load_offset_circles(1 / 16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def offset_circles_run(tmp_path_factory):
    """The scaled-down offset-circles run (lc = 1/16, dt = 5e-3, t in [0, 1.2])."""
    from urans_fem.solver import run_transient

    out = tmp_path_factory.mktemp("offset-circles-run")
    config = RunConfig(lc=1 / 16, dt=5e-3, t_end=1.2, t_star=1.0, output_dir=str(out))
    result = run_transient(config, out)
    return config, result, out
