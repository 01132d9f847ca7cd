"""Run artifacts: statistics CSV, legacy VTK snapshots, restart files.

Statistics CSV layout::

    # urans-fem statistics version=1
    # area=3.10...
    # nu=0.0001
    ...
    n,t,kinetic_energy,...
    0,0.0,...

Metadata lines are ``# key=value``. Numbers are written with 17 significant
digits so the budget identities can be re-verified offline.
"""
from __future__ import annotations

import csv
import math
from dataclasses import fields
from pathlib import Path
from typing import Iterable, Mapping, TextIO

import numpy as np

from .diagnostics import BudgetRecord

STATS_VERSION = 1
STATS_MAGIC = "# urans-fem statistics"
STATS_COLUMNS = [
    "n", "t", "kinetic_energy", "nu_dissipation", "nut_dissipation", "k", "forcing_power",
    "energy_residual", "k_residual",
    # budget columns appended for offline checks
    "dt", "grad_sq", "increment_sq", "forcing_norm_sq", "eps", "k_prev", "k_injection",
    "solve_residual", "wall_time",
]
assert set(STATS_COLUMNS) == {f.name for f in fields(BudgetRecord)}

RESTART_VERSION = 1


class ArtifactError(ValueError):
    pass


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    return f"{value:.17g}"


class StatsWriter:
    """Streams rows to ``stats.csv``; flushes after every row."""

    def __init__(self, path: str | Path, meta: Mapping[str, object], append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if append and self.path.exists():
            read_stats(self.path)  # validates the version
            self._fh = open(self.path, "a", newline="")
        else:
            self._fh = open(self.path, "w", newline="")
            self._fh.write(f"{STATS_MAGIC} version={STATS_VERSION}\n")
            for key, val in meta.items():
                self._fh.write(f"# {key}={val}\n")
            self._fh.write(",".join(STATS_COLUMNS) + "\n")
        self._fh.flush()

    def write(self, record: BudgetRecord | Mapping) -> None:
        row = record.as_row() if isinstance(record, BudgetRecord) else record
        self._fh.write(",".join(_fmt(row[c]) for c in STATS_COLUMNS) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_stats(path: str | Path) -> tuple[list[dict], dict[str, str]]:
    """Return ``(rows, meta)``; rejects unknown schema versions."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing statistics file {path}")
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith(STATS_MAGIC):
            raise ArtifactError(f"{path} is not a statistics file")
        try:
            version = int(first.split("version=")[1])
        except (IndexError, ValueError):
            raise ArtifactError(f"{path}: unreadable version line") from None
        if version != STATS_VERSION:
            raise ArtifactError(f"{path}: unsupported statistics version {version}")
        meta: dict[str, str] = {}
        header = None
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
            else:
                header = line.strip().split(",")
                break
        if header != STATS_COLUMNS:
            raise ArtifactError(f"{path}: unexpected column header")
        rows = []
        for rec in csv.reader(fh):
            if not rec:
                continue
            row = {c: float(v) for c, v in zip(header, rec)}
            row["n"] = int(row["n"])
            rows.append(row)
    return rows, meta


# ----------------------------------------------------------------- VTK


def write_vtk(path: str | Path, space, v: np.ndarray, p: np.ndarray | None = None,
              point_scalars: Mapping[str, np.ndarray] | None = None,
              field_data: Mapping[str, float] | None = None) -> None:
    """Legacy ASCII unstructured grid over the once-refined P1 mesh of the P2 nodes."""
    mesh = space.mesh
    if space.degree != 2:
        raise ValueError("snapshots require the P2 velocity space")
    nodes = mesh.p2_nodes
    cn = space.cell_nodes  # v0 v1 v2 m12 m20 m01
    sub = np.concatenate([
        cn[:, [0, 5, 4]], cn[:, [5, 1, 3]], cn[:, [4, 3, 2]], cn[:, [3, 4, 5]],
    ])
    u1, u2 = space.components(v)
    lines = ["# vtk DataFile Version 3.0", f"urans-fem snapshot {mesh.name}", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {len(nodes)} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in nodes]
    lines.append(f"CELLS {len(sub)} {4 * len(sub)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in sub]
    lines.append(f"CELL_TYPES {len(sub)}")
    lines += ["5"] * len(sub)
    if field_data:
        lines.append(f"FIELD FieldData {len(field_data)}")
        for name, val in field_data.items():
            lines.append(f"{name} 1 1 double")
            lines.append(f"{float(val):.17g}")
    lines.append(f"POINT_DATA {len(nodes)}")
    lines.append("VECTORS velocity double")
    lines += [f"{a:.17g} {b:.17g} 0" for a, b in zip(u1, u2)]
    scalars = dict(point_scalars or {})
    if p is not None:
        edges = mesh.edges
        scalars["pressure"] = np.concatenate([p, 0.5 * (p[edges[:, 0]] + p[edges[:, 1]])])
    for name, vals in scalars.items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [f"{x:.17g}" for x in vals]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_field_data(path: str | Path) -> dict[str, float]:
    """FieldData entries of a snapshot written by :func:`write_vtk`."""
    out = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    for i, line in enumerate(lines):
        if line.startswith("FIELD FieldData"):
            count = int(line.split()[2])
            for j in range(count):
                name = lines[i + 1 + 2 * j].split()[0]
                out[name] = float(lines[i + 2 + 2 * j])
            break
    return out


# ----------------------------------------------------------------- restart


def save_state(path: str | Path, state, mesh_fingerprint: str, dt: float) -> None:
    """Versioned binary (numpy .npz) dump of a solver state."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            version=RESTART_VERSION,
            v=state.v, p=state.p, k=state.k, t=state.t, n=state.n,
            k_active=state.k_active, dt=dt, mesh=mesh_fingerprint,
        )


def load_state(path: str | Path):
    from .solver import State

    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != RESTART_VERSION:
            raise ArtifactError(f"{path}: unsupported restart version {version}")
        state = State(v=data["v"].copy(), p=data["p"].copy(), k=float(data["k"]), t=float(data["t"]),
                      n=int(data["n"]), k_active=bool(data["k_active"]))
        return state, str(data["mesh"]), float(data["dt"])
