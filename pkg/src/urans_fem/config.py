"""Run and study configuration: flat YAML key/value files with typed fields.

Floats may be written as fractions (``lc: 1/16``). Units are nondimensional
throughout: lengths in units of L, times in units of L/U.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import yaml

from .model import DAMPING_CHOICES, ModelParams

MESH_SOURCES = ("file", "square", "offset_circles")
FORCINGS = ("offset_circles", "offset_circles_rotational", "zero")
K_UPDATES = ("be", "exact")
VISCOUS_FORMS = ("full", "symmetric")
WALL_DISTANCES = ("auto", "polygonal", "analytic")


class ConfigError(ValueError):
    """Validation failure; ``fields`` names the offending keys."""

    def __init__(self, problems: dict[str, str]):
        self.fields = dict(problems)
        super().__init__("; ".join(f"{k}: {v}" for k, v in problems.items()))


@dataclass
class RunConfig:
    # mesh
    mesh_source: str = "offset_circles"
    mesh_file: str | None = None
    square_n: int = 8
    lc: float = 1 / 16
    noslip_tags: list[int] = field(default_factory=lambda: [1, 2])
    wall_distance: str = "auto"
    # time
    dt: float = 5e-3
    t_end: float = 1.2
    t_star: float = 1.0
    # model
    nu: float = 1e-4
    tau: float = 0.1
    mu: float = 0.55
    kappa: float = 0.41
    L: float = 1.0
    U: float = 1.0
    damping: str = "test_variant"
    k_update: str = "be"
    viscous_form: str = "full"
    forcing: str = "offset_circles"
    # output
    output_dir: str = "run"
    snapshot_every: int = 0
    diagnostics_stride: int = 1
    restart: str | None = None
    seed: int = 0  # reserved

    def params(self) -> ModelParams:
        return ModelParams(nu=self.nu, tau=self.tau, mu=self.mu, kappa=self.kappa, L=self.L,
                           U=self.U, t_star=self.t_star, damping=self.damping)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def validate(self, base_dir: str | Path | None = None) -> "RunConfig":
        problems: dict[str, str] = {}
        positive = ("dt", "t_end", "nu", "tau", "mu", "L", "U", "lc")
        for name in positive:
            if not getattr(self, name) > 0:
                problems[name] = f"must be positive, got {getattr(self, name)}"
        if not self.t_star >= 0:
            problems["t_star"] = "must be nonnegative"
        choices = {
            "mesh_source": MESH_SOURCES, "damping": DAMPING_CHOICES, "k_update": K_UPDATES,
            "viscous_form": VISCOUS_FORMS, "forcing": FORCINGS, "wall_distance": WALL_DISTANCES,
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                problems[name] = f"must be one of {allowed}, got {getattr(self, name)!r}"
        if self.mesh_source == "square" and self.square_n < 1:
            problems["square_n"] = "must be >= 1"
        if self.mesh_source == "file":
            if not self.mesh_file:
                problems["mesh_file"] = "required when mesh_source is 'file'"
            elif not _resolve(self.mesh_file, base_dir).exists():
                problems["mesh_file"] = f"no such file {self.mesh_file}"
        if self.restart and not _resolve(self.restart, base_dir).exists():
            problems["restart"] = f"no such file {self.restart}"
        if self.dt > 0 and self.t_end > 0 and abs(self.t_end / self.dt - self.n_steps) > 1e-6:
            problems["t_end"] = "must be an integer multiple of dt"
        if self.snapshot_every < 0:
            problems["snapshot_every"] = "must be >= 0"
        if self.diagnostics_stride < 1:
            problems["diagnostics_stride"] = "must be >= 1"
        if not self.noslip_tags:
            problems["noslip_tags"] = "at least one tag required"
        if problems:
            raise ConfigError(problems)
        return self


def _resolve(path: str, base_dir) -> Path:
    p = Path(path)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    return p


def _coerce(name: str, value, hint):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if value is None:
        if type(None) in args:
            return None
        raise ConfigError({name: "must not be empty"})
    if origin is typing.Union or (origin is not None and type(None) in args):
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(name, value, inner)
    try:
        if hint is float:
            if isinstance(value, str):
                return float(Fraction(value.replace(" ", "")))
            return float(value)
        if hint is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError("not an integer")
            return int(value)
        if hint is str:
            return str(value)
        if origin is list:
            if not isinstance(value, (list, tuple)):
                value = [value]
            return [_coerce(name, v, args[0]) for v in value]
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise ConfigError({name: f"cannot read {value!r} as {getattr(hint, '__name__', hint)} ({exc})"})
    return value


def _from_mapping(cls, data: dict, strict: bool = True):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if strict and unknown:
        raise ConfigError({k: "unknown key" for k in sorted(unknown)})
    kwargs = {k: _coerce(k, v, hints[k]) for k, v in data.items() if k in names}
    return cls(**kwargs)


def _to_mapping(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def config_from_dict(data: dict) -> RunConfig:
    return _from_mapping(RunConfig, data or {})


def load_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError({"<file>": "expected a key: value mapping"})
    return config_from_dict(data)


def dump_config(config, path: str | Path | None = None) -> str:
    text = yaml.safe_dump(_to_mapping(config), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


@dataclass
class StudyConfig:
    """A rate study: a base run plus the refinement schedule."""

    run: RunConfig
    dt_list: list[float] = field(default_factory=lambda: [8e-3, 4e-3, 2e-3])
    dt_ref: float = 1e-3
    window_start: float = 1.0
    window_end: float = 1.3
    h0: float = 1 / 60
    alpha: float = 0.75
    levels: int = 5
    workers: int = 1

    def validate(self, base_dir=None) -> "StudyConfig":
        problems = {}
        try:
            self.run.validate(base_dir)
        except ConfigError as exc:
            problems.update(exc.fields)
        if not self.dt_list or any(not d > 0 for d in self.dt_list):
            problems["dt_list"] = "needs positive entries"
        if not self.dt_ref > 0:
            problems["dt_ref"] = "must be positive"
        elif any(abs(d / self.dt_ref - round(d / self.dt_ref)) > 1e-9 for d in self.dt_list):
            problems["dt_ref"] = "must divide every entry of dt_list"
        if not self.window_end > self.window_start >= 0:
            problems["window_end"] = "window must satisfy 0 <= window_start < window_end"
        if not 0 < self.alpha < 1:
            problems["alpha"] = "must lie in (0, 1)"
        if self.levels < 3:
            problems["levels"] = "needs at least 3 levels"
        if not self.h0 > 0:
            problems["h0"] = "must be positive"
        if problems:
            raise ConfigError(problems)
        return self


_STUDY_KEYS = {f.name for f in fields(StudyConfig)} - {"run"}


def study_from_dict(data: dict) -> StudyConfig:
    data = dict(data or {})
    study = {k: data.pop(k) for k in list(data) if k in _STUDY_KEYS}
    run = config_from_dict(data)
    hints = typing.get_type_hints(StudyConfig)
    kwargs = {k: _coerce(k, v, hints[k]) for k, v in study.items()}
    return StudyConfig(run=run, **kwargs)


def load_study(path: str | Path) -> StudyConfig:
    with open(path) as fh:
        return study_from_dict(yaml.safe_load(fh) or {})


def dump_study(study: StudyConfig, path: str | Path | None = None) -> str:
    data = _to_mapping(study.run)
    data.update({k: getattr(study, k) for k in _STUDY_KEYS})
    text = yaml.safe_dump(data, sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def replace(config, **changes):
    return dataclasses.replace(config, **changes)
