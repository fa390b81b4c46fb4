"""Run configuration.

``FitConfig`` holds every numerical knob used by the library (prior bounds,
quadrature order, valve thresholds, search and classification settings).
``RunConfig`` adds CLI output paths and round-trips through a flat
``key = value`` text file.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from bayesdecay.errors import InputError

_SECTION = "run"


@dataclass(frozen=True)
class FitConfig:
    # nonlinear prior bounds, ms
    t2_min: float = 5.0
    t2_max: float = 2000.0
    width_min: float = 0.5
    width_max: float = 500.0
    # broadened-component quadrature
    quad_order: int = 41
    quad_halfwidth: float = 5.0
    t2_floor: float = 0.1
    # amplitude prior: flat on [-f*A, f*A], A = max|dbar|
    amp_range_factor: float = 10.0
    # sigma prior: Jeffreys on [lo*A, hi*A]
    sigma_min_factor: float = 1e-6
    sigma_max_factor: float = 10.0
    eig_rel_tol: float = 1e-12
    # optimizer
    n_restarts: int = 5
    grad_step: float = 1e-5
    hess_step: float = 1e-3
    max_iter: int = 500
    min_separation: float = 0.02
    # safety valve
    valve_drop: float = 2.0
    valve_threshold: float = 0.3
    # search
    eps_model: float = 0.0
    # classification
    draws: int = 256
    alternates_window: float = 6.0
    max_alternates: int = 3
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.t2_min < self.t2_max):
            raise InputError(f"T2 bounds must satisfy 0 < t2_min < t2_max, got {self.t2_min}, {self.t2_max}")
        if not (0 < self.width_min < self.width_max):
            raise InputError(f"width bounds must satisfy 0 < width_min < width_max, got {self.width_min}, {self.width_max}")
        if not (0 < self.sigma_min_factor < self.sigma_max_factor):
            raise InputError("sigma prior bounds must satisfy 0 < sigma_min_factor < sigma_max_factor")
        if self.amp_range_factor <= 0:
            raise InputError("amp_range_factor must be positive")
        if self.quad_order < 2:
            raise InputError("quad_order must be at least 2")
        if self.draws < 1:
            raise InputError("draws must be at least 1")

    def replace(self, **changes) -> "FitConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class RunConfig:
    fit: FitConfig = field(default_factory=FitConfig)
    out: str | None = None

    def to_text(self) -> str:
        lines = [f"[{_SECTION}]"]
        for f in fields(FitConfig):
            lines.append(f"{f.name} = {getattr(self.fit, f.name)!r}")
        if self.out is not None:
            lines.append(f"out = {self.out}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser()
        if not text.lstrip().startswith("["):
            text = f"[{_SECTION}]\n" + text
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise InputError(f"cannot parse configuration: {exc}") from exc
        section = parser[_SECTION] if parser.has_section(_SECTION) else {}
        types = {f.name: f.type for f in fields(FitConfig)}
        kwargs = {}
        out = None
        for key, raw in section.items():
            if key == "out":
                out = raw
                continue
            if key not in types:
                raise InputError(f"unknown configuration key {key!r}")
            caster = int if types[key] in ("int", int) else float
            try:
                kwargs[key] = caster(raw)
            except ValueError as exc:
                raise InputError(f"bad value for {key}: {raw!r}") from exc
        return cls(fit=FitConfig(**kwargs), out=out)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InputError(f"cannot read configuration {path}: {exc}") from exc
        return cls.from_text(text)


DEFAULT = FitConfig()
