"""Forward simulation of replicated CPMG-style decay curves."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bayesdecay.basis import AER_DECAY_MS, TimeGrid, broadened_row
from bayesdecay.config import DEFAULT, FitConfig
from bayesdecay.errors import InputError
from bayesdecay.evidence import DecayCurveSet


def make_rng(seed: int) -> np.random.Generator:
    # PCG64 is pinned so noise draws are reproducible across numpy versions
    return np.random.Generator(np.random.PCG64(seed))


def default_grid() -> TimeGrid:
    """32 echoes evenly spaced from 10 to 320 ms."""
    return TimeGrid(10.0 * np.arange(1, 33))


@dataclass(frozen=True)
class Component:
    amplitude: float
    t2: float
    width: float = 0.0

    def __post_init__(self):
        if self.t2 <= 0:
            raise InputError(f"T2 must be positive, got {self.t2}")
        if self.width < 0:
            raise InputError(f"width must be nonnegative, got {self.width}")


@dataclass(frozen=True)
class GeneratingSpec:
    components: tuple[Component, ...]
    poly: tuple[float, ...] = ()
    aer_amplitude: float = 0.0
    sigma_s: float = 0.0
    n_l: int = 1
    grid: TimeGrid = field(default_factory=default_grid)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "poly", tuple(float(c) for c in self.poly))
        if len(self.poly) > 3:
            raise InputError("at most three polynomial coefficients (a, b, c)")
        if self.sigma_s < 0:
            raise InputError("sigma_s must be nonnegative")
        if self.n_l < 1:
            raise InputError("n_l must be at least 1")

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(forward(self))))

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratingSpec":
        try:
            comps = tuple(
                Component(float(c["amplitude"]), float(c["t2"]), float(c.get("width", 0.0)))
                for c in doc["components"]
            )
            grid = TimeGrid(np.asarray(doc["t_ms"], dtype=float)) if "t_ms" in doc else default_grid()
            return cls(
                components=comps,
                poly=tuple(doc.get("poly", ())),
                aer_amplitude=float(doc.get("aer_amplitude", 0.0)),
                sigma_s=float(doc.get("sigma_s", 0.0)),
                n_l=int(doc.get("n_l", 1)),
                grid=grid,
                seed=int(doc.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"invalid generating spec: {exc}") from exc

    @classmethod
    def load(cls, path) -> "GeneratingSpec":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read generating spec {path}: {exc}") from exc
        return cls.from_dict(doc)


def forward(spec: GeneratingSpec, config: FitConfig = DEFAULT) -> np.ndarray:
    """Noiseless signal: decay components + polynomial + AER."""
    t = spec.grid.t
    out = np.zeros_like(t)
    for c in spec.components:
        if c.width == 0:
            out += c.amplitude * np.exp(-t / c.t2)
        else:
            out += c.amplitude * broadened_row(t, c.t2, c.width, config)
    # raw (unnormalized) time powers: a + b t + c t^2
    for q, coef in enumerate(spec.poly):
        out += coef * t**q
    sign = np.where(spec.grid.echo_index % 2 == 1, -1.0, 1.0)
    out += spec.aer_amplitude * sign * np.exp(-t / AER_DECAY_MS)
    return out


def simulate(spec: GeneratingSpec, config: FitConfig = DEFAULT) -> DecayCurveSet:
    clean = forward(spec, config)
    noise = make_rng(spec.seed).standard_normal((spec.grid.n, spec.n_l)) * spec.sigma_s
    return DecayCurveSet(spec.grid, clean[:, None] + noise)
