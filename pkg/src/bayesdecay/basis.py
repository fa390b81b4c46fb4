"""Base functions of the decay model and their Gram matrix."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from bayesdecay.config import DEFAULT, FitConfig
from bayesdecay.errors import DomainError, InputError, NumericError
from bayesdecay.model_space import ModelSpec, ParameterLayout, layout

AER_DECAY_MS = 70.0


@dataclass(frozen=True)
class TimeGrid:
    """Sampling times in ms with their 1-based echo indices."""

    t: np.ndarray
    echo_index: np.ndarray = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise InputError("a time grid needs at least two samples")
        if not np.all(t > 0):
            raise InputError("sampling times must be positive")
        if not np.all(np.diff(t) > 0):
            raise InputError("sampling times must be strictly increasing")
        if self.echo_index is None:
            idx = np.arange(1, t.size + 1)
        else:
            idx = np.asarray(self.echo_index, dtype=int)
            if idx.shape != t.shape or idx[0] != 1 or not np.all(np.diff(idx) == 1):
                raise InputError("echo indices must be contiguous from 1")
        t.setflags(write=False)
        idx.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "echo_index", idx)

    @property
    def n(self) -> int:
        return self.t.size

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.t, other.t)

    def __hash__(self):
        return hash(self.t.tobytes())


@dataclass(frozen=True)
class NonlinearParams:
    """T2 values (narrow first, then broadened) and broadened widths, in ms."""

    rates: np.ndarray
    widths: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "rates", np.atleast_1d(np.asarray(self.rates, dtype=float)))
        object.__setattr__(self, "widths", np.atleast_1d(np.asarray(self.widths, dtype=float)))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.rates, self.widths])

    @classmethod
    def from_vector(cls, values, lay: ParameterLayout) -> "NonlinearParams":
        values = np.asarray(values, dtype=float)
        return cls(values[lay.rate_slice()], values[lay.width_slice()])

    def check(self, lay: ParameterLayout, config: FitConfig | None = None):
        """Validate lengths, ordering and (optionally) prior bounds."""
        if self.rates.size != lay.n_decay or self.widths.size != lay.spec.k:
            raise InputError(
                f"{lay.spec.label} needs {lay.n_decay} rates and {lay.spec.k} widths, "
                f"got {self.rates.size} and {self.widths.size}"
            )
        narrow = self.rates[lay.narrow_slice()]
        if np.any(np.diff(narrow) < 0):
            raise InputError("narrow-component T2 values must be sorted ascending")
        if np.any(self.rates <= 0) or np.any(self.widths <= 0):
            raise DomainError("T2 values and widths must be positive")
        if config is not None:
            if np.any(self.rates < config.t2_min) or np.any(self.rates > config.t2_max):
                raise InputError(f"T2 outside [{config.t2_min}, {config.t2_max}] ms")
            if np.any(self.widths < config.width_min) or np.any(self.widths > config.width_max):
                raise InputError(f"width outside [{config.width_min}, {config.width_max}] ms")


@dataclass(frozen=True)
class DesignMatrix:
    G: np.ndarray
    layout: ParameterLayout


@lru_cache(maxsize=16)
def _legendre(order: int):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return nodes, weights


def broadened_row(t: np.ndarray, center: float, width: float, config: FitConfig = DEFAULT) -> np.ndarray:
    """Integral of a Gaussian T2 density against exp(-t/T2).

    The density is truncated to ``center +/- quad_halfwidth * width`` and
    clipped below at ``t2_floor``; the result is not renormalized.
    """
    if center <= config.t2_floor:
        raise DomainError(f"broadened component centre {center} ms at or below the T2 floor")
    lo = max(center - config.quad_halfwidth * width, config.t2_floor)
    hi = center + config.quad_halfwidth * width
    x, w = _legendre(config.quad_order)
    half = 0.5 * (hi - lo)
    T = 0.5 * (hi + lo) + half * x
    dens = np.exp(-0.5 * ((T - center) / width) ** 2) / (np.sqrt(2 * np.pi) * width)
    return (np.exp(-np.outer(t, 1.0 / T)) @ (w * dens)) * half


def eval_basis(spec: ModelSpec, grid: TimeGrid, params: NonlinearParams, config: FitConfig = DEFAULT) -> DesignMatrix:
    lay = layout(spec)
    params.check(lay)
    t = grid.t
    rows = []
    for T2 in params.rates[lay.narrow_slice()]:
        rows.append(np.exp(-t / T2))
    for T2, w in zip(params.rates[lay.broad_rate_slice()], params.widths):
        rows.append(broadened_row(t, T2, w, config))
    scaled = t / t.max()
    for q in range(spec.l):
        rows.append(scaled**q)
    if spec.include_aer:
        rows.append(np.where(grid.echo_index % 2 == 1, -1.0, 1.0) * np.exp(-t / AER_DECAY_MS))
    G = np.vstack(rows)
    if not np.all(np.isfinite(G)):
        raise NumericError(f"non-finite basis values for {spec.label}")
    return DesignMatrix(G, lay)


def gram(G: DesignMatrix | np.ndarray) -> np.ndarray:
    G = G.G if isinstance(G, DesignMatrix) else np.asarray(G)
    return G @ G.T


def project_data(G: DesignMatrix | np.ndarray, dbar) -> np.ndarray:
    G = G.G if isinstance(G, DesignMatrix) else np.asarray(G)
    dbar = np.asarray(dbar, dtype=float)
    if dbar.shape != (G.shape[1],):
        raise InputError(f"data vector has length {dbar.size}, basis has {G.shape[1]} samples")
    return G @ dbar


def design_batch(spec: ModelSpec, grid: TimeGrid, P, config: FitConfig = DEFAULT):
    """Design matrices for a stack of canonical parameter vectors.

    Returns ``G`` of shape (N, m, n) and a mask of rows whose basis is valid.
    """
    lay = layout(spec)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    N = P.shape[0]
    t = grid.t
    rates = P[:, lay.rate_slice()]
    widths = P[:, lay.width_slice()]
    ok = np.all(rates > 0, axis=1) & np.all(widths > 0, axis=1)
    safe_rates = np.where(rates > 0, rates, 1.0)
    blocks = []
    if spec.j:
        blocks.append(np.exp(-t[None, None, :] / safe_rates[:, : spec.j, None]))
    if spec.k:
        x, w = _legendre(config.quad_order)
        centre = safe_rates[:, spec.j :]
        wid = np.where(widths > 0, widths, 1.0)
        ok &= np.all(centre > config.t2_floor, axis=1)
        lo = np.maximum(centre - config.quad_halfwidth * wid, config.t2_floor)
        hi = centre + config.quad_halfwidth * wid
        half = 0.5 * (hi - lo)
        T = 0.5 * (hi + lo)[..., None] + half[..., None] * x
        dens = np.exp(-0.5 * ((T - centre[..., None]) / wid[..., None]) ** 2) / (np.sqrt(2 * np.pi) * wid[..., None])
        kern = np.exp(-t[None, None, :, None] / T[:, :, None, :])
        blocks.append(np.matmul(kern, (w * dens)[..., None])[..., 0] * half[..., None])
    fixed = _fixed_rows(spec.l, spec.include_aer, grid)
    if fixed.shape[0]:
        blocks.append(np.broadcast_to(fixed, (N,) + fixed.shape))
    G = np.concatenate(blocks, axis=1)
    ok &= np.isfinite(G).all(axis=(1, 2))
    return G, ok


@lru_cache(maxsize=64)
def _fixed_rows(l: int, include_aer: bool, grid: TimeGrid) -> np.ndarray:
    """Polynomial and AER rows, which do not depend on the nonlinear parameters."""
    t = grid.t
    rows = [(t / t.max()) ** q for q in range(l)]
    if include_aer:
        rows.append(np.where(grid.echo_index % 2 == 1, -1.0, 1.0) * np.exp(-t / AER_DECAY_MS))
    out = np.vstack(rows) if rows else np.zeros((0, t.size))
    out.setflags(write=False)
    return out
