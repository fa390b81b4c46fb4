"""The (j, k, l) lattice of candidate decay models."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

from bayesdecay.errors import ModelBoundsError

MAX_DECAYS = 7
MAX_POLY = 3

_LABEL = re.compile(r"^M(\d+)\.(\d+)\.(\d+)$")


@dataclass(frozen=True, order=True)
class ModelSpec:
    """A point of the model lattice.

    j narrow exponentials, k Gaussian-broadened exponentials and l nested
    polynomial terms (constant, linear, quadratic). The sign-alternating AER
    term is part of every model unless ``include_aer`` is switched off.
    """

    j: int
    k: int = 0
    l: int = 0
    include_aer: bool = True

    def __post_init__(self):
        for name in ("j", "k", "l"):
            if getattr(self, name) < 0:
                raise ModelBoundsError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.j + self.k < 1:
            raise ModelBoundsError("j + k >= 1 violated: a model needs at least one decaying component")
        if self.j + self.k > MAX_DECAYS:
            raise ModelBoundsError(f"j + k <= {MAX_DECAYS} violated: got {self.j + self.k}")
        if self.l > MAX_POLY:
            raise ModelBoundsError(f"l <= {MAX_POLY} violated: got {self.l}")

    @property
    def label(self) -> str:
        return f"M{self.j}.{self.k}.{self.l}"

    def __str__(self):
        return self.label

    @classmethod
    def parse(cls, text: str) -> "ModelSpec":
        match = _LABEL.match(text.strip())
        if match is None:
            raise ModelBoundsError(f"model string must look like 'Mj.k.l', got {text!r}")
        j, k, l = (int(g) for g in match.groups())
        return cls(j, k, l)

    @classmethod
    def is_valid(cls, j: int, k: int, l: int) -> bool:
        return j >= 0 and k >= 0 and 0 <= l <= MAX_POLY and 1 <= j + k <= MAX_DECAYS


@dataclass(frozen=True)
class ParameterLayout:
    """Slot bookkeeping for one model.

    Amplitude slots run narrow decays, broadened decays, polynomial degrees
    0..l-1, then AER. The nonlinear vector is narrow rates (ascending),
    broadened rates, then one width per broadened component.
    """

    spec: ModelSpec
    m: int
    p: int
    amplitude_names: tuple[str, ...]
    nonlinear_names: tuple[str, ...]

    @property
    def n_decay(self) -> int:
        return self.spec.j + self.spec.k

    def rate_slice(self) -> slice:
        return slice(0, self.n_decay)

    def narrow_slice(self) -> slice:
        return slice(0, self.spec.j)

    def broad_rate_slice(self) -> slice:
        return slice(self.spec.j, self.n_decay)

    def width_slice(self) -> slice:
        return slice(self.n_decay, self.p)


@lru_cache(maxsize=None)
def layout(spec: ModelSpec) -> ParameterLayout:
    j, k, l = spec.j, spec.k, spec.l
    amps = [f"B_narrow{i + 1}" for i in range(j)]
    amps += [f"B_broad{i + 1}" for i in range(k)]
    amps += [f"B_poly{q}" for q in range(l)]
    if spec.include_aer:
        amps.append("B_aer")
    nonlin = [f"T2_narrow{i + 1}" for i in range(j)]
    nonlin += [f"T2_broad{i + 1}" for i in range(k)]
    nonlin += [f"width_broad{i + 1}" for i in range(k)]
    return ParameterLayout(spec, len(amps), len(nonlin), tuple(amps), tuple(nonlin))


def neighbours(spec: ModelSpec) -> list[ModelSpec]:
    """Valid specs one unit step away in exactly one coordinate.

    Ordered j-, j+, k-, k+, l-, l+. The relation is symmetric and connects
    the whole lattice, e.g. (1,0,0) -> (1,1,0) -> (0,1,0).
    """
    out = []
    for axis in range(3):
        for step in (-1, 1):
            coords = [spec.j, spec.k, spec.l]
            coords[axis] += step
            if ModelSpec.is_valid(*coords):
                out.append(ModelSpec(*coords, include_aer=spec.include_aer))
    return out


def all_models(include_aer: bool = True) -> list[ModelSpec]:
    return [
        ModelSpec(j, k, l, include_aer)
        for j in range(MAX_DECAYS + 1)
        for k in range(MAX_DECAYS + 1)
        for l in range(MAX_POLY + 1)
        if ModelSpec.is_valid(j, k, l)
    ]
