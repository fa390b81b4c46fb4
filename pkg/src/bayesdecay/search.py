"""Greedy hill-climbing over the model lattice."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from bayesdecay.config import DEFAULT, FitConfig
from bayesdecay.errors import BayesDecayError, InputError
from bayesdecay.inference import LaplaceResult, canonical, fit_model, log_bounds
from bayesdecay.model_space import ModelSpec, layout, neighbours

log = logging.getLogger(__name__)


@dataclass
class TraceEntry:
    spec: ModelSpec
    log_evidence: float
    result: LaplaceResult | None = None
    error: str | None = None

    @property
    def valve_status(self) -> str:
        if self.result is None:
            return "error"
        v = self.result.valve
        if v.quadratic_ok:
            return "ok"
        if v.fallback_used:
            return "fallback"
        return "unreliable"

    def to_dict(self) -> dict:
        doc = {"model": self.spec.label, "log_evidence": self.log_evidence, "valve": self.valve_status}
        if self.error is not None:
            doc["error"] = self.error
        if self.result is not None:
            doc["sigma_mode"] = self.result.evidence.sigma_mode
            doc["fit"] = self.result.to_dict()
        return doc


@dataclass
class SearchTrace:
    visited: list[TraceEntry] = field(default_factory=list)
    path: list[ModelSpec] = field(default_factory=list)

    def entry(self, spec: ModelSpec) -> TraceEntry | None:
        for e in self.visited:
            if e.spec == spec:
                return e
        return None

    @property
    def ranked(self) -> list[TraceEntry]:
        return sorted(self.visited, key=lambda e: (-e.log_evidence, e.spec))

    @property
    def best(self) -> ModelSpec:
        return self.ranked[0].spec

    @property
    def best_result(self) -> LaplaceResult:
        return self.ranked[0].result

    @property
    def log_odds_runner_up(self) -> float:
        r = self.ranked
        if len(r) < 2:
            return math.inf
        return r[0].log_evidence - r[1].log_evidence

    def to_dict(self) -> dict:
        return {
            "best": self.best.label,
            "log_odds_runner_up": self.log_odds_runner_up,
            "path": [s.label for s in self.path],
            "visited": [e.to_dict() for e in self.visited],
        }

    def table(self) -> str:
        lines = [f"{'model':<8} {'log_evidence':>14} {'sigma_mode':>12}  valve"]
        for e in self.ranked:
            sig = f"{e.result.evidence.sigma_mode:12.5g}" if e.result is not None else f"{'-':>12}"
            lines.append(f"{e.spec.label:<8} {e.log_evidence:14.4f} {sig}  {e.valve_status}")
        return "\n".join(lines)


def _gap_midpoint(occupied, lo: float, hi: float) -> float:
    """Midpoint of the widest gap between occupied log-rates and the bounds."""
    edges = np.sort(np.concatenate([[lo, hi], np.asarray(occupied, dtype=float)]))
    gaps = np.diff(edges)
    i = int(np.argmax(gaps))
    return 0.5 * (edges[i] + edges[i + 1])


def warm_start(result: LaplaceResult, target: ModelSpec, config: FitConfig = DEFAULT) -> np.ndarray:
    """Carry the MAP of ``result`` over to the neighbouring model ``target``.

    Retained components keep their values; a removed component is the one of
    that kind with the smallest amplitude; an added one goes to the middle of
    the widest empty stretch of log-rate space.
    """
    src = layout(result.spec)
    dst = layout(target)
    u = result.u_map
    amps = np.abs(result.amplitude_means)
    lo, hi = log_bounds(dst, config) if dst.p else (np.zeros(0), np.zeros(0))
    narrow = list(u[src.narrow_slice()])
    narrow_amp = list(amps[: src.spec.j])
    broad = list(zip(u[src.broad_rate_slice()], u[src.width_slice()]))
    broad_amp = list(amps[src.spec.j : src.n_decay])

    while len(narrow) > target.j:
        i = int(np.argmin(narrow_amp))
        narrow.pop(i)
        narrow_amp.pop(i)
    while len(broad) > target.k:
        i = int(np.argmin(broad_amp))
        broad.pop(i)
        broad_amp.pop(i)
    rate_lo, rate_hi = math.log(config.t2_min), math.log(config.t2_max)
    while len(narrow) < target.j:
        narrow.append(_gap_midpoint(narrow + [b[0] for b in broad], rate_lo, rate_hi))
    while len(broad) < target.k:
        r = _gap_midpoint(narrow + [b[0] for b in broad], rate_lo, rate_hi)
        broad.append((r, math.log(min(max(0.2 * math.exp(r), config.width_min), config.width_max))))
    out = np.array(narrow + [b[0] for b in broad] + [b[1] for b in broad], dtype=float)
    return np.clip(canonical(out, dst), lo, hi)


def search(data, config: FitConfig = DEFAULT, start: ModelSpec | None = None) -> SearchTrace:
    """Climb from ``start`` (default M1.0.0) to a local evidence maximum."""
    start = ModelSpec(1, 0, 0) if start is None else start
    trace = SearchTrace()

    def evaluate(spec: ModelSpec, source: LaplaceResult | None) -> TraceEntry:
        found = trace.entry(spec)
        if found is not None:
            return found
        init = warm_start(source, spec, config) if source is not None else None
        try:
            res = fit_model(data, spec, config, init=init)
            entry = TraceEntry(spec, res.log_model_evidence, res)
        except BayesDecayError as exc:
            log.info("evaluation of %s failed: %s", spec.label, exc)
            entry = TraceEntry(spec, -math.inf, error=str(exc))
        trace.visited.append(entry)
        return entry

    current = evaluate(start, None)
    trace.path.append(start)
    while True:
        cands = [evaluate(nb, current.result) for nb in neighbours(current.spec)]
        if not cands:
            break
        top = max(cands, key=lambda e: e.log_evidence)
        if top.log_evidence > current.log_evidence + config.eps_model:
            current = top
            trace.path.append(top.spec)
        else:
            break
    return trace


def posterior_over_models(trace: SearchTrace) -> list[tuple[ModelSpec, float]]:
    """Softmax of visited log evidences under equal model priors."""
    if not trace.visited:
        raise InputError("empty trace")
    logs = np.array([e.log_evidence for e in trace.visited])
    if not np.any(np.isfinite(logs)):
        probs = np.full(logs.size, 1.0 / logs.size)
    else:
        probs = np.exp(logs - logsumexp(logs))
    return [(e.spec, float(p)) for e, p in zip(trace.visited, probs)]
