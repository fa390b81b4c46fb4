"""Seeded synthetic experiments behind the acceptance checks.

Each experiment takes a frozen config, returns a result dataclass with the
raw per-run records and a ``passed`` property, and is deterministic given
the config. ``scripts/`` wraps these for the command line.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from bayesdecay.classify import TissueModel, classify_batch
from bayesdecay.config import DEFAULT, FitConfig
from bayesdecay.errors import BayesDecayError
from bayesdecay.evidence import DecayCurveSet, evaluate
from bayesdecay.inference import _Profile, fit_model, quadrature_log_integral, params_from_u
from bayesdecay.model_space import ModelSpec, layout
from bayesdecay.search import search
from bayesdecay.synth import Component, GeneratingSpec, simulate


M1 = ModelSpec(1, 0, 0)
M2 = ModelSpec(2, 0, 0)


def _spec(components, rel_noise: float, n_l: int, seed: int) -> GeneratingSpec:
    clean = GeneratingSpec(tuple(components))
    return GeneratingSpec(clean.components, sigma_s=rel_noise * clean.peak, n_l=n_l, seed=seed)


@dataclass
class Timed:
    seconds: float = 0.0


# -- sufficiency -------------------------------------------------------------


@dataclass(frozen=True)
class SufficiencyConfig:
    n_cases: int = 10
    seed: int = 0


@dataclass
class SufficiencyResult(Timed):
    identical: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.identical) and all(self.identical)


def sufficiency(cfg: SufficiencyConfig = SufficiencyConfig(), config: FitConfig = DEFAULT) -> SufficiencyResult:
    """Evidence records before and after permuting replicate columns."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    out = SufficiencyResult()
    models = [ModelSpec(1), ModelSpec(2), ModelSpec(1, 0, 1), ModelSpec(0, 1)]
    for case in range(cfg.n_cases):
        spec = models[case % len(models)]
        n_l = int(rng.integers(2, 9))
        data = simulate(_spec([Component(1.0, 30.0), Component(0.5, 120.0)], 0.02, n_l, cfg.seed + case), config)
        perm = rng.permutation(n_l)
        shuffled = DecayCurveSet(data.grid, data.d[:, perm])
        rates = np.sort(rng.uniform(np.log(10), np.log(300), spec.j + spec.k))
        widths = rng.uniform(np.log(5), np.log(40), spec.k)
        params = params_from_u(np.concatenate([rates, widths]), layout(spec))
        a = evaluate(params, data, spec, config).to_dict()
        b = evaluate(params, shuffled, spec, config).to_dict()
        out.identical.append(a == b)
    out.seconds = time.perf_counter() - t0
    return out


# -- model recovery and calibration -----------------------------------------


@dataclass(frozen=True)
class RecoveryConfig:
    n_runs: int = 50
    t2: tuple = (20.0, 80.0)
    amplitudes: tuple = (1.0, 1.0)
    rel_noise: float = 0.01
    n_l: int = 4
    seed: int = 0


@dataclass
class RecoveryRun:
    seed: int
    best: str
    margin: float
    ranked: list
    log_map: list
    log_sd: list


@dataclass
class RecoveryResult(Timed):
    config: RecoveryConfig = field(default_factory=RecoveryConfig)
    runs: list = field(default_factory=list)

    @property
    def selected_rate(self) -> float:
        return float(np.mean([r.best == M2.label for r in self.runs]))

    @property
    def m1_max_margin(self) -> float:
        wins = [r.margin for r in self.runs if r.best == M1.label]
        return max(wins) if wins else 0.0

    @property
    def passed(self) -> bool:
        return self.selected_rate >= 0.9 and self.m1_max_margin <= 1.0

    def coverage(self, k: float = 3.0) -> tuple[int, int]:
        """(covered, total) true log-T2 values inside MAP +- k sd over M2.0.0 runs."""
        truth = np.log(np.sort(self.config.t2))
        hits = total = 0
        for r in self.runs:
            if r.best != M2.label:
                continue
            u, s = np.asarray(r.log_map), np.asarray(r.log_sd)
            hits += int(np.sum(np.abs(u - truth) <= k * s))
            total += truth.size
        return hits, total

    @property
    def calibration_passed(self) -> bool:
        hits, total = self.coverage()
        return total > 0 and hits / total >= 0.9


def model_recovery(cfg: RecoveryConfig = RecoveryConfig(), config: FitConfig = DEFAULT) -> RecoveryResult:
    t0 = time.perf_counter()
    comps = [Component(a, t) for a, t in zip(cfg.amplitudes, cfg.t2)]
    out = RecoveryResult(config=cfg)
    for i in range(cfg.n_runs):
        seed = cfg.seed + i
        trace = search(simulate(_spec(comps, cfg.rel_noise, cfg.n_l, seed), config), config)
        best = trace.best_result
        out.runs.append(
            RecoveryRun(
                seed=seed,
                best=trace.best.label,
                margin=float(trace.log_odds_runner_up),
                ranked=[(e.spec.label, float(e.log_evidence)) for e in trace.ranked[:3]],
                log_map=[float(x) for x in best.u_map],
                log_sd=[float(x) for x in best.u_sd],
            )
        )
    out.seconds = time.perf_counter() - t0
    return out


# -- noise meta-parameter ----------------------------------------------------


@dataclass(frozen=True)
class NoiseConfig:
    n_l_values: tuple = (4, 16, 64)
    t2: tuple = (20.0, 80.0)
    rel_noise: float = 0.005
    seed: int = 0


@dataclass
class NoiseResult(Timed):
    n_l: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    sigma_s: list = field(default_factory=list)

    @property
    def sigma_spread(self) -> float:
        s = np.asarray(self.sigma)
        return float((s.max() - s.min()) / s.min())

    @property
    def sigma_s_growth(self) -> float:
        return self.sigma_s[-1] / self.sigma_s[0]

    @property
    def expected_growth(self) -> float:
        return math.sqrt(self.n_l[-1] / self.n_l[0])

    @property
    def passed(self) -> bool:
        g = self.expected_growth
        return self.sigma_spread < 0.10 and abs(self.sigma_s_growth - g) <= 0.2 * g


def noise_meta(cfg: NoiseConfig = NoiseConfig(), config: FitConfig = DEFAULT) -> NoiseResult:
    """Fit a single exponential to two-component data at growing n_l."""
    t0 = time.perf_counter()
    comps = [Component(1.0, t) for t in cfg.t2]
    out = NoiseResult()
    for n_l in cfg.n_l_values:
        ev = fit_model(simulate(_spec(comps, cfg.rel_noise, n_l, cfg.seed), config), M1, config).evidence
        out.n_l.append(n_l)
        out.sigma.append(ev.sigma_mode)
        out.sigma_s.append(ev.sigma_s_mode)
    out.seconds = time.perf_counter() - t0
    return out


# -- Laplace validity ----------------------------------------------------------


@dataclass(frozen=True)
class LaplaceConfig:
    single_t2: float = 80.0
    single_rel_noise: float = 0.01
    pair_t2: tuple = (60.0, 66.0)
    snr: float = 10.0
    seed: int = 0


@dataclass
class LaplaceCheck:
    laplace: float
    quadrature: float
    quadratic_ok: bool
    max_discrepancy: float
    fallback_used: bool

    @property
    def change(self) -> float:
        return abs(self.quadrature - self.laplace)


@dataclass
class LaplaceValidity(Timed):
    single: LaplaceCheck | None = None
    pair: LaplaceCheck | None = None

    @property
    def single_passed(self) -> bool:
        s = self.single
        return s.quadratic_ok and s.change <= 0.1

    @property
    def ratio(self) -> float:
        p = self.pair
        return p.change / p.max_discrepancy if p.max_discrepancy > 0 else math.inf

    @property
    def pair_passed(self) -> bool:
        p = self.pair
        return (not p.quadratic_ok) and p.fallback_used and 1 / 3 <= self.ratio <= 3

    @property
    def passed(self) -> bool:
        return self.single_passed and self.pair_passed


def _laplace_check(data, spec, config, force_quadrature: bool) -> LaplaceCheck:
    r = fit_model(data, spec, config)
    if force_quadrature and not r.valve.fallback_used:
        prof = _Profile(data, spec, config)
        quad = quadrature_log_integral(prof, r.u_map, r.hessian, prof.lo, prof.hi, batch=prof.batch)
    else:
        quad = r.log_model_evidence
    v = r.valve
    return LaplaceCheck(r.laplace_log_evidence, float(quad), v.quadratic_ok, float(v.max_discrepancy), v.fallback_used)


def laplace_validity(cfg: LaplaceConfig = LaplaceConfig(), config: FitConfig = DEFAULT) -> LaplaceValidity:
    """p=1 Laplace vs quadrature, and the near-degenerate two-rate valve case."""
    t0 = time.perf_counter()
    out = LaplaceValidity()
    one = simulate(_spec([Component(1.0, cfg.single_t2)], cfg.single_rel_noise, 1, cfg.seed), config)
    out.single = _laplace_check(one, M1, config, force_quadrature=True)
    pair = simulate(_spec([Component(1.0, t) for t in cfg.pair_t2], 1.0 / cfg.snr, 1, cfg.seed), config)
    out.pair = _laplace_check(pair, M2, config, force_quadrature=False)
    out.seconds = time.perf_counter() - t0
    return out


# -- Occam -------------------------------------------------------------------


@dataclass(frozen=True)
class OccamConfig:
    n_runs: int = 30
    t2: float = 80.0
    rel_noise: float = 0.01
    n_l: int = 1
    seed: int = 0


@dataclass
class OccamResult(Timed):
    differences: list = field(default_factory=list)

    @property
    def rate(self) -> float:
        return float(np.mean([d > 0 for d in self.differences]))

    @property
    def passed(self) -> bool:
        return self.rate >= 0.8


def occam(cfg: OccamConfig = OccamConfig(), config: FitConfig = DEFAULT) -> OccamResult:
    """log evidence(M1.0.0) - log evidence(M2.0.0) on single-component data."""
    t0 = time.perf_counter()
    out = OccamResult()
    for i in range(cfg.n_runs):
        data = simulate(_spec([Component(1.0, cfg.t2)], cfg.rel_noise, cfg.n_l, cfg.seed + i), config)
        a = fit_model(data, M1, config).log_model_evidence
        try:
            b = fit_model(data, M2, config).log_model_evidence
        except BayesDecayError:
            b = -math.inf
        out.differences.append(float(a - b))
    out.seconds = time.perf_counter() - t0
    return out


# -- classification ----------------------------------------------------------


@dataclass(frozen=True)
class ClassificationConfig:
    t2: tuple = (60.0, 100.0)
    rel_noise: float = 0.02
    n_train: int = 100
    n_test: int = 200
    seed: int = 0


@dataclass
class ClassificationBenchmark(Timed):
    tissues: tuple = ()
    models: dict = field(default_factory=dict)
    truth: list = field(default_factory=list)
    winners: list = field(default_factory=list)
    prob_sum_error: float = 0.0

    @property
    def accuracy(self) -> float:
        return float(np.mean([t == w for t, w in zip(self.truth, self.winners)]))

    @property
    def passed(self) -> bool:
        return self.accuracy >= 0.95 and self.prob_sum_error <= 1e-12


def classification(cfg: ClassificationConfig = ClassificationConfig(), config: FitConfig = DEFAULT) -> ClassificationBenchmark:
    """Train one summary per tissue from replicated curves; classify held-out single curves."""
    t0 = time.perf_counter()
    ids = tuple(f"T2_{t:g}ms" for t in cfg.t2)
    per_tissue = cfg.n_test // len(cfg.t2)
    out = ClassificationBenchmark(tissues=ids)
    summaries = []
    for i, (tid, t2) in enumerate(zip(ids, cfg.t2)):
        train = simulate(_spec([Component(1.0, t2)], cfg.rel_noise, cfg.n_train, cfg.seed + 2 * i), config)
        tm = TissueModel.fit(tid, train, config)
        out.models[tid] = tm.summary.model.label
        summaries.append(tm.summary)
    for i, (tid, t2) in enumerate(zip(ids, cfg.t2)):
        test = simulate(_spec([Component(1.0, t2)], cfg.rel_noise, per_tissue, cfg.seed + 2 * i + 1), config)
        for res in classify_batch(test, summaries, config=config):
            out.truth.append(tid)
            out.winners.append(res.winner)
            out.prob_sum_error = max(out.prob_sum_error, abs(float(np.sum(res.probs)) - 1.0))
    out.seconds = time.perf_counter() - t0
    return out
