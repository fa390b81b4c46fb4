"""Tissue classification by posterior-weighted predictive likelihood.

Each tissue is summarized by the Gaussian (Laplace) posterior of its best
model plus a few close alternates. A new curve's score for a tissue is the
log of the model-averaged predictive density, estimated by Monte Carlo over
draws of the log-T2 values, amplitudes and noise level. The draws depend on
the summary and seed only, so they are generated once and reused across
curves.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from bayesdecay.basis import TimeGrid, design_batch
from bayesdecay.config import DEFAULT, FitConfig
from bayesdecay.errors import GridMismatchError, InputError
from bayesdecay.evidence import DecayCurveSet
from bayesdecay.inference import LaplaceResult, canonical
from bayesdecay.model_space import ModelSpec, layout
from bayesdecay.synth import make_rng


@dataclass(frozen=True, eq=False)
class ModelPosterior:
    """Stored posterior approximation for one model of one tissue.

    The noise level is kept as a scaled inverse chi-square on sigma_s^2:
    sigma_s^2 = sigma_scale * nu / chi2_nu. ``nu = inf`` pins sigma_s^2 at
    ``sigma_scale``; ``hessian = None`` pins u at ``u_map``.
    """

    model: ModelSpec
    log_evidence: float
    u_map: np.ndarray
    hessian: np.ndarray | None
    amp_mean: np.ndarray
    amp_cov: np.ndarray
    sigma_nu: float
    sigma_scale: float

    def __post_init__(self):
        lay = layout(self.model)
        u = np.asarray(self.u_map, dtype=float)
        B = np.asarray(self.amp_mean, dtype=float)
        C = np.asarray(self.amp_cov, dtype=float)
        if u.shape != (lay.p,) or B.shape != (lay.m,) or C.shape != (lay.m, lay.m):
            raise InputError(f"stored posterior shapes do not match {self.model.label}")
        object.__setattr__(self, "u_map", u)
        object.__setattr__(self, "amp_mean", B)
        object.__setattr__(self, "amp_cov", C)
        if self.hessian is not None:
            H = np.asarray(self.hessian, dtype=float)
            if H.shape != (lay.p, lay.p):
                raise InputError(f"hessian must be {lay.p} x {lay.p}")
            if lay.p and np.linalg.eigvalsh(0.5 * (H + H.T))[0] <= 0:
                raise InputError(f"stored hessian of {self.model.label} is not positive definite")
            object.__setattr__(self, "hessian", H)
        if not (self.sigma_nu > 0 and self.sigma_scale > 0):
            raise InputError("sigma posterior needs positive nu and scale")

    @property
    def u_cov(self) -> np.ndarray:
        p = self.u_map.size
        if self.hessian is None or p == 0:
            return np.zeros((p, p))
        return np.linalg.inv(self.hessian)

    @classmethod
    def from_fit(cls, result: LaplaceResult) -> "ModelPosterior":
        ev = result.evidence
        return cls(
            model=result.spec,
            log_evidence=result.log_model_evidence,
            u_map=result.u_map,
            hessian=result.hessian,
            amp_mean=result.amplitude_means,
            amp_cov=result.amplitude_cov,
            sigma_nu=float(ev.nu),
            sigma_scale=ev.n_l * ev.residual / ev.nu,
        )

    @classmethod
    def point_mass(cls, model: ModelSpec, u, amplitudes, sigma_s: float) -> "ModelPosterior":
        m = layout(model).m
        return cls(model, 0.0, np.asarray(u, dtype=float), None, amplitudes, np.zeros((m, m)), math.inf, sigma_s**2)

    def to_dict(self) -> dict:
        return {
            "model": self.model.label,
            "include_aer": self.model.include_aer,
            "log_evidence": self.log_evidence,
            "u_map": self.u_map.tolist(),
            "hessian": None if self.hessian is None else self.hessian.tolist(),
            "amp_mean": self.amp_mean.tolist(),
            "amp_cov": self.amp_cov.tolist(),
            "sigma_nu": None if math.isinf(self.sigma_nu) else self.sigma_nu,
            "sigma_scale": self.sigma_scale,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelPosterior":
        try:
            spec = ModelSpec.parse(doc["model"])
            if not doc.get("include_aer", True):
                spec = ModelSpec(spec.j, spec.k, spec.l, include_aer=False)
            nu = doc.get("sigma_nu")
            return cls(
                model=spec,
                log_evidence=float(doc["log_evidence"]),
                u_map=np.asarray(doc["u_map"], dtype=float),
                hessian=None if doc.get("hessian") is None else np.asarray(doc["hessian"], dtype=float),
                amp_mean=np.asarray(doc["amp_mean"], dtype=float),
                amp_cov=np.asarray(doc["amp_cov"], dtype=float),
                sigma_nu=math.inf if nu is None else float(nu),
                sigma_scale=float(doc["sigma_scale"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"invalid model posterior: {exc}") from exc


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    """Best model and alternates for one tissue; ``entries[0]`` is the best."""

    tissue_id: str
    grid: TimeGrid
    entries: tuple[ModelPosterior, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise InputError("a posterior summary needs at least one model")

    @property
    def model(self) -> ModelSpec:
        return self.entries[0].model

    @property
    def alternates(self) -> tuple[ModelPosterior, ...]:
        return self.entries[1:]

    @property
    def log_weights(self) -> np.ndarray:
        """Normalized log model probabilities over the stored entries."""
        z = np.array([e.log_evidence for e in self.entries])
        return z - logsumexp(z)

    @classmethod
    def from_results(cls, tissue_id: str, grid: TimeGrid, results, config: FitConfig = DEFAULT) -> "PosteriorSummary":
        """Keep the best result plus alternates within the log-odds window.

        Results whose Hessian is not positive definite cannot define a
        Gaussian and are skipped.
        """
        usable = []
        for r in sorted(results, key=lambda r: (-r.log_model_evidence, r.spec)):
            try:
                usable.append(ModelPosterior.from_fit(r))
            except InputError:
                continue
        if not usable:
            raise InputError(f"no usable model posterior for tissue {tissue_id!r}")
        best = usable[0].log_evidence
        alts = [e for e in usable[1:] if best - e.log_evidence <= config.alternates_window]
        return cls(tissue_id, grid, (usable[0], *alts[: config.max_alternates]))

    @classmethod
    def from_trace(cls, tissue_id: str, grid: TimeGrid, trace, config: FitConfig = DEFAULT) -> "PosteriorSummary":
        results = [e.result for e in trace.visited if e.result is not None]
        return cls.from_results(tissue_id, grid, results, config)

    def to_dict(self) -> dict:
        return {
            "tissue_id": self.tissue_id,
            "t_ms": self.grid.t.tolist(),
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PosteriorSummary":
        try:
            return cls(
                tissue_id=str(doc["tissue_id"]),
                grid=TimeGrid(np.asarray(doc["t_ms"], dtype=float)),
                entries=tuple(ModelPosterior.from_dict(e) for e in doc["entries"]),
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"invalid posterior summary: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "PosteriorSummary":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read posterior summary {path}: {exc}") from exc
        return cls.from_dict(doc)


@dataclass(frozen=True)
class _Draws:
    # predicted mean curves (S, n), noise sd (S,), and log weight per draw
    mean: np.ndarray
    sd: np.ndarray
    log_w: np.ndarray


def _model_draws(entry: ModelPosterior, grid: TimeGrid, S: int, rng, config: FitConfig) -> tuple[np.ndarray, np.ndarray]:
    lay = layout(entry.model)
    p = lay.p
    if p:
        if entry.hessian is None:
            U = np.tile(entry.u_map, (S, 1))
        else:
            U = rng.multivariate_normal(entry.u_map, entry.u_cov, size=S, method="eigh")
        U = np.array([canonical(u, lay) for u in U])
    else:
        U = np.zeros((S, 0))
    if np.any(entry.amp_cov):
        B = rng.multivariate_normal(entry.amp_mean, entry.amp_cov, size=S, method="eigh")
    else:
        B = np.tile(entry.amp_mean, (S, 1))
    if math.isinf(entry.sigma_nu):
        var = np.full(S, entry.sigma_scale)
    else:
        var = entry.sigma_scale * entry.sigma_nu / rng.chisquare(entry.sigma_nu, size=S)
    with np.errstate(over="ignore"):
        G, ok = design_batch(entry.model, grid, np.exp(U), config)
    mean = np.einsum("sm,smn->sn", B, G)
    sd = np.sqrt(var)
    # draws with an undefined basis contribute nothing
    sd = np.where(ok, sd, np.nan)
    return mean, sd


@lru_cache(maxsize=256)
def _draws(summary: PosteriorSummary, S: int, seed: int, config: FitConfig) -> _Draws:
    rng = make_rng(seed)
    means, sds, logw = [], [], []
    for entry, lw in zip(summary.entries, summary.log_weights):
        mean, sd = _model_draws(entry, summary.grid, S, rng, config)
        means.append(mean)
        sds.append(sd)
        logw.append(np.full(S, lw - math.log(S)))
    return _Draws(np.vstack(means), np.concatenate(sds), np.concatenate(logw))


def _check_curves(curves: DecayCurveSet, summary: PosteriorSummary):
    if curves.grid != summary.grid:
        raise GridMismatchError(f"curve grid does not match the training grid of tissue {summary.tissue_id!r}")


def _scores(Y: np.ndarray, draws: _Draws) -> np.ndarray:
    """Log predictive density of each column of Y (n x K)."""
    n = Y.shape[0]
    valid = np.isfinite(draws.sd)
    mean, sd, log_w = draws.mean[valid], draws.sd[valid], draws.log_w[valid]
    if mean.shape[0] == 0:
        return np.full(Y.shape[1], -np.inf)
    sq = np.empty((mean.shape[0], Y.shape[1]))
    for k in range(0, Y.shape[1], 64):
        block = Y[None, :, k : k + 64] - mean[:, :, None]
        sq[:, k : k + 64] = np.sum(block**2, axis=1)
    ll = -0.5 * n * np.log(2 * np.pi * sd**2)[:, None] - sq / (2 * sd**2)[:, None]
    return logsumexp(ll + log_w[:, None], axis=0)


def predictive_log_likelihood(
    d_new: DecayCurveSet, summary: PosteriorSummary, S: int | None = None, seed: int | None = None,
    config: FitConfig = DEFAULT,
) -> float:
    """log sum_M w_M (1/S) sum_s p(d_new | draw s of model M)."""
    if d_new.n_l != 1:
        raise InputError(f"expected a single decay curve, got {d_new.n_l} replicates")
    _check_curves(d_new, summary)
    S = config.draws if S is None else int(S)
    seed = config.seed if seed is None else int(seed)
    return float(_scores(d_new.d, _draws(summary, S, seed, config))[0])


@dataclass(frozen=True)
class ClassificationResult:
    tissue_ids: tuple[str, ...]
    scores: np.ndarray
    probs: np.ndarray
    winner: str

    def to_dict(self) -> dict:
        return {
            "winner": self.winner,
            "scores": dict(zip(self.tissue_ids, self.scores.tolist())),
            "probs": dict(zip(self.tissue_ids, self.probs.tolist())),
        }


def _result(ids, scores) -> ClassificationResult:
    scores = np.asarray(scores, dtype=float)
    if np.all(np.isneginf(scores)):
        probs = np.full(scores.size, 1.0 / scores.size)
    else:
        w = np.exp(scores - np.max(scores))
        probs = w / w.sum()
    best = np.max(scores)
    winner = min(t for t, s in zip(ids, scores) if s == best)
    return ClassificationResult(tuple(ids), scores, probs, winner)


def _prepare(summaries):
    summaries = list(summaries)
    if not summaries:
        raise InputError("classification needs at least one tissue summary")
    ids = [s.tissue_id for s in summaries]
    if len(set(ids)) != len(ids):
        raise InputError("tissue ids must be unique")
    return summaries, ids


def classify(
    d_new: DecayCurveSet, summaries, S: int | None = None, seed: int | None = None, config: FitConfig = DEFAULT
) -> ClassificationResult:
    summaries, ids = _prepare(summaries)
    scores = [predictive_log_likelihood(d_new, s, S, seed, config) for s in summaries]
    return _result(ids, scores)


def classify_batch(
    curves: DecayCurveSet, summaries, S: int | None = None, seed: int | None = None, config: FitConfig = DEFAULT
) -> list[ClassificationResult]:
    """Classify every column of ``curves`` as a separate single curve."""
    summaries, ids = _prepare(summaries)
    S = config.draws if S is None else int(S)
    seed = config.seed if seed is None else int(seed)
    table = []
    for s in summaries:
        _check_curves(curves, s)
        table.append(_scores(curves.d, _draws(s, S, seed, config)))
    table = np.array(table)
    return [_result(ids, table[:, k]) for k in range(curves.n_l)]


@dataclass
class TissueModel:
    """Convenience bundle: fit a tissue's training curves and keep the summary."""

    tissue_id: str
    summary: PosteriorSummary = field(repr=False)

    @classmethod
    def fit(cls, tissue_id: str, training: DecayCurveSet, config: FitConfig = DEFAULT) -> "TissueModel":
        from bayesdecay.search import search

        trace = search(training, config)
        return cls(tissue_id, PosteriorSummary.from_trace(tissue_id, training.grid, trace, config))
