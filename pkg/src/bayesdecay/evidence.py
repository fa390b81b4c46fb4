"""Likelihood, amplitude and sigma marginalization for a fixed set of T2 values.

All quantities are natural logs. ``sigma`` is always the per-mean-curve noise
scale, sigma = sigma_s / sqrt(n_l), where sigma_s is the per-measurement
standard deviation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np
from scipy.special import gammaln, ndtr

from bayesdecay.basis import NonlinearParams, TimeGrid, design_batch as _design_batch, eval_basis, gram, project_data
from bayesdecay.config import DEFAULT, FitConfig
from bayesdecay.errors import DegenerateFitError, DomainError, InputError, SingularBasisError
from bayesdecay.model_space import ModelSpec, layout


@dataclass(frozen=True)
class DecayCurveSet:
    """Replicated decay curves: ``d[i, l]`` is replicate l at time ``grid.t[i]``."""

    grid: TimeGrid
    d: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        if d.ndim == 1:
            d = d[:, None]
        if d.ndim != 2 or d.shape[0] != self.grid.n:
            raise InputError(f"data must be {self.grid.n} x n_l, got shape {d.shape}")
        if d.shape[1] < 1:
            raise InputError("need at least one replicate")
        if not np.all(np.isfinite(d)):
            raise InputError("data contain non-finite values")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def n_l(self) -> int:
        return self.d.shape[1]

    def replicate(self, idx) -> "DecayCurveSet":
        return DecayCurveSet(self.grid, self.d[:, idx])


@dataclass(frozen=True)
class SufficientStats:
    dbar: np.ndarray
    msq: float
    n: int
    n_l: int

    @cached_property
    def amp_scale(self) -> float:
        return float(np.max(np.abs(self.dbar)))

    @property
    def within_ss(self) -> float:
        """Replicate scatter about the per-time means, summed and divided by n_l."""
        return max(self.n * self.msq - float(np.sum(self.dbar**2)), 0.0)


def sufficient_stats(data: DecayCurveSet) -> SufficientStats:
    # sorting each row of a C-ordered copy fixes the summation order, so the
    # sums do not depend on replicate order or memory layout
    rows = np.sort(np.ascontiguousarray(data.d), axis=1)
    dbar = rows.sum(axis=1) / data.n_l
    msq = float((rows**2).sum() / (data.n * data.n_l))
    return SufficientStats(dbar, msq, data.n, data.n_l)


@dataclass(frozen=True)
class LinearFit:
    """Least-squares structure of the amplitudes at fixed nonlinear parameters."""

    G: np.ndarray
    g: np.ndarray
    F: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    h2: float
    log_det_g: float
    B_hat: np.ndarray
    stats: SufficientStats

    @property
    def m(self) -> int:
        return self.F.size

    @property
    def residual(self) -> float:
        """R = n * msq - h2, the minimum of Q over the amplitudes."""
        return self.stats.n * self.stats.msq - self.h2

    @property
    def mean_residual(self) -> float:
        """Misfit of the mean curve alone, excluding replicate scatter."""
        return float(np.sum(self.stats.dbar**2)) - self.h2

    def g_inv(self) -> np.ndarray:
        V, lam = self.eigvecs, self.eigvals
        return (V / lam) @ V.T

    def box_log_mass(self, sigma: float, half_range: float) -> float:
        """log P(B inside the prior box) under N(B_hat, sigma^2 g^-1), axis by axis."""
        s = sigma * np.sqrt(np.sum(self.eigvecs**2 / self.eigvals, axis=1))
        return float(_box_log_mass(self.B_hat, s, half_range))


def linear_fit(params: NonlinearParams, data: DecayCurveSet, spec: ModelSpec, config: FitConfig = DEFAULT, stats=None) -> LinearFit:
    stats = sufficient_stats(data) if stats is None else stats
    G = eval_basis(spec, data.grid, params, config).G
    g = gram(G)
    F = project_data(G, stats.dbar)
    lam, V = np.linalg.eigh(g)
    if lam[-1] <= 0 or lam[0] < config.eig_rel_tol * lam[-1]:
        raise SingularBasisError(
            f"Gram matrix of {spec.label} is singular (eigenvalue ratio {lam[0] / max(lam[-1], 1e-300):.2e})"
        )
    proj = V.T @ F
    h2 = float(np.sum(proj**2 / lam))
    B_hat = V @ (proj / lam)
    return LinearFit(G, g, F, lam, V, h2, float(np.sum(np.log(lam))), B_hat, stats)


def _box_log_mass(centre, sd, half_range):
    hi = ndtr((half_range - centre) / sd)
    lo = ndtr((-half_range - centre) / sd)
    return np.sum(np.log(np.clip(hi - lo, 1e-300, None)), axis=-1)


def _amp_log_range(stats: SufficientStats, config: FitConfig) -> float:
    scale = stats.amp_scale
    if scale <= 0:
        raise DegenerateFitError("all-zero data: amplitude prior range is empty")
    return math.log(2 * config.amp_range_factor * scale)


def _sigma_log_log_range(config: FitConfig) -> float:
    return math.log(math.log(config.sigma_max_factor / config.sigma_min_factor))


def quadratic_form(B, fit: LinearFit) -> float:
    """Q = n*msq - 2 B.F + B.g.B."""
    B = np.asarray(B, dtype=float)
    return fit.stats.n * fit.stats.msq - 2 * B @ fit.F + B @ fit.g @ B


def conditional_log_likelihood(B, params, sigma, data, spec, config: FitConfig = DEFAULT) -> float:
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    stats = sufficient_stats(data)
    G = eval_basis(spec, data.grid, params, config).G
    F = project_data(G, stats.dbar)
    B = np.asarray(B, dtype=float)
    Q = stats.n * stats.msq - 2 * B @ F + B @ gram(G) @ B
    N = stats.n * stats.n_l
    return -0.5 * N * math.log(2 * math.pi * stats.n_l * sigma**2) - Q / (2 * sigma**2)


def amplitude_marginal(params, sigma, data, spec, config: FitConfig = DEFAULT) -> float:
    """log of the likelihood integrated over the flat amplitude prior at fixed sigma.

    The Gaussian integral over all of R^m is multiplied by the (axis-wise)
    probability mass that falls inside the prior box; for well-determined
    amplitudes that factor is 1 to machine precision.
    """
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    fit = linear_fit(params, data, spec, config)
    st = fit.stats
    N = st.n * st.n_l
    m = fit.m
    half = config.amp_range_factor * st.amp_scale
    return (
        -0.5 * N * math.log(2 * math.pi * st.n_l * sigma**2)
        + 0.5 * m * math.log(2 * math.pi * sigma**2)
        - 0.5 * fit.log_det_g
        - fit.residual / (2 * sigma**2)
        - m * _amp_log_range(st, config)
        + fit.box_log_mass(sigma, half)
    )


def _evidence_formula(N, n_l, m, log_det_g, R, box_log_mass, amp_log_range, config):
    """Closed-form sigma integral under the Jeffreys prior; works on arrays."""
    nu = N - m
    return (
        -0.5 * N * np.log(2 * np.pi * n_l)
        + 0.5 * m * np.log(2 * np.pi)
        - 0.5 * log_det_g
        - m * amp_log_range
        - _sigma_log_log_range(config)
        + gammaln(0.5 * nu)
        - 0.5 * nu * np.log(0.5 * R)
        - np.log(2.0)
        + box_log_mass
    )


def log_evidence_from_fit(fit: LinearFit, config: FitConfig = DEFAULT) -> float:
    st = fit.stats
    N = st.n * st.n_l
    m = fit.m
    nu = N - m
    R = fit.residual
    if nu < 1:
        raise DegenerateFitError(f"{m} amplitudes leave no degrees of freedom for {N} data")
    if not R > 1e-14 * max(st.n * st.msq, 1e-300):
        raise DegenerateFitError("model reproduces the data exactly (R <= 0)")
    # box correction evaluated at the mode of the sigma integrand
    sigma_hat = math.sqrt(R / (nu + 1))
    box = fit.box_log_mass(sigma_hat, config.amp_range_factor * st.amp_scale)
    return float(_evidence_formula(N, st.n_l, m, fit.log_det_g, R, box, _amp_log_range(st, config), config))


def batch_log_evidence(P, data: DecayCurveSet, spec: ModelSpec, config: FitConfig = DEFAULT, stats=None) -> np.ndarray:
    """``sigma_marginal_log_evidence`` for a stack of parameter vectors.

    ``P`` has shape (N, p) holding canonical (rates, widths) in ms. Invalid
    points (singular Gram matrix, exact fit, non-physical support) give -inf.
    """
    stats = sufficient_stats(data) if stats is None else stats
    lay = layout(spec)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    G, ok = _design_batch(spec, data.grid, P, config)
    g = G @ np.swapaxes(G, 1, 2)
    F = G @ stats.dbar
    lam, V = np.linalg.eigh(g)
    ok &= (lam[:, -1] > 0) & (lam[:, 0] >= config.eig_rel_tol * lam[:, -1])
    lam = np.where(ok[:, None], lam, 1.0)
    proj = np.einsum("kji,kj->ki", V, F)
    h2 = np.sum(proj**2 / lam, axis=1)
    B_hat = np.einsum("kij,kj->ki", V, proj / lam)
    N = stats.n * stats.n_l
    nu = N - lay.m
    R = stats.n * stats.msq - h2
    ok &= R > 1e-14 * max(stats.n * stats.msq, 1e-300)
    R = np.where(ok, R, 1.0)
    sigma_hat = np.sqrt(R / (nu + 1))
    sd = sigma_hat[:, None] * np.sqrt(np.sum(V**2 / lam[:, None, :], axis=2))
    box = _box_log_mass(B_hat, sd, config.amp_range_factor * stats.amp_scale)
    out = _evidence_formula(
        N, stats.n_l, lay.m, np.sum(np.log(lam), axis=1), R, box, _amp_log_range(stats, config), config
    )
    return np.where(ok, out, -np.inf)


def sigma_marginal_log_evidence(params, data, spec, config: FitConfig = DEFAULT) -> float:
    """log p(D | T2 values, M) with amplitudes and sigma integrated out."""
    return log_evidence_from_fit(linear_fit(params, data, spec, config), config)


@dataclass(frozen=True)
class SigmaSummary:
    mode: float
    mean: float
    sd: float
    s_mode: float
    nu: float
    R: float


def inverse_gamma_sigma(R: float, nu: float, n_l: int = 1) -> SigmaSummary:
    """Summaries of p(sigma) proportional to sigma^-(nu+1) exp(-R / (2 sigma^2))."""
    if nu < 2:
        raise DegenerateFitError(f"sigma posterior needs nu >= 2, got {nu}")
    if not R > 0:
        raise DegenerateFitError("sigma posterior needs a positive residual")
    mode = math.sqrt(R / (nu + 1))
    mean = math.sqrt(R / 2) * math.exp(gammaln((nu - 1) / 2) - gammaln(nu / 2))
    sd = math.sqrt(max(R / (nu - 2) - mean**2, 0.0)) if nu > 2 else math.inf
    return SigmaSummary(mode, mean, sd, mode * math.sqrt(n_l), nu, R)


def sigma_posterior(params, data, spec, config: FitConfig = DEFAULT, from_replicates: bool = False) -> SigmaSummary:
    """Posterior of sigma given the T2 values.

    By default sigma is read off the mean curve, whose noise variance is
    sigma_s^2 / n_l: residual R = sum(dbar^2) - h2 with nu = n - m. A model
    that misses a systematic effect then yields a sigma that settles as n_l
    grows while sigma_s = sigma * sqrt(n_l) keeps increasing.
    ``from_replicates=True`` uses every replicate (R = n*msq - h2,
    nu = n*n_l - m), the posterior implied by the full likelihood.
    """
    fit = linear_fit(params, data, spec, config)
    return _sigma_from_fit(fit, from_replicates)


def _sigma_from_fit(fit: LinearFit, from_replicates: bool) -> SigmaSummary:
    st = fit.stats
    if from_replicates:
        return inverse_gamma_sigma(fit.residual, st.n * st.n_l - fit.m, st.n_l)
    return inverse_gamma_sigma(fit.mean_residual, st.n - fit.m, st.n_l)


@dataclass(frozen=True)
class EvidenceResult:
    model: str
    log_evidence: float
    h2: float
    residual: float
    log_det_g: float
    m: int
    p: int
    n: int
    n_l: int
    nu: int
    sigma_mode: float
    sigma_mean: float
    sigma_sd: float
    sigma_s_mode: float
    sigma_s_pooled_mode: float

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(params, data, spec, config: FitConfig = DEFAULT) -> EvidenceResult:
    fit = linear_fit(params, data, spec, config)
    return evidence_result(fit, spec, config)


def evidence_result(fit: LinearFit, spec: ModelSpec, config: FitConfig = DEFAULT, log_evidence: float | None = None) -> EvidenceResult:
    st = fit.stats
    if log_evidence is None:
        log_evidence = log_evidence_from_fit(fit, config)
    mean_curve = _sigma_from_fit(fit, False)
    pooled = _sigma_from_fit(fit, True)
    return EvidenceResult(
        model=spec.label,
        log_evidence=float(log_evidence),
        h2=fit.h2,
        residual=fit.residual,
        log_det_g=fit.log_det_g,
        m=fit.m,
        p=layout(spec).p,
        n=st.n,
        n_l=st.n_l,
        nu=st.n * st.n_l - fit.m,
        sigma_mode=mean_curve.mode,
        sigma_mean=mean_curve.mean,
        sigma_sd=mean_curve.sd,
        sigma_s_mode=mean_curve.s_mode,
        sigma_s_pooled_mode=pooled.s_mode,
    )


def amplitude_posterior(fit: LinearFit) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the amplitudes at fixed T2 values, sigma integrated."""
    st = fit.stats
    nu = st.n * st.n_l - fit.m
    sigma2 = fit.residual / (nu - 2) if nu > 2 else fit.residual / max(nu, 1)
    return fit.B_hat.copy(), fit.g_inv() * sigma2
