"""Integration over the nonlinear parameters.

The T2 values and widths are handled in log space, u = ln(tau), where the
Jeffreys prior is uniform and the profile log posterior is close to quadratic
around its peak. The peak is found by a bounded quasi-Newton search, the
integral by a Laplace approximation, and a probe-based safety valve checks the
quadratic assumption before falling back to adaptive quadrature for p <= 2.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammaln, ndtr

from bayesdecay.basis import NonlinearParams
from bayesdecay.config import DEFAULT, FitConfig
from bayesdecay.errors import InputError, NumericError, OptimizerError
from bayesdecay.evidence import (
    EvidenceResult,
    amplitude_posterior,
    batch_log_evidence,
    evidence_result,
    linear_fit,
    log_evidence_from_fit,
    sufficient_stats,
)
from bayesdecay.model_space import ModelSpec, ParameterLayout, layout

log = logging.getLogger(__name__)

_BAD = 1e10


def log_bounds(lay: ParameterLayout, config: FitConfig = DEFAULT) -> tuple[np.ndarray, np.ndarray]:
    lo = np.empty(lay.p)
    hi = np.empty(lay.p)
    lo[lay.rate_slice()] = math.log(config.t2_min)
    hi[lay.rate_slice()] = math.log(config.t2_max)
    lo[lay.width_slice()] = math.log(config.width_min)
    hi[lay.width_slice()] = math.log(config.width_max)
    return lo, hi


def log_prior_constant(lay: ParameterLayout, config: FitConfig = DEFAULT) -> float:
    """Log density of the uniform-in-u prior on the ordered region.

    Narrow and broadened components are exchangeable within their groups, so
    restricting to sorted rates multiplies the box density by j! k!.
    """
    lo, hi = log_bounds(lay, config)
    return -float(np.sum(np.log(hi - lo))) + gammaln(lay.spec.j + 1) + gammaln(lay.spec.k + 1)


def canonical(u, lay: ParameterLayout) -> np.ndarray:
    """Sort narrow log-rates, and broadened (rate, width) pairs by rate."""
    u = np.array(u, dtype=float)
    u[lay.narrow_slice()] = np.sort(u[lay.narrow_slice()])
    k = lay.spec.k
    if k > 1:
        rates = u[lay.broad_rate_slice()]
        widths = u[lay.width_slice()]
        order = np.argsort(rates, kind="stable")
        u[lay.broad_rate_slice()] = rates[order]
        u[lay.width_slice()] = widths[order]
    return u


def params_from_u(u, lay: ParameterLayout) -> NonlinearParams:
    return NonlinearParams.from_vector(np.exp(canonical(u, lay)), lay)


class _Profile:
    """Callable l(u) with the sufficient statistics computed once."""

    def __init__(self, data, spec: ModelSpec, config: FitConfig = DEFAULT):
        self.data = data
        self.spec = spec
        self.config = config
        self.lay = layout(spec)
        self.stats = sufficient_stats(data)
        self.prior = log_prior_constant(self.lay, config)
        self.lo, self.hi = log_bounds(self.lay, config)

    def __call__(self, u) -> float:
        params = params_from_u(u, self.lay)
        fit = linear_fit(params, self.data, self.spec, self.config, stats=self.stats)
        return log_evidence_from_fit(fit, self.config) + self.prior

    def batch(self, U) -> np.ndarray:
        """l at each row of ``U``; -inf where the evidence is undefined."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        U = U.copy()
        lay = self.lay
        U[:, lay.narrow_slice()] = np.sort(U[:, lay.narrow_slice()], axis=1)
        if lay.spec.k > 1:
            order = np.argsort(U[:, lay.broad_rate_slice()], axis=1, kind="stable")
            U[:, lay.broad_rate_slice()] = np.take_along_axis(U[:, lay.broad_rate_slice()], order, axis=1)
            U[:, lay.width_slice()] = np.take_along_axis(U[:, lay.width_slice()], order, axis=1)
        P = np.exp(U)
        return batch_log_evidence(P, self.data, self.spec, self.config, self.stats) + self.prior

    def safe(self, u) -> float:
        try:
            return self(u)
        except NumericError:
            return -math.inf

    def in_bounds(self, u) -> bool:
        u = np.asarray(u)
        return bool(np.all(u >= self.lo) and np.all(u <= self.hi))

    def barrier(self, u) -> float:
        narrow = np.sort(np.asarray(u)[self.lay.narrow_slice()])
        gaps = np.diff(narrow)
        s = self.config.min_separation
        short = np.clip(s - gaps, 0.0, None) / s
        return -100.0 * float(np.sum(short**2))


def profile_log_posterior(u, data, spec: ModelSpec, config: FitConfig = DEFAULT) -> float:
    """l(u): log evidence at tau = exp(u) plus the uniform log-prior density."""
    prof = _Profile(data, spec, config)
    u = np.asarray(u, dtype=float)
    if u.shape != (prof.lay.p,):
        raise InputError(f"{spec.label} has {prof.lay.p} nonlinear parameters, got {u.size}")
    if not prof.in_bounds(u):
        raise InputError("log-parameters outside the prior bounds")
    return prof(u)


def _gradient_points(u, step):
    eye = np.eye(u.size) * step
    return np.vstack([u + eye, u - eye])


def _hessian_points(u, step):
    p = u.size
    eye = np.eye(p) * step
    pts = [u[None, :], u + eye, u - eye]
    for i in range(p):
        for j in range(i + 1, p):
            pts.append(np.vstack([u + eye[i] + eye[j], u + eye[i] - eye[j], u - eye[i] + eye[j], u - eye[i] - eye[j]]))
    return np.vstack(pts)


def _evaluate(f, U, batch):
    return batch(U) if batch is not None else np.array([f(x) for x in U])


def numeric_gradient(f, u, step: float, batch=None) -> np.ndarray:
    """Central differences; ``batch`` evaluates all stencil points in one call."""
    u = np.asarray(u, dtype=float)
    vals = _evaluate(f, _gradient_points(u, step), batch)
    return (vals[: u.size] - vals[u.size :]) / (2 * step)


def numeric_hessian(f, u, step: float, batch=None) -> np.ndarray:
    """Negative second derivatives of f by central differences, symmetrized."""
    u = np.asarray(u, dtype=float)
    p = u.size
    vals = _evaluate(f, _hessian_points(u, step), batch)
    f0 = vals[0]
    plus, minus = vals[1 : p + 1], vals[p + 1 : 2 * p + 1]
    H = np.diag(-(plus - 2 * f0 + minus) / step**2)
    k = 2 * p + 1
    for i in range(p):
        for j in range(i + 1, p):
            pp, pm, mp, mm = vals[k : k + 4]
            k += 4
            H[i, j] = H[j, i] = -(pp - pm - mp + mm) / (4 * step**2)
    return 0.5 * (H + H.T)


def refine_hessian(batch, u, hessian, span: float, z_step: float = 0.3, rounds: int = 2) -> np.ndarray:
    """Re-estimate the Hessian on a stencil aligned with its own eigenvectors.

    A fixed step in u is too coarse along stiff directions and too fine along
    soft ones; when stiff directions nearly cancel, the truncation error can
    flip the sign of a small eigenvalue. Stepping ``z_step`` local standard
    deviations along each eigenvector keeps every difference quotient at a
    comparable, modest drop.
    """
    u = np.asarray(u, dtype=float)
    H = np.asarray(hessian, dtype=float)
    for _ in range(rounds):
        if not np.all(np.isfinite(H)):
            break
        lam, V = np.linalg.eigh(0.5 * (H + H.T))
        scale = np.minimum(1.0 / np.sqrt(np.maximum(np.abs(lam), 1e-300)), span)
        W = V * scale

        def in_z(Z, W=W):
            return batch(u + np.atleast_2d(Z) @ W.T)

        Hz = numeric_hessian(None, np.zeros(u.size), z_step, batch=in_z)
        if not np.all(np.isfinite(Hz)):
            break
        Winv = V.T / scale[:, None]
        H = Winv.T @ Hz @ Winv
    return 0.5 * (H + H.T)


def stratified_starts(lay: ParameterLayout, n: int, config: FitConfig = DEFAULT) -> list[np.ndarray]:
    """Log-rates spread over [T2_min, T2_max] in n shifted strata."""
    lo, hi = log_bounds(lay, config)
    nr = lay.n_decay
    starts = []
    for r in range(n):
        u = np.empty(lay.p)
        frac = (np.arange(nr) + (r + 0.5) / n) / nr
        u[lay.rate_slice()] = lo[0] + (hi[0] - lo[0]) * frac
        if lay.spec.k:
            broad = np.exp(u[lay.broad_rate_slice()])
            u[lay.width_slice()] = np.log(np.clip(0.2 * broad, config.width_min, config.width_max))
        starts.append(canonical(u, lay))
    return starts


@dataclass
class MapResult:
    u: np.ndarray
    value: float
    hessian: np.ndarray
    gradient: np.ndarray
    converged: bool
    pinned: bool
    n_starts: int


def map_estimate(data, spec: ModelSpec, init=None, config: FitConfig = DEFAULT) -> MapResult:
    """Maximize l(u) from ``init`` plus stratified restarts."""
    prof = _Profile(data, spec, config)
    lay = prof.lay
    lo, hi = prof.lo, prof.hi
    bounds = list(zip(lo, hi))

    def penalized(U):
        vals = prof.batch(U) + np.array([prof.barrier(x) for x in U])
        return np.where(np.isfinite(vals), -vals, _BAD)

    def objective(u):
        # value and central-difference gradient from one batched stencil
        u = np.asarray(u, dtype=float)
        vals = penalized(np.vstack([u[None, :], _gradient_points(u, config.grad_step)]))
        p = u.size
        return vals[0], (vals[1 : p + 1] - vals[p + 1 :]) / (2 * config.grad_step)

    starts = [] if init is None else [np.clip(canonical(init, lay), lo, hi)]
    starts += stratified_starts(lay, config.n_restarts, config)

    best = None
    hit_limit = False
    for u0 in starts:
        res = optimize.minimize(
            objective,
            u0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": config.max_iter, "ftol": 1e-11, "gtol": 1e-8},
        )
        if res.fun < _BAD and (best is None or res.fun < best.fun):
            best = res
            hit_limit = res.nit >= config.max_iter
    if best is None:
        raise OptimizerError(f"no finite starting point for {spec.label}")

    u = canonical(best.x, lay)
    u = _newton_polish(prof, u, config)
    value = prof(u)
    H = numeric_hessian(None, u, config.hess_step, batch=prof.batch)
    if not np.all(np.isfinite(H)):
        H = numeric_hessian(None, u, config.hess_step * 0.1, batch=prof.batch)
    H = refine_hessian(prof.batch, u, H, float(np.max(hi - lo)))
    g = numeric_gradient(None, u, config.grad_step, batch=prof.batch)

    width = hi - lo
    at_lo = u - lo < 1e-6 * width
    at_hi = hi - u < 1e-6 * width
    pinned = bool(np.any(at_lo | at_hi))
    free = ~((at_lo & (g < 0)) | (at_hi & (g > 0)))
    gtol = 1e-4 * abs(value) + 1e-6
    converged = bool(np.all(np.abs(g[free]) < gtol)) if np.all(np.isfinite(g)) else False
    if not converged and hit_limit:
        raise OptimizerError(f"optimizer did not converge for {spec.label}", best=u)
    if pinned:
        log.debug("%s: MAP pinned at a prior bound", spec.label)
    return MapResult(u, value, H, g, converged, pinned, len(starts))


def _newton_polish(prof: _Profile, u, config: FitConfig, max_steps: int = 8) -> np.ndarray:
    def f(x):
        return float(prof.batch(x)[0])

    current = f(u)
    for _ in range(max_steps):
        H = numeric_hessian(None, u, config.hess_step, batch=prof.batch)
        if not np.all(np.isfinite(H)):
            break
        H = refine_hessian(prof.batch, u, H, float(np.max(prof.hi - prof.lo)), rounds=1)
        lam = np.linalg.eigvalsh(H)
        if lam[0] <= 0:
            break
        g = numeric_gradient(None, u, config.grad_step, batch=prof.batch)
        if not np.all(np.isfinite(g)):
            break
        trial = canonical(np.clip(u + np.linalg.solve(H, g), prof.lo, prof.hi), prof.lay)
        val = f(trial)
        if not val > current:
            break
        done = val - current < 1e-12 * max(1.0, abs(current))
        u, current = trial, val
        if done:
            break
    return u


# -- integration over u ------------------------------------------------------


def _regularized_eig(hessian: np.ndarray, lo, hi):
    """Eigen-decomposition with eigenvalues floored so no direction is wider than 10x the box."""
    lam, V = np.linalg.eigh(0.5 * (hessian + hessian.T))
    span = float(np.max(np.asarray(hi) - np.asarray(lo)))
    floor = 1.0 / (10.0 * span) ** 2
    return np.maximum(lam, floor), V, lam


def box_log_mass(u_map, cov, lo, hi) -> float:
    """log probability that N(u_map, cov) falls inside the box, axis by axis."""
    s = np.sqrt(np.diag(cov))
    live = s > 0  # a degenerate covariance has no spread on some axes
    z_hi = (np.asarray(hi)[live] - np.asarray(u_map)[live]) / s[live]
    z_lo = (np.asarray(lo)[live] - np.asarray(u_map)[live]) / s[live]
    mass = ndtr(z_hi) - ndtr(z_lo)
    return float(np.sum(np.log(np.clip(mass, 1e-300, None))))


def line_limits(u, v, lo, hi, ordered: tuple = ()) -> tuple[float, float]:
    """Range of s keeping u + s v inside the box and the ordered wedge."""
    s_lo, s_hi = -np.inf, np.inf
    rows = [(v[i], u[i] - lo[i], hi[i] - u[i]) for i in range(len(u))]
    # u[b] - u[a] + s (v[b] - v[a]) >= 0
    rows += [(v[b] - v[a], u[b] - u[a], np.inf) for a, b in ordered]
    for slope, room_down, room_up in rows:
        if slope > 1e-15:
            s_hi = min(s_hi, room_up / slope)
            s_lo = max(s_lo, -room_down / slope)
        elif slope < -1e-15:
            s_hi = min(s_hi, room_down / -slope)
            s_lo = max(s_lo, -room_up / -slope)
    return float(s_lo), float(s_hi)


def _line_log_integral(batch, u, v, scale, lo, hi, ordered) -> float:
    """log of the integral of exp(l) along u + s v, s over the feasible range."""
    s_lo, s_hi = line_limits(u, v, lo, hi, ordered)
    s_lo, s_hi = min(s_lo, 0.0), max(s_hi, 0.0)
    if not s_hi - s_lo > 0:
        return -math.inf

    def along(S):
        return batch(u[None, :] + np.asarray(S)[:, :1] * v[None, :])

    return quadrature_log_integral(
        lambda s: float(along(np.atleast_2d(s))[0]), [0.0], [[scale**-2]], [s_lo], [s_hi], batch=along
    )


def laplace_log_integral(value: float, u_map, hessian, lo=None, hi=None, batch=None, ordered: tuple = ()) -> float:
    """log of the Gaussian integral with peak ``value`` and curvature ``hessian``.

    With bounds, the Gaussian mass outside the prior box is removed (axis by
    axis) and near-flat directions are floored at 10x the box width. When
    ``batch`` (vectorized l) is given, each direction of non-positive
    curvature is integrated numerically along its eigenvector instead; such
    directions appear when the mode sits on an ordering or box boundary.
    """
    p = len(u_map)
    if p == 0:
        return float(value)
    if lo is None:
        lam = np.linalg.eigvalsh(hessian)
        if lam[0] <= 0:
            raise NumericError("Hessian is not positive definite")
        return float(value + 0.5 * p * math.log(2 * math.pi) - 0.5 * np.sum(np.log(lam)))
    lam, V, raw = _regularized_eig(hessian, lo, hi)
    bad = raw <= 0 if batch is not None else np.zeros(p, dtype=bool)
    good = ~bad
    total = float(value)
    if np.any(good):
        Vg, lg = V[:, good], lam[good]
        cov = (Vg / lg) @ Vg.T
        total += 0.5 * good.sum() * math.log(2 * math.pi) - 0.5 * np.sum(np.log(lg))
        total += box_log_mass(u_map, cov, lo, hi)
    span = float(np.max(np.asarray(hi) - np.asarray(lo)))
    u_map = np.asarray(u_map, dtype=float)
    for k in np.flatnonzero(bad):
        scale = min(1.0 / math.sqrt(max(abs(raw[k]), 1e-300)), span)
        total += _line_log_integral(batch, u_map, V[:, k], scale, lo, hi, ordered) - value
    return float(total)


@dataclass
class ValveReport:
    quadratic_ok: bool
    max_discrepancy: float
    fallback_used: bool = False
    reliable: bool = True
    skipped_probes: int = 0
    probes: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "quadratic_ok": self.quadratic_ok,
            "max_discrepancy": self.max_discrepancy,
            "fallback_used": self.fallback_used,
            "reliable": self.reliable,
            "skipped_probes": self.skipped_probes,
            "notes": list(self.notes),
        }


def probe_quadratic(f, u_map, hessian, lo, hi, drop: float = 2.0, threshold: float = 0.3) -> ValveReport:
    """Compare f along each Hessian eigenvector with its quadratic prediction.

    Probes sit where the quadratic model predicts a fall of ``drop``; the
    largest |actual - predicted| fall is reported.
    """
    u_map = np.asarray(u_map, dtype=float)
    f0 = f(u_map)
    lam, V = np.linalg.eigh(0.5 * (hessian + hessian.T))
    report = ValveReport(quadratic_ok=True, max_discrepancy=0.0)
    if lam.size and lam[0] <= 0:
        report.quadratic_ok = False
        report.notes.append("Hessian not positive definite")
    for k in range(lam.size):
        if lam[k] <= 0:
            continue
        delta = math.sqrt(2 * drop / lam[k])
        for sign in (1.0, -1.0):
            probe = u_map + sign * delta * V[:, k]
            if np.any(probe < lo) or np.any(probe > hi):
                report.skipped_probes += 1
                report.notes.append(f"probe {k}{'+' if sign > 0 else '-'} outside prior bounds")
                continue
            try:
                actual = f0 - f(probe)
            except NumericError as exc:
                report.skipped_probes += 1
                report.quadratic_ok = False
                report.notes.append(f"probe {k}{'+' if sign > 0 else '-'} failed: {exc}")
                continue
            disc = abs(actual - drop)
            report.probes.append((k, sign, float(actual)))
            report.max_discrepancy = max(report.max_discrepancy, disc)
    if report.max_discrepancy > threshold:
        report.quadratic_ok = False
    return report


def _axis_breaks(centres, scale, a, b, n_uniform: int = 4):
    pts = [np.linspace(a, b, n_uniform + 1)]
    for c in centres:
        pts.append(c + scale * np.array([-6.0, -2.0, 2.0, 6.0]))
    pts = np.concatenate(pts)
    pts = pts[(pts > a) & (pts < b)]
    return np.unique(np.concatenate([[a], pts, [b]]))


def quadrature_log_integral(
    f, u_map, hessian, lo, hi, ordered: tuple = (), rtol: float = 1e-3, batch=None, centres=()
) -> float:
    """log of the integral of exp(f) over the prior box by adaptive cubature (p <= 2).

    ``ordered`` lists index pairs (a, b) constrained to u[a] <= u[b]; for p = 2
    the triangle is mapped onto a rectangle, u[1] = u[0] + (hi - u[0]) * s.
    The domain is pre-split around ``u_map`` and any extra ``centres`` (for
    example other local optima) at multiples of the curvature scale, so that
    narrow peaks and ridges cannot slip between the initial nodes.
    ``batch`` is an optional vectorized version of ``f`` taking (N, p) arrays.
    """
    u_map = np.asarray(u_map, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    p = u_map.size
    if p not in (1, 2):
        raise InputError("quadrature fallback supports one or two nonlinear parameters")
    f0 = f(u_map)
    if batch is None:
        def batch(U):
            out = np.empty(len(U))
            for i, u in enumerate(U):
                try:
                    out[i] = f(u)
                except NumericError:
                    out[i] = -np.inf
            return out

    # curvature scale per axis; |H_ii| keeps it usable when H is indefinite
    diag = np.abs(np.diag(np.asarray(hessian, dtype=float)))
    sd = np.clip(1.0 / np.sqrt(np.maximum(diag, 1e-300)), 1e-4, hi - lo)
    pts = np.vstack([u_map] + [np.asarray(c, dtype=float) for c in centres])
    tri = p == 2 and (0, 1) in ordered

    if tri:
        span = np.maximum(hi[1] - pts[:, 0], 1e-12)
        axes = [
            _axis_breaks(pts[:, 0], sd[0], lo[0], hi[0]),
            _axis_breaks((pts[:, 1] - pts[:, 0]) / span, sd[1] / float(np.max(span)), 0.0, 1.0),
        ]

        def integrand(X):
            U = np.column_stack([X[:, 0], X[:, 0] + (hi[1] - X[:, 0]) * X[:, 1]])
            jac = hi[1] - X[:, 0]
            return np.exp(np.clip(batch(U) - f0, -745.0, 50.0)) * jac
    else:
        axes = [_axis_breaks(pts[:, i], sd[i], lo[i], hi[i]) for i in range(p)]

        def integrand(X):
            return np.exp(np.clip(batch(X) - f0, -745.0, 50.0))

    rule = "gk21" if p == 1 else "gk15"
    cells = []
    for idx in itertools.product(*[range(len(ax) - 1) for ax in axes]):
        cells.append((np.array([axes[d][i] for d, i in enumerate(idx)]), np.array([axes[d][i + 1] for d, i in enumerate(idx)])))
    # one rule application per cell gives a scale for the absolute tolerance
    rough = [integrate.cubature(integrand, a, b, rule=rule, rtol=1.0, max_subdivisions=0) for a, b in cells]
    scale = sum(float(r.estimate) for r in rough)
    if not scale > 0:
        raise NumericError("quadrature found no posterior mass")
    atol = rtol * scale / len(cells)
    total = 0.0
    for (a, b), r in zip(cells, rough):
        if float(r.error) <= atol:
            total += float(r.estimate)
            continue
        res = integrate.cubature(integrand, a, b, rule=rule, rtol=0.0, atol=atol, max_subdivisions=20000)
        if res.status != "converged":
            log.debug("cubature cell %s..%s did not converge (error %.2e)", a, b, float(res.error))
        total += float(res.estimate)
    if not total > 0:
        raise NumericError("quadrature found no posterior mass")
    return f0 + math.log(total)


# -- full model fit ----------------------------------------------------------


@dataclass
class LaplaceResult:
    spec: ModelSpec
    u_map: np.ndarray
    hessian: np.ndarray
    value: float
    log_model_evidence: float
    laplace_log_evidence: float
    valve: ValveReport
    amplitude_means: np.ndarray
    amplitude_cov: np.ndarray
    evidence: EvidenceResult
    converged: bool = True
    pinned: bool = False

    @property
    def params(self) -> NonlinearParams:
        return params_from_u(self.u_map, layout(self.spec))

    @property
    def u_sd(self) -> np.ndarray:
        lam = np.linalg.eigvalsh(self.hessian)
        if lam.size == 0 or lam[0] <= 0:
            return np.full(self.u_map.size, math.inf)
        return np.sqrt(np.diag(np.linalg.inv(self.hessian)))

    @property
    def amplitude_sds(self) -> np.ndarray:
        return np.sqrt(np.diag(self.amplitude_cov))

    def to_dict(self) -> dict:
        lay = layout(self.spec)
        return {
            "model": self.spec.label,
            "log_model_evidence": self.log_model_evidence,
            "laplace_log_evidence": self.laplace_log_evidence,
            "profile_peak": self.value,
            "u_map": self.u_map.tolist(),
            "hessian": self.hessian.tolist(),
            "nonlinear_names": list(lay.nonlinear_names),
            "nonlinear_map_ms": np.exp(self.u_map).tolist(),
            "u_sd": self.u_sd.tolist(),
            "amplitude_names": list(lay.amplitude_names),
            "amplitude_means": self.amplitude_means.tolist(),
            "amplitude_sds": self.amplitude_sds.tolist(),
            "valve": self.valve.to_dict(),
            "converged": self.converged,
            "pinned": self.pinned,
            "evidence": self.evidence.to_dict(),
        }


def ordered_pairs(lay: ParameterLayout) -> tuple:
    pairs = [(i, i + 1) for i in range(lay.spec.j - 1)]
    pairs += [(i, i + 1) for i in range(lay.spec.j, lay.n_decay - 1)]
    return tuple(pairs)


def laplace_evidence(data, spec: ModelSpec, u_map, hessian, config: FitConfig = DEFAULT) -> float:
    """Laplace estimate of log p(D | M) from the MAP and the Hessian of l."""
    prof = _Profile(data, spec, config)
    return laplace_log_integral(
        prof(u_map), np.asarray(u_map), hessian, prof.lo, prof.hi, batch=prof.batch, ordered=ordered_pairs(prof.lay)
    )


def safety_valve(data, spec: ModelSpec, u_map, hessian, config: FitConfig = DEFAULT) -> tuple[ValveReport, float | None]:
    """Probe the quadratic approximation; return the report and a corrected evidence if quadrature ran."""
    prof = _Profile(data, spec, config)
    report = probe_quadratic(prof, u_map, hessian, prof.lo, prof.hi, config.valve_drop, config.valve_threshold)
    corrected = None
    if not report.quadratic_ok:
        if prof.lay.p <= 2:
            corrected = quadrature_log_integral(
                prof, u_map, hessian, prof.lo, prof.hi, ordered_pairs(prof.lay), batch=prof.batch
            )
            report.fallback_used = True
        else:
            report.reliable = False
            report.notes.append("p > 2: Laplace value kept, flagged unreliable")
    return report, corrected


def fit_model(data, spec: ModelSpec, config: FitConfig = DEFAULT, init=None) -> LaplaceResult:
    """MAP, Laplace evidence, safety valve and amplitude estimates for one model."""
    mp = map_estimate(data, spec, init, config)
    prof = _Profile(data, spec, config)
    laplace = laplace_log_integral(
        mp.value, mp.u, mp.hessian, prof.lo, prof.hi, batch=prof.batch, ordered=ordered_pairs(prof.lay)
    )
    report, corrected = safety_valve(data, spec, mp.u, mp.hessian, config)
    total = corrected if corrected is not None else laplace
    fit = linear_fit(params_from_u(mp.u, prof.lay), data, spec, config, stats=prof.stats)
    means, cov = amplitude_posterior(fit)
    ev = evidence_result(fit, spec, config, log_evidence=total)
    return LaplaceResult(
        spec=spec,
        u_map=mp.u,
        hessian=mp.hessian,
        value=mp.value,
        log_model_evidence=float(total),
        laplace_log_evidence=float(laplace),
        valve=report,
        amplitude_means=means,
        amplitude_cov=cov,
        evidence=ev,
        converged=mp.converged,
        pinned=mp.pinned,
    )
