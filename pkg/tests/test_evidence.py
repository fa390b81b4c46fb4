import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracle import QuadratureConfig, amplitude_oracle, direct_likelihood, direct_log_likelihood, evidence_oracle, integrate_grid

from bayesdecay.basis import NonlinearParams, TimeGrid, eval_basis, gram, project_data
from bayesdecay.config import FitConfig
from bayesdecay.errors import DegenerateFitError, DomainError, SingularBasisError
from bayesdecay.evidence import (
    DecayCurveSet,
    amplitude_marginal,
    batch_log_evidence,
    conditional_log_likelihood,
    evaluate,
    inverse_gamma_sigma,
    linear_fit,
    quadratic_form,
    sigma_marginal_log_evidence,
    sigma_posterior,
    sufficient_stats,
)
from bayesdecay.model_space import ModelSpec
from bayesdecay.synth import Component, GeneratingSpec, default_grid, simulate

CFG = FitConfig()


def curves(t, comps, sigma_s, n_l, seed):
    grid = TimeGrid(np.asarray(t, dtype=float))
    return simulate(GeneratingSpec(tuple(comps), sigma_s=sigma_s, n_l=n_l, grid=grid, seed=seed))


# -- sufficient statistics ---------------------------------------------------


def test_stats_all_ones():
    s = sufficient_stats(DecayCurveSet(TimeGrid([1.0, 2.0]), np.ones((2, 3))))
    np.testing.assert_array_equal(s.dbar, [1.0, 1.0])
    assert s.msq == 1.0 and (s.n, s.n_l) == (2, 3)


def test_stats_single_replicate():
    d = np.array([[1.0], [-2.0], [0.5]])
    s = sufficient_stats(DecayCurveSet(TimeGrid([1.0, 2.0, 3.0]), d))
    np.testing.assert_array_equal(s.dbar, d[:, 0])
    assert s.msq == pytest.approx(np.mean(d**2), rel=1e-15)
    assert s.within_ss == pytest.approx(0.0, abs=1e-15)


def test_stats_integer_matrix_direct_sum():
    d = np.array([[3, -1], [0, 4], [2, 2]], dtype=float)
    s = sufficient_stats(DecayCurveSet(TimeGrid([1.0, 2.0, 3.0]), d))
    np.testing.assert_array_equal(s.dbar, [1.0, 2.0, 2.0])
    assert s.msq == (9 + 1 + 0 + 16 + 4 + 4) / 6


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_stats_scatter_nonnegative(n, n_l, seed):
    d = np.random.default_rng(seed).standard_normal((n, n_l)) * 3
    s = sufficient_stats(DecayCurveSet(TimeGrid(np.arange(1.0, n + 1)), d))
    assert s.msq >= np.mean(s.dbar**2) - 1e-12


# -- conditional likelihood --------------------------------------------------


def test_loglik_zero_data_zero_amplitudes():
    data = DecayCurveSet(TimeGrid([10.0, 20.0, 30.0]), np.zeros((3, 2)))
    sigma = 0.3
    val = conditional_log_likelihood([0.0, 0.0], NonlinearParams([50.0]), sigma, data, ModelSpec(1))
    assert val == pytest.approx(-(6 / 2) * math.log(2 * math.pi * 2 * sigma**2), rel=1e-14)


def test_loglik_perfect_fit_is_maximal():
    grid = default_grid()
    spec, params = ModelSpec(1), NonlinearParams([60.0])
    B = np.array([1.5, 0.2])
    data = DecayCurveSet(grid, (B @ eval_basis(spec, grid, params).G)[:, None])
    fit = linear_fit(params, data, spec)
    assert quadratic_form(B, fit) == pytest.approx(0.0, abs=1e-12)
    peak = conditional_log_likelihood(B, params, 0.1, data, spec)
    assert peak == pytest.approx(-16 * math.log(2 * math.pi * 0.01), rel=1e-10)
    assert conditional_log_likelihood(B + [1e-3, 0], params, 0.1, data, spec) < peak


def test_loglik_matches_direct_product():
    data = curves([10, 25, 45, 80], [Component(1.0, 40.0)], 0.05, 2, seed=1)
    spec, params = ModelSpec(1), NonlinearParams([35.0])
    B, sigma = np.array([0.9, 0.03]), 0.04
    direct = math.log(direct_likelihood(data, spec, B, params, sigma * math.sqrt(2)))
    assert conditional_log_likelihood(B, params, sigma, data, spec) == pytest.approx(direct, abs=1e-10)


def test_loglik_rejects_nonpositive_sigma():
    data = curves([10, 20], [Component(1.0, 40.0)], 0.05, 1, seed=0)
    with pytest.raises(DomainError):
        conditional_log_likelihood([1.0, 0.0], NonlinearParams([40.0]), 0.0, data, ModelSpec(1))


@settings(max_examples=30, deadline=None)
@given(st.floats(10, 200), st.integers(1, 4), st.integers(0, 1000))
def test_quadratic_completion_identity(T2, n_l, seed):
    data = simulate(GeneratingSpec((Component(1.0, 70.0),), sigma_s=0.02, n_l=n_l, seed=seed))
    spec, params = ModelSpec(1), NonlinearParams([T2])
    fit = linear_fit(params, data, spec)
    sigma = 0.05
    at_hat = conditional_log_likelihood(fit.B_hat, params, sigma, data, spec)
    N = 32 * n_l
    exponent = -0.5 * N * math.log(2 * math.pi * n_l * sigma**2) - fit.residual / (2 * sigma**2)
    assert at_hat == pytest.approx(exponent, rel=1e-8)
    g, F = gram(fit.G), project_data(fit.G, fit.stats.dbar)
    np.testing.assert_allclose(fit.B_hat, np.linalg.solve(g, F), rtol=1e-8)


# -- amplitude marginal ------------------------------------------------------


def test_amplitude_marginal_single_row_vs_adaptive_quadrature():
    data = curves(10.0 * np.arange(1, 9), [Component(1.2, 50.0)], 0.05, 2, seed=4)
    spec, params, sigma = ModelSpec(1, include_aer=False), NonlinearParams([45.0]), 0.04
    row = eval_basis(spec, data.grid, params).G[0]
    half = CFG.amp_range_factor * float(np.max(np.abs(data.d.mean(axis=1))))
    fit = linear_fit(params, data, spec)
    sd = sigma / math.sqrt(float(row @ row))

    def logf(X):
        B = X[:, 0]
        return direct_log_likelihood(data.d, B[:, None] * row, sigma * math.sqrt(2)) - math.log(2 * half)

    lo, hi = fit.B_hat[0] - 12 * sd, fit.B_hat[0] + 12 * sd
    ref = integrate_grid(logf, QuadratureConfig(41, [(lo, hi)], "adaptive"))
    assert ref.converged
    assert amplitude_marginal(params, sigma, data, spec) == pytest.approx(ref.log_value, abs=1e-6)


def test_amplitude_marginal_correlated_pair_vs_grid():
    data = simulate(GeneratingSpec((Component(1.0, 20.0), Component(1.0, 80.0)), sigma_s=0.03, n_l=2, seed=2))
    spec, params, sigma = ModelSpec(2, include_aer=False), NonlinearParams([20.0, 80.0]), 0.02
    ref = amplitude_oracle(data, spec, params, sigma, CFG, nodes=61)
    assert amplitude_marginal(params, sigma, data, spec) == pytest.approx(ref.log_value, abs=max(1e-4, 3 * ref.log_error))


def test_orthonormal_basis_h2_is_sum_of_projections():
    grid = TimeGrid(np.arange(1.0, 5.0))
    d = np.array([[0.3], [1.1], [-0.4], [0.9]])
    data = DecayCurveSet(grid, d)
    fit = linear_fit(NonlinearParams([2.0]), data, ModelSpec(1, include_aer=False))
    row = fit.G[0] / np.linalg.norm(fit.G[0])
    assert fit.h2 == pytest.approx(float(row @ d[:, 0]) ** 2, rel=1e-12)


def test_duplicate_basis_is_singular():
    data = simulate(GeneratingSpec((Component(1.0, 50.0),), sigma_s=0.01, seed=0))
    with pytest.raises(SingularBasisError):
        sigma_marginal_log_evidence(NonlinearParams([50.0, 50.0]), data, ModelSpec(2))
    with pytest.raises(SingularBasisError):
        amplitude_marginal(NonlinearParams([50.0, 50.0]), 0.1, data, ModelSpec(2))


# -- sigma marginal ----------------------------------------------------------


def test_sigma_marginal_six_points_vs_nested_quadrature():
    data = curves(10.0 * np.arange(1, 7), [Component(1.0, 30.0)], 0.03, 1, seed=3)
    spec, params = ModelSpec(1), NonlinearParams([28.0])
    ref = evidence_oracle(data, spec, params, CFG, nodes=41)
    tol = max(1e-4, 3 * ref.log_error)
    assert sigma_marginal_log_evidence(params, data, spec) == pytest.approx(ref.log_value, abs=tol)


def test_exact_fit_is_degenerate():
    grid = TimeGrid([10.0, 20.0, 30.0])
    spec, params = ModelSpec(1), NonlinearParams([25.0])
    G = eval_basis(spec, grid, params).G
    data = DecayCurveSet(grid, (np.array([1.0, 0.1]) @ G)[:, None] * np.ones((1, 2)))
    with pytest.raises(DegenerateFitError):
        sigma_marginal_log_evidence(params, data, spec)


def test_no_degrees_of_freedom_is_degenerate():
    data = DecayCurveSet(TimeGrid([10.0, 20.0]), np.array([[1.0], [0.4]]))
    with pytest.raises(DegenerateFitError):
        sigma_marginal_log_evidence(NonlinearParams([20.0]), data, ModelSpec(1))


def test_scaling_data_shifts_evidence_by_count_times_log_c():
    data = simulate(GeneratingSpec((Component(1.0, 40.0), Component(0.5, 150.0)), sigma_s=0.01, n_l=3, seed=5))
    scaled = DecayCurveSet(data.grid, 7.0 * data.d)
    spec, params = ModelSpec(2), NonlinearParams([40.0, 150.0])
    a = sigma_marginal_log_evidence(params, data, spec)
    b = sigma_marginal_log_evidence(params, scaled, spec)
    N, m = 96, 3
    # -nu ln c from the residual, -m ln c from the amplitude prior range
    assert b - a == pytest.approx(-(N - m) * math.log(7.0) - m * math.log(7.0), abs=1e-8)


def test_extra_basis_function_lowers_evidence_usually():
    wins = 0
    for seed in range(30):
        data = simulate(GeneratingSpec((Component(1.0, 80.0),), sigma_s=0.01, seed=seed))
        params = NonlinearParams([80.0])
        wins += sigma_marginal_log_evidence(params, data, ModelSpec(1)) > sigma_marginal_log_evidence(
            params, data, ModelSpec(1, 0, 1)
        )
    assert wins >= 24


@pytest.mark.parametrize("jkl", [(1, 0, 0), (2, 0, 1), (0, 1, 0), (1, 1, 2)])
def test_batch_matches_scalar(jkl):
    spec = ModelSpec(*jkl)
    data = simulate(GeneratingSpec((Component(1.0, 30.0), Component(0.6, 110.0)), sigma_s=0.02, n_l=3, seed=1))
    rng = np.random.default_rng(0)
    P = [np.r_[np.sort(rng.uniform(10, 300, spec.j)), rng.uniform(15, 300, spec.k), rng.uniform(2, 40, spec.k)] for _ in range(6)]
    batch = batch_log_evidence(np.array(P), data, spec)
    for b, p in zip(batch, P):
        scalar = sigma_marginal_log_evidence(NonlinearParams(p[: spec.j + spec.k], p[spec.j + spec.k :]), data, spec)
        assert b == pytest.approx(scalar, rel=1e-10)


def test_batch_marks_singular_points():
    data = simulate(GeneratingSpec((Component(1.0, 30.0),), sigma_s=0.02, seed=1))
    out = batch_log_evidence(np.array([[30.0, 30.0], [30.0, 90.0]]), data, ModelSpec(2))
    assert out[0] == -math.inf and np.isfinite(out[1])


# -- sigma posterior ---------------------------------------------------------


def test_sigma_mode_formula():
    s = inverse_gamma_sigma(10.0, 9.0)
    assert s.mode == pytest.approx(1.0, rel=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100), st.integers(3, 200), st.integers(1, 64))
def test_sigma_summary_consistency(R, nu, n_l):
    s = inverse_gamma_sigma(R, nu, n_l)
    assert s.s_mode == s.mode * math.sqrt(n_l)
    assert s.mean > s.mode and s.sd > 0


def test_sigma_mean_matches_numerical_moment():
    from scipy import integrate

    R, nu = 3.0, 7.0
    dens = lambda s: s ** -(nu + 1) * math.exp(-R / (2 * s * s))
    z = integrate.quad(dens, 1e-3, 50)[0]
    mean = integrate.quad(lambda s: s * dens(s), 1e-3, 50)[0] / z
    var = integrate.quad(lambda s: s * s * dens(s), 1e-3, 50)[0] / z - mean**2
    s = inverse_gamma_sigma(R, nu)
    assert s.mean == pytest.approx(mean, rel=1e-7)
    assert s.sd == pytest.approx(math.sqrt(var), rel=1e-6)


def test_sigma_posterior_needs_two_dof():
    with pytest.raises(DegenerateFitError):
        inverse_gamma_sigma(1.0, 1.0)


def test_sigma_stable_under_systematic_misfit():
    modes, s_modes = [], []
    for n_l in (4, 64):
        data = simulate(GeneratingSpec((Component(1.0, 20.0), Component(1.0, 80.0)), sigma_s=0.0075, n_l=n_l, seed=0))
        s = sigma_posterior(NonlinearParams([45.0]), data, ModelSpec(1))
        modes.append(s.mode)
        s_modes.append(s.s_mode)
    assert abs(modes[1] / modes[0] - 1) < 0.1
    assert s_modes[1] / s_modes[0] == pytest.approx(4.0, rel=0.2)


def test_evidence_result_record():
    data = simulate(GeneratingSpec((Component(1.0, 60.0),), sigma_s=0.01, n_l=4, seed=0))
    rec = evaluate(NonlinearParams([60.0]), data, ModelSpec(1)).to_dict()
    assert rec["model"] == "M1.0.0" and rec["m"] == 2 and rec["p"] == 1 and rec["nu"] == 126
    assert rec["residual"] == pytest.approx(32 * sufficient_stats(data).msq - rec["h2"], rel=1e-12)
    assert rec["sigma_s_mode"] == pytest.approx(rec["sigma_mode"] * 2, rel=1e-15)
    assert rec["h2"] >= 0 and math.isfinite(rec["log_evidence"])


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000))
def test_replicate_shuffle_bit_identical(n_l, seed):
    rng = np.random.default_rng(seed)
    data = simulate(GeneratingSpec((Component(1.0, 35.0), Component(0.4, 150.0)), sigma_s=0.02, n_l=n_l, seed=seed))
    shuffled = DecayCurveSet(data.grid, data.d[:, rng.permutation(n_l)])
    params = NonlinearParams([30.0, 140.0])
    assert evaluate(params, data, ModelSpec(2)).to_dict() == evaluate(params, shuffled, ModelSpec(2)).to_dict()
