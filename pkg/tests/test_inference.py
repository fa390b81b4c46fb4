import math

import numpy as np
import pytest
from oracle import QuadratureConfig, evidence_oracle, integrate_grid

from bayesdecay.basis import NonlinearParams, TimeGrid
from bayesdecay.config import FitConfig
from bayesdecay.errors import DegenerateFitError, SingularBasisError
from bayesdecay.evidence import DecayCurveSet
from bayesdecay.inference import (
    _Profile,
    fit_model,
    laplace_evidence,
    laplace_log_integral,
    line_limits,
    map_estimate,
    numeric_gradient,
    numeric_hessian,
    probe_quadratic,
    profile_log_posterior,
    quadrature_log_integral,
    safety_valve,
)
from bayesdecay.model_space import ModelSpec
from bayesdecay.synth import Component, GeneratingSpec, simulate

CFG = FitConfig()
M1 = ModelSpec(1, 0, 0)
M2 = ModelSpec(2, 0, 0)
# "noiseless" cases carry sd 1e-6 noise: exact data give R = 0, where the
# sigma-marginal evidence is unbounded
TINY = 1e-6


def data_for(comps, sigma_s=TINY, n_l=1, seed=0, grid=None):
    kw = {} if grid is None else {"grid": grid}
    return simulate(GeneratingSpec(tuple(comps), sigma_s=sigma_s, n_l=n_l, seed=seed, **kw))


@pytest.fixture(scope="module")
def single():
    return data_for([Component(1.0, 100.0)])


@pytest.fixture(scope="module")
def noisy_single():
    return data_for([Component(1.0, 80.0)], sigma_s=0.01, n_l=4, seed=2)


# -- profile -------------------------------------------------------------------


def test_exact_data_is_degenerate():
    data = simulate(GeneratingSpec((Component(1.0, 100.0),)))
    with pytest.raises(DegenerateFitError):
        profile_log_posterior(np.array([math.log(100.0)]), data, ModelSpec(1, 0, 0, include_aer=False))


def test_equal_rates_singular():
    with pytest.raises(SingularBasisError):
        profile_log_posterior(np.log([50.0, 50.0]), data_for([Component(1.0, 50.0)], sigma_s=0.01), M2)


def test_grid_maximum_at_truth(single):
    us = math.log(100.0) + np.linspace(-0.05, 0.05, 21)
    vals = [profile_log_posterior(np.array([u]), single, M1) for u in us]
    assert int(np.argmax(vals)) == 10


def test_bound_doubling_shifts_constant_only(noisy_single):
    wide = CFG.replace(t2_min=2 * CFG.t2_min, t2_max=2 * CFG.t2_max)
    a = map_estimate(noisy_single, M1, config=CFG)
    b = map_estimate(noisy_single, M1, config=wide)
    assert b.u[0] == pytest.approx(a.u[0], abs=1e-6)
    us = np.log([60.0, 80.0, 110.0])
    diff = [profile_log_posterior(np.array([u]), noisy_single, M1, wide) - profile_log_posterior(np.array([u]), noisy_single, M1) for u in us]
    np.testing.assert_allclose(diff, diff[0], atol=1e-10)


def test_profile_spot_value_vs_oracle():
    grid = TimeGrid(np.linspace(10, 200, 8))
    data = data_for([Component(1.0, 45.0)], sigma_s=0.02, n_l=2, seed=5, grid=grid)
    spec = ModelSpec(1, 0, 0, include_aer=False)
    u = math.log(45.0)
    ref = evidence_oracle(data, spec, NonlinearParams(np.array([45.0])), CFG, nodes=41)
    prior = -math.log(math.log(CFG.t2_max / CFG.t2_min))
    got = profile_log_posterior(np.array([u]), data, spec)
    assert abs(got - (ref.log_value + prior)) <= max(1e-4, 3 * ref.log_error)


# -- MAP -------------------------------------------------------------------------


def test_map_single_exponential(single):
    res = map_estimate(single, M1)
    assert res.u[0] == pytest.approx(math.log(100.0), abs=1e-3)


def test_map_init_at_truth_stays(single):
    truth = np.array([math.log(100.0)])
    res = map_estimate(single, M1, init=truth)
    assert res.u[0] == pytest.approx(truth[0], abs=1e-4)


def test_map_scale_invariance(noisy_single):
    a = map_estimate(noisy_single, M1)
    b = map_estimate(DecayCurveSet(noisy_single.grid, 7.0 * noisy_single.d), M1)
    assert b.u[0] == pytest.approx(a.u[0], abs=1e-6)


def test_map_two_components_sorted():
    data = data_for([Component(1.0, 20.0), Component(1.0, 80.0)], sigma_s=0.005, n_l=4, seed=1)
    res = map_estimate(data, M2)
    assert res.u[0] < res.u[1]
    np.testing.assert_allclose(np.exp(res.u), [20.0, 80.0], rtol=0.1)


def test_gradient_small_at_converged_map(noisy_single):
    res = map_estimate(noisy_single, M1)
    assert res.converged
    prof = _Profile(noisy_single, M1, CFG)
    g = numeric_gradient(prof, res.u, CFG.grad_step)
    assert np.max(np.abs(g)) < 1e-4 * abs(res.value) + 1e-6


def test_hessian_symmetric():
    data = data_for([Component(1.0, 20.0), Component(1.0, 80.0)], sigma_s=0.005, n_l=4, seed=1)
    prof = _Profile(data, M2, CFG)
    res = map_estimate(data, M2)
    np.testing.assert_array_equal(res.hessian, res.hessian.T)
    raw = numeric_hessian(prof, res.u, CFG.hess_step, batch=prof.batch)
    assert abs(raw[0, 1] - raw[1, 0]) < 1e-3 * np.max(np.abs(raw))


# -- Laplace -----------------------------------------------------------------------


def quadratic_case():
    H = np.array([[4.0, 1.0], [1.0, 3.0]])
    u0 = np.array([0.3, -0.2])
    return H, u0, lambda u: 2.5 - 0.5 * (np.asarray(u) - u0) @ H @ (np.asarray(u) - u0)


def test_laplace_exact_on_gaussian():
    H, u0, _ = quadratic_case()
    ref = 2.5 + math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(H))
    assert laplace_log_integral(2.5, u0, H) == pytest.approx(ref, abs=1e-14)
    # bounds far outside the mass remove nothing
    assert laplace_log_integral(2.5, u0, H, [-50, -50], [50, 50]) == pytest.approx(ref, abs=1e-14)


def test_laplace_offset_invariance():
    H, u0, _ = quadratic_case()
    a = laplace_log_integral(2.5, u0, H, [-5, -5], [5, 5])
    b = laplace_log_integral(2.5 + 17.0, u0, H, [-5, -5], [5, 5])
    assert b - a == pytest.approx(17.0, abs=1e-12)


def test_laplace_box_truncation_halves_mass():
    H = np.array([[9.0]])
    full = laplace_log_integral(0.0, np.array([0.0]), H, [-10], [10])
    half = laplace_log_integral(0.0, np.array([0.0]), H, [0.0], [10])
    assert full - half == pytest.approx(math.log(2), abs=1e-12)


def test_laplace_nonpositive_direction_integrated_along_line():
    # l = -|u| near 0 on [-1, 1]: flat curvature, integral 2(1 - e^-1)
    def batch(U):
        return -np.abs(np.asarray(U)[:, 0])

    got = laplace_log_integral(0.0, np.array([0.0]), np.array([[0.0]]), [-1.0], [1.0], batch=batch)
    assert got == pytest.approx(math.log(2 * (1 - math.exp(-1))), abs=1e-3)


def test_line_limits_box_and_order():
    u = np.array([0.0, 0.5])
    v = np.array([1.0, -1.0]) / math.sqrt(2)
    lo, hi = line_limits(u, v, [-1, -1], [1, 1], ordered=((0, 1),))
    # ordering u1 <= u2 binds first going up: 0.5 - 2 s / sqrt(2) >= 0
    assert hi == pytest.approx(0.25 * math.sqrt(2))
    assert lo == pytest.approx(-0.5 * math.sqrt(2))


def test_laplace_p1_vs_adaptive_quadrature(noisy_single):
    res = fit_model(noisy_single, M1)
    prof = _Profile(noisy_single, M1, CFG)
    sd = 1 / math.sqrt(res.hessian[0, 0])
    a, b = max(prof.lo[0], res.u_map[0] - 12 * sd), min(prof.hi[0], res.u_map[0] + 12 * sd)
    ref = integrate_grid(lambda X: prof.batch(X), QuadratureConfig(41, [(a, b)], scheme="adaptive"))
    assert abs(res.laplace_log_evidence - ref.log_value) <= 0.1


def test_laplace_p2_vs_grid():
    data = data_for([Component(1.0, 20.0), Component(1.0, 80.0)], sigma_s=0.005, n_l=4, seed=1)
    res = fit_model(data, M2)
    prof = _Profile(data, M2, CFG)
    sd = np.sqrt(np.diag(np.linalg.inv(res.hessian)))
    bounds = [(res.u_map[i] - 8 * sd[i], res.u_map[i] + 8 * sd[i]) for i in range(2)]

    def logf(U):
        out = np.full(len(U), -np.inf)
        ok = U[:, 0] < U[:, 1]
        out[ok] = prof.batch(U[ok])
        return out

    ref = integrate_grid(logf, QuadratureConfig(81, bounds))
    assert abs(res.laplace_log_evidence - ref.log_value) <= 0.5


def test_fallback_quadrature_agrees_when_quadratic(noisy_single):
    res = fit_model(noisy_single, M1)
    assert res.valve.quadratic_ok
    prof = _Profile(noisy_single, M1, CFG)
    q = quadrature_log_integral(prof, res.u_map, res.hessian, prof.lo, prof.hi, batch=prof.batch)
    assert abs(q - res.laplace_log_evidence) <= 0.1


def test_laplace_evidence_matches_fit(noisy_single):
    res = fit_model(noisy_single, M1)
    assert laplace_evidence(noisy_single, M1, res.u_map, res.hessian) == pytest.approx(res.laplace_log_evidence, abs=1e-9)


# -- safety valve ----------------------------------------------------------------------


def test_valve_exact_quadratic_zero_discrepancy():
    H, u0, f = quadratic_case()
    rep = probe_quadratic(f, u0, H, [-20, -20], [20, 20])
    assert rep.quadratic_ok
    assert rep.max_discrepancy == pytest.approx(0.0, abs=1e-12)


def test_valve_out_of_bounds_probe_skipped():
    H, u0, f = quadratic_case()
    rep = probe_quadratic(f, u0, H, [0.25, -20], [20, 20])
    assert rep.notes


def test_valve_well_conditioned(noisy_single):
    res = fit_model(noisy_single, M1)
    assert res.valve.quadratic_ok
    assert res.valve.max_discrepancy < 0.05
    assert not res.valve.fallback_used


def test_valve_triggers_on_near_degenerate_pair():
    comps = [Component(1.0, 60.0), Component(1.0, 66.0)]
    peak = GeneratingSpec(tuple(comps)).peak
    data = data_for(comps, sigma_s=peak / 10, n_l=1, seed=0)
    res = fit_model(data, M2)
    assert not res.valve.quadratic_ok
    assert res.valve.fallback_used
    rep, corrected = safety_valve(data, M2, res.u_map, res.hessian)
    assert corrected == pytest.approx(res.log_model_evidence, abs=1e-9)


def test_result_serializes(noisy_single):
    doc = fit_model(noisy_single, M1).to_dict()
    assert doc["model"] == "M1.0.0"
    assert set(doc["valve"]) >= {"quadratic_ok", "max_discrepancy", "fallback_used"}
