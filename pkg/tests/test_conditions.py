import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import bvmlab as bl
from bvmlab.conditions import admissible_rd, estimate_omega_profile
from conftest import small_plan


@pytest.fixture(scope="module")
def gaussian_setup():
    model = bl.GaussianMeanModel(p=1, n=4, sigma=1.0)
    proc = bl.LocationProcess(theta=np.array([2.0]), noise=bl.GaussianNoise(1.0),
                              matches_model=True)
    geom = bl.local_geometry(model, proc)
    return model, proc, geom


@pytest.fixture(scope="module")
def logistic_setup():
    model = bl.LogisticModel(p=2, n=1000, pool_size=16, design_seed=3)
    proc = bl.BinaryProcess(theta=np.array([0.8, -0.5]), matches_model=True)
    geom = bl.local_geometry(model, proc)
    return model, proc, geom


# ---------------------------------------------------------------------------
# delta(r)
# ---------------------------------------------------------------------------

def test_delta_zero_for_quadratic(gaussian_setup):
    model, proc, geom = gaussian_setup
    _r, delta, ok = bl.estimate_delta_profile(model, proc, geom,
                                              plan=small_plan())
    assert ok
    assert np.max(np.abs(delta)) <= 1e-10


def test_delta_logistic_shape(logistic_setup):
    model, proc, geom = logistic_setup
    r_grid, delta, ok = bl.estimate_delta_profile(model, proc, geom,
                                                  plan=small_plan())
    assert ok
    assert np.all(np.diff(delta) >= 0.0)       # nondecreasing on the grid
    assert delta[-1] > 0.0
    # delta(r)/r roughly constant (near-linear growth): factor 2 across grid
    ratios = delta[2:] / r_grid[2:]
    assert ratios.max() <= 2.0 * ratios.min()


def test_delta_sqrt_n_rate(logistic_setup):
    model, proc, geom = logistic_setup
    _, delta_1, _ = bl.estimate_delta_profile(model, proc, geom,
                                              plan=small_plan())
    model4 = bl.LogisticModel(p=2, n=4000, pool_size=16, design_seed=3)
    geom4 = bl.local_geometry(model4, proc, r0_override=geom.r0)
    _, delta_4, _ = bl.estimate_delta_profile(model4, proc, geom4,
                                              plan=small_plan())
    # quadrupling n halves delta at fixed metric radius, within 30%
    ratio = delta_1[-1] / delta_4[-1]
    assert abs(ratio - 2.0) <= 0.6


# ---------------------------------------------------------------------------
# omega(r)
# ---------------------------------------------------------------------------

def test_omega_zero_for_linear_score(gaussian_setup):
    model, proc, geom = gaussian_setup
    _r, omega, _se, _g = estimate_omega_profile(model, proc, geom,
                                                mc_budget=1000,
                                                rng=bl.RngStream(1),
                                                plan=small_plan())
    assert np.max(omega) <= 1e-12


def test_omega_logistic_positive_monotone(logistic_setup):
    model, proc, geom = logistic_setup
    r_grid, omega, se, g_of_r = estimate_omega_profile(
        model, proc, geom, mc_budget=1200, rng=bl.RngStream(2),
        plan=small_plan())
    assert omega[-1] > 0.0
    assert np.all(np.diff(omega) >= 0.0)
    assert np.all(se >= 0.0)
    assert np.all(np.diff(g_of_r) <= 1e-12)  # g(r) shrinks with the ball


def test_omega_sqrt_n_rate(logistic_setup):
    model, proc, geom = logistic_setup
    _, omega_1, _, _ = estimate_omega_profile(model, proc, geom,
                                              mc_budget=1500,
                                              rng=bl.RngStream(3),
                                              plan=small_plan())
    model4 = bl.LogisticModel(p=2, n=4000, pool_size=16, design_seed=3)
    geom4 = bl.local_geometry(model4, proc, r0_override=geom.r0)
    _, omega_4, _, _ = estimate_omega_profile(model4, proc, geom4,
                                              mc_budget=1500,
                                              rng=bl.RngStream(3),
                                              plan=small_plan())
    ratio = omega_1[-1] / omega_4[-1]
    assert abs(ratio - 2.0) <= 0.6


def test_omega_rejects_small_budget(gaussian_setup):
    model, proc, geom = gaussian_setup
    with pytest.raises(ValueError):
        estimate_omega_profile(model, proc, geom, mc_budget=500,
                               rng=bl.RngStream(0))


# ---------------------------------------------------------------------------
# Score MGF check (nu0)
# ---------------------------------------------------------------------------

def test_nu0_gaussian_is_one(gaussian_setup):
    model, proc, geom = gaussian_setup
    res = bl.exp_moment_check(model, proc, geom, mc_budget=3000,
                              rng=bl.RngStream(10))
    assert res.passed
    assert abs(res.nu0 - 1.0) <= 0.15   # exactly normal score, MC slack


def test_nu0_logistic_bounded(logistic_setup):
    model, proc, geom = logistic_setup
    res = bl.exp_moment_check(model, proc, geom, mc_budget=2000,
                              rng=bl.RngStream(11))
    assert res.passed
    assert res.nu0 <= 2.0


def test_heavy_tails_fail():
    # Cauchy-type errors under the Gaussian quasi-model: the score has no
    # MGF, so the check must fail.  The geometry is postulated (infinite
    # score variance has no analytic v0), which is exactly the situation
    # the guard exists for.
    model = bl.GaussianMeanModel(p=1, n=10, sigma=1.0)
    proc = bl.LocationProcess(theta=np.array([0.0]),
                              noise=bl.StudentTNoise(df=1.5),
                              matches_model=False)
    geom = bl.geometry_from_matrices([0.0], [[10.0]], [[10.0]])
    res = bl.exp_moment_check(model, proc, geom, mc_budget=2000,
                              rng=bl.RngStream(12))
    assert not res.passed


# ---------------------------------------------------------------------------
# Admissible rd
# ---------------------------------------------------------------------------

def test_admissible_rd_formula():
    res = admissible_rd(0.02, 0.01, 1.0, 1.0)
    assert res.rd == pytest.approx(0.05)
    assert res.applicable


def test_admissible_rd_gaussian_zero(gaussian_setup):
    model, proc, geom = gaussian_setup
    profile = bl.audit_conditions(model, proc, geom, mc_budget=1000,
                                  rng=bl.RngStream(13), plan=small_plan())
    assert profile.rd <= 1e-10
    assert profile.flags["rd_applicable"]


def test_admissible_rd_critical_regime():
    model = bl.LogisticModel(p=4, n=6, pool_size=16, design_seed=3)
    proc = bl.BinaryProcess(theta=np.resize([0.8, -0.5], 4), matches_model=True)
    geom = bl.local_geometry(model, proc)
    profile = bl.audit_conditions(model, proc, geom, mc_budget=1000,
                                  rng=bl.RngStream(14), plan=small_plan())
    assert profile.rd > 0.5
    assert not profile.flags["rd_applicable"]


@given(st.floats(0.0, 0.4), st.floats(0.0, 0.1), st.floats(1.0, 3.0),
       st.floats(0.5, 4.0))
@settings(max_examples=50, deadline=None)
def test_admissible_rd_monotone(delta, omega, nu0, a_sq):
    base = admissible_rd(delta, omega, nu0, a_sq).rd
    assert admissible_rd(delta + 0.01, omega, nu0, a_sq).rd >= base
    assert admissible_rd(delta, omega + 0.01, nu0, a_sq).rd >= base
    assert admissible_rd(delta, omega, nu0 + 0.1, a_sq).rd >= base
    assert admissible_rd(delta, omega, nu0, a_sq + 0.1).rd >= base


# ---------------------------------------------------------------------------
# b(r)
# ---------------------------------------------------------------------------

def test_b_profile_gaussian_is_half(gaussian_setup):
    model, proc, geom = gaussian_setup
    _r, b_vals, ok = bl.estimate_identification_profile(model, proc, geom,
                                                        plan=small_plan())
    assert ok
    assert np.max(np.abs(b_vals - 0.5)) <= 1e-9


def test_b_profile_logistic(logistic_setup):
    model, proc, geom = logistic_setup
    r_grid, b_vals, ok = bl.estimate_identification_profile(model, proc, geom,
                                                            plan=small_plan())
    assert ok
    assert np.all(b_vals > 0.0)
    assert np.all(np.diff(b_vals) <= 1e-9)            # decreasing in r
    rb = r_grid * b_vals
    assert np.all(np.diff(rb) >= -1e-9 * rb[:-1])     # r b(r) nondecreasing


# ---------------------------------------------------------------------------
# Prior checks
# ---------------------------------------------------------------------------

def test_flat_prior_regularity(gaussian_setup):
    _model, _proc, geom = gaussian_setup
    alpha_hat, ok = bl.prior_regularity_check(bl.Prior.flat(), geom,
                                              plan=small_plan())
    assert alpha_hat == 0.0 and ok


def test_gaussian_prior_regularity_closed_form():
    # theta_star = 0, D0^2 = n I: the locality set is a ball of radius
    # r0 / sqrt(n), so sup |pi/pi* - 1| = 1 - exp(-g r0^2 / (2n)).
    n, g = 100.0, 0.5
    geom = bl.geometry_from_matrices([0.0, 0.0], n * np.eye(2), n * np.eye(2))
    prior = bl.Prior.gaussian(g * np.eye(2))
    alpha_hat, _ok = bl.prior_regularity_check(prior, geom,
                                               plan=small_plan(polish_steps=8))
    closed = 1.0 - math.exp(-g * geom.r0**2 / (2.0 * n))
    assert alpha_hat == pytest.approx(closed, rel=1e-3)


def test_gaussian_prior_check_arithmetic():
    # G^2 = g I, D0^2 = n I: smallness = g p / n.
    geom = bl.geometry_from_matrices(np.zeros(5), 1000.0 * np.eye(5),
                                     1000.0 * np.eye(5))
    g_norm, smallness, ok = bl.gaussian_prior_check(np.eye(5), geom)
    assert g_norm == 0.0
    assert smallness == pytest.approx(0.005, rel=1e-9)
    assert ok
    _gn, small_big, ok_big = bl.gaussian_prior_check(2000.0 * np.eye(5), geom)
    assert small_big == pytest.approx(10.0, rel=1e-9)
    assert not ok_big


def test_degenerate_prior_rejected(gaussian_setup):
    _model, _proc, geom = gaussian_setup
    prior = bl.Prior.custom(lambda th: -math.inf)
    with pytest.raises(bl.BvmLabError):
        bl.prior_regularity_check(prior, geom)


# ---------------------------------------------------------------------------
# iid rate bookkeeping
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("n,p,ratio", [(1000, 10, 1.0), (8000, 20, 1.0),
                                       (10**6, 10, 0.001)])
def test_iid_rate_summary(n, p, ratio):
    summ = bl.iid_rate_summary(n, p, 0.1, 0.2)
    assert summ.critical_ratio == pytest.approx(ratio)
    assert summ.delta_rate == 0.1 and summ.omega_rate == 0.2


def test_iid_rate_summary_rejects_bad_input():
    with pytest.raises(ValueError):
        bl.iid_rate_summary(0, 5, 0.1, 0.1)


# ---------------------------------------------------------------------------
# Reproducibility of the audit
# ---------------------------------------------------------------------------

def test_audit_bit_reproducible(gaussian_setup):
    model, proc, geom = gaussian_setup
    p1 = bl.audit_conditions(model, proc, geom, mc_budget=1000,
                             rng=bl.RngStream(77), plan=small_plan())
    p2 = bl.audit_conditions(model, proc, geom, mc_budget=1000,
                             rng=bl.RngStream(77), plan=small_plan())
    assert np.array_equal(p1.delta, p2.delta)
    assert np.array_equal(p1.omega, p2.omega)
    assert np.array_equal(p1.b_vals, p2.b_vals)
    assert p1.nu0 == p2.nu0 and p1.rd == p2.rd
