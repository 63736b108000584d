import math

import numpy as np
import pytest
import scipy.integrate
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

import bvmlab as bl


@pytest.fixture(scope="module")
def exact_setup():
    model = bl.GaussianLinearModel(p=3, n=80, sigma=1.0, design_seed=21)
    proc = bl.LocationProcess(theta=np.array([0.5, -0.2, 0.1]),
                              noise=bl.GaussianNoise(1.0), matches_model=True)
    data = model.sample_dataset(proc, bl.RngStream(100, (0,)))
    geom = bl.local_geometry(model, proc)
    state = bl.score_state(model, data, geom)
    post = bl.exact_gaussian_posterior(model, data, bl.Prior.flat())
    summary = bl.posterior_moments(post, geom)
    return model, proc, data, geom, state, post, summary


def _random_b_delta(gen, p, rd_max=0.5):
    q, _ = np.linalg.qr(gen.standard_normal((p, p)))
    evals = 1.0 + gen.uniform(-rd_max, rd_max, p)
    b = (q * evals) @ q.T
    delta = gen.standard_normal(p) * gen.uniform(0.05, 0.5)
    return (b + b.T) / 2.0, delta


# ---------------------------------------------------------------------------
# Headline discrepancies
# ---------------------------------------------------------------------------

def test_exact_discrepancies_vanish(exact_setup):
    _m, _p, _d, geom, state, post, summary = exact_setup
    assert bl.mean_discrepancy(summary, state, geom) <= 1e-12
    op, tr, projected = bl.cov_discrepancy(summary, geom)
    assert op <= 1e-12 and tr <= 1e-24 and not projected


def test_cov_discrepancy_scalar_inflation():
    geom = bl.geometry_from_matrices(np.zeros(3), np.eye(3), np.eye(3))
    cov = 1.1 * np.eye(3)
    summary = bl.PosteriorSummary(mean=np.zeros(3), cov=cov,
                                  restricted_mean=np.zeros(3),
                                  restricted_cov=cov, tail_mass=0.0,
                                  inside_mass=1.0, ess=math.inf, exact=True,
                                  n_draws=0)
    op, tr, _ = bl.cov_discrepancy(summary, geom)
    assert op == pytest.approx(0.1, abs=1e-12)
    assert tr == pytest.approx(3 * 0.01, abs=1e-12)


@given(st.integers(0, 5000))
@settings(max_examples=30, deadline=None)
def test_cov_norm_sandwich(seed):
    # op norm <= sqrt(Frobenius^2) <= sqrt(p) * op norm
    gen = np.random.default_rng(seed)
    p = int(gen.integers(2, 8))
    geom = bl.geometry_from_matrices(np.zeros(p), np.eye(p), np.eye(p))
    a = gen.standard_normal((p, p)) * 0.2
    cov = np.eye(p) + (a + a.T) / 2.0
    cov = cov @ cov.T  # PSD perturbation of I
    summary = bl.PosteriorSummary(mean=np.zeros(p), cov=cov,
                                  restricted_mean=np.zeros(p),
                                  restricted_cov=cov, tail_mass=0.0,
                                  inside_mass=1.0, ess=math.inf, exact=True,
                                  n_draws=0)
    op, tr, _ = bl.cov_discrepancy(summary, geom)
    assert op <= math.sqrt(tr) + 1e-12
    assert math.sqrt(tr) <= math.sqrt(p) * op + 1e-12


def test_psd_projection_flagged():
    geom = bl.geometry_from_matrices(np.zeros(2), np.eye(2), np.eye(2))
    bad = np.array([[1.0, 0.0], [0.0, -0.2]])
    summary = bl.PosteriorSummary(mean=np.zeros(2), cov=bad,
                                  restricted_mean=np.zeros(2),
                                  restricted_cov=bad, tail_mass=0.0,
                                  inside_mass=1.0, ess=1000.0, exact=False,
                                  n_draws=1000)
    _op, _tr, projected = bl.cov_discrepancy(summary, geom)
    assert projected


def test_mgf_discrepancy_exact(exact_setup):
    _m, _p, _d, geom, state, post, _s = exact_setup
    lams = bl.random_lambda_set(3, 50, bl.RngStream(200))
    ests = bl.posterior_log_mgf(post, geom, state, lams)
    disc, argmax, devs = bl.mgf_discrepancy(ests, lams)
    assert disc <= 1e-10
    assert devs.shape == (50,)
    assert bl.mgf_discrepancy([(0.0, 0.0)], np.zeros((1, 3)))[0] == 0.0


# ---------------------------------------------------------------------------
# Sandwich probability checks
# ---------------------------------------------------------------------------

def test_sandwich_exact_trivial(exact_setup):
    _m, _p, _d, geom, state, post, _s = exact_setup
    pair = bl.bracket_pair(geom, state, 0.0)
    nu = bl.locality_exponent(state, geom)
    budget = bl.error_budget(0.0, 0.0, pair, nu, 0.0, geom)
    records = bl.prob_sandwich_check(post, geom, state,
                                     bl.default_probe_sets(3), budget)
    for rec in records:
        assert rec.passed
        assert rec.measured == pytest.approx(rec.gaussian, abs=1e-10)


def test_sandwich_complement_consistency(exact_setup):
    _m, _p, _d, geom, state, post, _s = exact_setup
    z = bl.chi2_quantile(3, 0.5)
    inside, _ = bl.set_probability(post, geom, state,
                                   bl.SetSpec(kind="ball", radius_sq=z))
    normal = np.zeros(3)
    normal[0] = 1.0
    upper, _ = bl.set_probability(post, geom, state,
                                  bl.SetSpec(kind="halfspace", normal=normal,
                                             offset=0.3))
    lower, _ = bl.set_probability(post, geom, state,
                                  bl.SetSpec(kind="halfspace", normal=-normal,
                                             offset=-0.3))
    # complements partition the space (half-space boundary has measure 0)
    assert upper + lower == pytest.approx(1.0, abs=1e-10)
    assert 0.0 < inside < 1.0


# ---------------------------------------------------------------------------
# Gaussian KL / Pinsker TV
# ---------------------------------------------------------------------------

def test_kl_tv_trivial():
    gc = bl.gaussian_kl_tv(np.eye(3), np.zeros(3))
    assert gc.kl == 0.0 and gc.tv_bound == 0.0


def test_kl_tv_spec_arithmetic():
    gc = bl.gaussian_kl_tv(0.9 * np.eye(2), np.zeros(2), declared_rd=0.1)
    two_kl = 2.0 * (-0.1 - math.log(0.9))
    assert gc.kl == pytest.approx(two_kl / 2.0, abs=1e-9)
    assert gc.tv_bound == pytest.approx(math.sqrt(gc.kl / 2.0), abs=1e-12)
    assert gc.lemma_bound == pytest.approx(0.01, abs=1e-12)
    assert gc.kl <= gc.lemma_bound


def test_kl_matches_quadrature_1d():
    # Direct quadrature of int log(dP0/dP) dP0 in one dimension.
    gen = np.random.default_rng(42)
    for _ in range(20):
        b = float(1.0 + gen.uniform(-0.5, 0.5))
        delta = float(gen.uniform(-0.8, 0.8))

        def integrand(x):
            log_p0 = scipy.stats.norm.logpdf(x)
            log_p1 = scipy.stats.norm.logpdf(x, loc=delta,
                                             scale=1.0 / math.sqrt(b))
            return math.exp(log_p0) * (log_p0 - log_p1)

        ref, _err = scipy.integrate.quad(integrand, -12, 12)
        gc = bl.gaussian_kl_tv(np.array([[b]]), np.array([delta]))
        assert gc.kl == pytest.approx(ref, abs=1e-8)


def test_kl_rejects_degenerate():
    with pytest.raises(bl.BvmLabError):
        bl.gaussian_kl_tv(np.array([[-0.1]]), np.zeros(1))


def test_tv_mc_within_pinsker():
    # Monte Carlo TV oracle: E0[(1 - dP/dP0)_+] is unbiased for TV.
    gen = np.random.default_rng(77)
    for _ in range(20):
        p = int(gen.integers(1, 5))
        b, delta = _random_b_delta(gen, p)
        gc = bl.gaussian_kl_tv(b, delta)
        draws = gen.standard_normal((100_000, p))
        chol = np.linalg.cholesky(np.linalg.inv(b))
        centered = draws - delta
        log_p1 = (-0.5 * np.einsum("ij,jk,ik->i", centered, b, centered)
                  + 0.5 * float(np.linalg.slogdet(b)[1]))
        log_p0 = -0.5 * np.einsum("ij,ij->i", draws, draws)
        ratio = np.exp(np.clip(log_p1 - log_p0, -700, 50))
        tv_draws = np.clip(1.0 - ratio, 0.0, 1.0)
        tv = float(tv_draws.mean())
        se = float(tv_draws.std(ddof=1) / math.sqrt(draws.shape[0]))
        assert tv <= gc.tv_bound + 3.0 * se
        assert chol.shape == (p, p)


# ---------------------------------------------------------------------------
# Shell concentration
# ---------------------------------------------------------------------------

def _centered_exact(p, n=50):
    model = bl.GaussianMeanModel(p=p, n=n, sigma=1.0)
    proc = bl.LocationProcess(theta=np.zeros(p), noise=bl.GaussianNoise(1.0),
                              matches_model=True)
    data = model.dataset_from_observations(np.zeros((n, p)))
    geom = bl.local_geometry(model, proc)
    state = bl.score_state(model, data, geom)
    pair = bl.bracket_pair(geom, state, 0.0)
    nu = bl.locality_exponent(state, geom)
    budget = bl.error_budget(0.0, 0.0, pair, nu, 0.0, geom)
    post = bl.exact_gaussian_posterior(model, data, bl.Prior.flat())
    return geom, state, pair, budget, post


def test_concentration_exact_p100():
    geom, state, pair, budget, post = _centered_exact(100)
    (rec,) = bl.shell_concentration_check(post, geom, state, pair, budget,
                                          [16.0])
    # oracle: both sides are central chi-square tail integrals
    hi = 100 + math.sqrt(2 * 100 * 16.0)
    assert rec.upper_measured == pytest.approx(scipy.stats.chi2.sf(hi, 100),
                                               rel=1e-6)
    assert rec.upper_bound == pytest.approx(math.exp(-4.0 + budget.delta_plus),
                                            rel=1e-12)
    assert rec.passed


def test_concentration_monotone_in_x():
    geom, state, pair, budget, post = _centered_exact(40)
    recs = bl.shell_concentration_check(post, geom, state, pair, budget,
                                        [2.0, 8.0, 16.0])
    bounds = [r.upper_bound for r in recs]
    assert bounds[0] > bounds[1] > bounds[2]
    for r in recs:
        assert r.passed


def test_concentration_tiny_x_trivial():
    geom, state, pair, budget, post = _centered_exact(10)
    (rec,) = bl.shell_concentration_check(post, geom, state, pair, budget,
                                          [1e-9])
    assert rec.upper_bound >= 1.0 - 1e-6  # bound ~ e^{Delta+} >= 1
    assert rec.passed


def test_concentration_rejects_large_x():
    geom, state, pair, budget, post = _centered_exact(10)
    with pytest.raises(ValueError):
        bl.shell_concentration_check(post, geom, state, pair, budget, [6.0])


def test_bvm_report_assembly(exact_setup):
    _m, _p, _d, geom, state, post, summary = exact_setup
    pair = bl.bracket_pair(geom, state, 0.0)
    nu = bl.locality_exponent(state, geom)
    budget = bl.error_budget(0.0, 0.0, pair, nu, summary.tail_mass, geom)
    lams = bl.random_lambda_set(3, 12, bl.RngStream(777))
    report = bl.bvm_report(summary, post, geom, state, lams,
                           bl.default_probe_sets(3), budget)
    assert report.mean_disc <= 1e-12
    assert report.cov_disc_op <= 1e-12
    assert report.mgf_disc <= 1e-10
    assert report.prob_disc <= 1e-10
    assert report.flags["rd_admissible"]
    assert report.flags["sandwich_all_pass"]
    assert report.q == pytest.approx(state.q)


# ---------------------------------------------------------------------------
# Affine reparameterization invariance (exact mode, bit-level)
# ---------------------------------------------------------------------------

def test_affine_reparameterization_invariance():
    # theta -> c * theta with the geometry recomputed: every standardized
    # discrepancy is unchanged; exact mode is bit-equal by symmetry of the
    # construction.
    c = 10.0

    class Scaled(bl.GaussianMeanModel):
        """Gaussian location model parameterized by theta' = c * theta."""

        def log_lik(self, d, theta):
            return super().log_lik(d, np.asarray(theta) / c)

        def score(self, d, theta):
            return super().score(d, np.asarray(theta) / c) / c

        def observed_hessian(self, d, theta):
            return super().observed_hessian(d, np.asarray(theta) / c) / c**2

    p, n = 2, 30
    base = bl.GaussianMeanModel(p=p, n=n, sigma=1.0)
    proc = bl.LocationProcess(theta=np.full(p, 0.3),
                              noise=bl.GaussianNoise(1.0), matches_model=True)
    data = base.sample_dataset(proc, bl.RngStream(4040))
    scaled = Scaled(p=p, n=n, sigma=1.0, box_half_width=500.0)

    geom = bl.local_geometry(base, proc)
    geom_s = bl.geometry_from_matrices(c * geom.theta_star,
                                       geom.d0_sq / c**2, geom.v0_sq / c**2)
    st_b = bl.score_state(base, data, geom)
    st_s = bl.score_state(scaled, data, geom_s)
    assert st_s.xi == pytest.approx(st_b.xi, abs=1e-13)
    post_b = bl.exact_gaussian_posterior(base, data, bl.Prior.flat())
    sum_b = bl.posterior_moments(post_b, geom)
    post_s = bl.ExactGaussianPosterior(mean=c * post_b.mean,
                                       cov=c**2 * post_b.cov)
    sum_s = bl.posterior_moments(post_s, geom_s)
    md_b = bl.mean_discrepancy(sum_b, st_b, geom)
    md_s = bl.mean_discrepancy(sum_s, st_s, geom_s)
    assert md_s == pytest.approx(md_b, abs=1e-14)
    op_b, tr_b, _ = bl.cov_discrepancy(sum_b, geom)
    op_s, tr_s, _ = bl.cov_discrepancy(sum_s, geom_s)
    assert op_s == pytest.approx(op_b, abs=1e-12)
    assert tr_s == pytest.approx(tr_b, abs=1e-12)
