import json
import math

import numpy as np
import pytest
import scipy.stats

import bvmlab as bl
from bvmlab.errors import SamplingError, UnsupportedCapability
from bvmlab.models import DatasetHandle, PooledCounts


@pytest.fixture(scope="module")
def linear_setup():
    model = bl.GaussianLinearModel(p=5, n=100, sigma=1.0, design_seed=11)
    proc = bl.LocationProcess(theta=np.zeros(5), noise=bl.GaussianNoise(1.0),
                              matches_model=True)
    data = model.sample_dataset(proc, bl.RngStream(1, (0,)))
    geom = bl.local_geometry(model, proc)
    return model, proc, data, geom


# ---------------------------------------------------------------------------
# Exact conjugate posterior
# ---------------------------------------------------------------------------

def test_conjugate_flat(mean_model, mean_data):
    post = bl.exact_gaussian_posterior(mean_model, mean_data, bl.Prior.flat())
    assert post.mean == pytest.approx([2.0])
    assert post.cov == pytest.approx(np.array([[0.25]]))


def test_conjugate_gaussian_prior(mean_model, mean_data):
    post = bl.exact_gaussian_posterior(mean_model, mean_data,
                                       bl.Prior.gaussian([[4.0]]))
    assert post.mean == pytest.approx([1.0])
    assert post.cov == pytest.approx(np.array([[0.125]]))


def test_conjugate_prior_limit(mean_model, mean_data):
    flat = bl.exact_gaussian_posterior(mean_model, mean_data, bl.Prior.flat())
    tiny = bl.exact_gaussian_posterior(mean_model, mean_data,
                                       bl.Prior.gaussian([[1e-13]]))
    assert np.max(np.abs(flat.mean - tiny.mean)) <= 1e-12
    assert np.max(np.abs(flat.cov - tiny.cov)) <= 1e-12


def test_conjugate_rejects_nonconjugate():
    model = bl.LogisticModel(p=2, n=50, pool_size=8, design_seed=0)
    proc = bl.BinaryProcess(theta=np.zeros(2), matches_model=True)
    data = model.sample_dataset(proc, bl.RngStream(0))
    with pytest.raises(UnsupportedCapability):
        bl.exact_gaussian_posterior(model, data, bl.Prior.flat())


# ---------------------------------------------------------------------------
# Random-walk Metropolis
# ---------------------------------------------------------------------------

def test_chain_reproducible(linear_setup):
    model, _proc, data, geom = linear_setup
    cfg = bl.ChainConfig(n_draws=3000, burn_in=1000)
    s1 = bl.rwm_sample(model, data, bl.Prior.flat(), geom, cfg, bl.RngStream(2))
    s2 = bl.rwm_sample(model, data, bl.Prior.flat(), geom, cfg, bl.RngStream(2))
    assert np.array_equal(s1.draws, s2.draws)
    assert s1.chain_meta == s2.chain_meta


def test_chain_matches_exact_oracle(linear_setup):
    model, _proc, data, geom = linear_setup
    exact = bl.exact_gaussian_posterior(model, data, bl.Prior.flat())
    sample = bl.rwm_sample(model, data, bl.Prior.flat(), geom,
                           bl.ChainConfig(n_draws=60_000), bl.RngStream(3))
    summary = bl.posterior_moments(sample, geom)
    sd = np.sqrt(np.diag(summary.cov))
    tol = 4.0 * sd / math.sqrt(summary.ess)
    assert np.all(np.abs(summary.mean - exact.mean) <= tol)
    assert 0.05 <= sample.chain_meta["acceptance_rate"] <= 0.7


def test_chain_ess_reasonable(linear_setup):
    model, _proc, data, geom = linear_setup
    sample = bl.rwm_sample(model, data, bl.Prior.flat(), geom,
                           bl.ChainConfig(n_draws=20_000), bl.RngStream(4))
    summary = bl.posterior_moments(sample, geom)
    # regression threshold: preconditioned RWM at p=5 mixes well
    assert summary.ess >= 500.0


def test_logistic_chain_ess_regression():
    model = bl.LogisticModel(p=5, n=2000, pool_size=20, design_seed=6)
    proc = bl.BinaryProcess(theta=np.resize([0.6, -0.4], 5), matches_model=True)
    data = model.sample_dataset(proc, bl.RngStream(10))
    geom = bl.local_geometry(model, proc)
    sample = bl.rwm_sample(model, data, bl.Prior.flat(), geom,
                           bl.ChainConfig(n_draws=20_000), bl.RngStream(11))
    summary = bl.posterior_moments(sample, geom)
    assert summary.ess >= 500.0 * 20_000 / 100_000  # >= 500 per 1e5 draws


def test_shift_invariance_of_outputs(linear_setup):
    # Adding a constant to L leaves the target invariant.  The Metropolis
    # ratio cancels the constant analytically; numerically the shifted
    # sums round at a different magnitude, so rare accept decisions can
    # flip at the ulp level and only statistical agreement is checkable.
    model, _proc, data, geom = linear_setup

    class Shifted(bl.GaussianLinearModel):
        def log_lik(self, d, theta):
            return super().log_lik(d, theta) + 1000.0

    shifted = Shifted(p=5, n=100, sigma=1.0, design_seed=11)
    cfg = bl.ChainConfig(n_draws=30_000)
    s1 = bl.rwm_sample(model, data, bl.Prior.flat(), geom, cfg, bl.RngStream(5))
    s2 = bl.rwm_sample(shifted, data, bl.Prior.flat(), geom, cfg, bl.RngStream(5))
    m1 = bl.posterior_moments(s1, geom)
    m2 = bl.posterior_moments(s2, geom)
    joint_se = (np.sqrt(np.diag(m1.cov) / m1.ess)
                + np.sqrt(np.diag(m2.cov) / m2.ess))
    assert np.all(np.abs(m1.mean - m2.mean) <= 5.0 * joint_se)
    assert abs(s1.chain_meta["acceptance_rate"]
               - s2.chain_meta["acceptance_rate"]) <= 0.01


def test_gaussian_prior_to_flat_limit(linear_setup):
    model, _proc, data, geom = linear_setup
    cfg = bl.ChainConfig(n_draws=30_000)
    flat = bl.rwm_sample(model, data, bl.Prior.flat(), geom, cfg, bl.RngStream(6))
    tiny = bl.rwm_sample(model, data, bl.Prior.gaussian(1e-8 * np.eye(5)),
                         geom, cfg, bl.RngStream(7))
    mf = bl.posterior_moments(flat, geom)
    mt = bl.posterior_moments(tiny, geom)
    joint_se = (np.sqrt(np.diag(mf.cov) / mf.ess)
                + np.sqrt(np.diag(mt.cov) / mt.ess))
    assert np.all(np.abs(mf.mean - mt.mean) <= 5.0 * joint_se)


def test_chain_rejects_bad_init(linear_setup):
    model, _proc, data, geom = linear_setup
    cfg = bl.ChainConfig(n_draws=2000, init=np.full(5, np.nan))
    with pytest.raises(SamplingError):
        bl.rwm_sample(model, data, bl.Prior.flat(), geom, cfg, bl.RngStream(8))


# ---------------------------------------------------------------------------
# Moments and the restriction bookkeeping
# ---------------------------------------------------------------------------

def test_exact_moments_passthrough(mean_model, mean_data, mean_process):
    geom = bl.local_geometry(mean_model, mean_process)
    post = bl.exact_gaussian_posterior(mean_model, mean_data, bl.Prior.flat())
    summary = bl.posterior_moments(post, geom)
    assert summary.exact and summary.ess == math.inf
    assert np.array_equal(summary.mean, post.mean)
    assert np.array_equal(summary.restricted_mean, post.mean)
    # tail mass from the chi-square representation
    inside = scipy.stats.ncx2.cdf(geom.r0**2, 1, 0.0) if False else \
        scipy.stats.chi2.cdf(geom.r0**2, 1)
    assert summary.tail_mass == pytest.approx((1 - inside) / inside, rel=1e-6)


def test_mc_moments_match_exact(linear_setup):
    model, _proc, data, geom = linear_setup
    exact = bl.exact_gaussian_posterior(model, data, bl.Prior.flat())
    sample = bl.rwm_sample(model, data, bl.Prior.flat(), geom,
                           bl.ChainConfig(n_draws=50_000), bl.RngStream(9))
    summary = bl.posterior_moments(sample, geom)
    se = np.sqrt(np.diag(summary.cov) / summary.ess)
    assert np.all(np.abs(summary.mean - exact.mean) <= 4.0 * se)


def test_restriction_bookkeeping(linear_setup):
    model, _proc, data, geom = linear_setup
    sample = bl.rwm_sample(model, data, bl.Prior.flat(), geom,
                           bl.ChainConfig(n_draws=5000), bl.RngStream(12))
    summary = bl.posterior_moments(sample, geom)
    assert summary.tail_mass == pytest.approx(
        (1.0 - summary.inside_mass) / summary.inside_mass, abs=1e-12)
    # restriction is a no-op at an enormous radius
    big = bl.geometry_from_matrices(geom.theta_star, geom.d0_sq, geom.v0_sq,
                                    r0_override=1e6)
    full = bl.posterior_moments(sample, big)
    assert np.max(np.abs(full.restricted_mean - full.mean)) <= 1e-6
    assert full.tail_mass == 0.0


def test_min_draws_enforced(linear_setup):
    model, _proc, data, geom = linear_setup
    sample = bl.rwm_sample(model, data, bl.Prior.flat(), geom,
                           bl.ChainConfig(n_draws=1000, burn_in=200),
                           bl.RngStream(13))
    short = bl.PosteriorSample(draws=sample.draws[:500],
                               chain_meta=sample.chain_meta)
    with pytest.raises(SamplingError):
        bl.posterior_moments(short, geom)


# ---------------------------------------------------------------------------
# Posterior log-MGF
# ---------------------------------------------------------------------------

def test_mgf_zero_lambda(linear_setup):
    model, _proc, data, geom = linear_setup
    state = bl.score_state(model, data, geom)
    post = bl.exact_gaussian_posterior(model, data, bl.Prior.flat())
    (val, se), = bl.posterior_log_mgf(post, geom, state, np.zeros((1, 5)))
    assert val == 0.0 and se == 0.0


def test_mgf_exact_and_symmetry(linear_setup):
    model, _proc, data, geom = linear_setup
    state = bl.score_state(model, data, geom)
    post = bl.exact_gaussian_posterior(model, data, bl.Prior.flat())
    lams = bl.random_lambda_set(5, 20, bl.RngStream(14))
    vals = bl.posterior_log_mgf(post, geom, state, lams)
    for lam, (val, _se) in zip(lams, vals):
        assert val == pytest.approx(0.5 * float(lam @ lam), abs=1e-10)
    flipped = bl.posterior_log_mgf(post, geom, state, -lams)
    for (v1, _), (v2, _) in zip(vals, flipped):
        assert v1 == pytest.approx(v2, abs=1e-10)


def test_mgf_mc_within_se(linear_setup):
    model, _proc, data, geom = linear_setup
    state = bl.score_state(model, data, geom)
    sample = bl.rwm_sample(model, data, bl.Prior.flat(), geom,
                           bl.ChainConfig(n_draws=40_000), bl.RngStream(15))
    lams = bl.random_lambda_set(5, 10, bl.RngStream(16))
    ests = bl.posterior_log_mgf(sample, geom, state, lams)
    exact = bl.posterior_log_mgf(
        bl.exact_gaussian_posterior(model, data, bl.Prior.flat()),
        geom, state, lams)
    for (est, se), (ref, _) in zip(ests, exact):
        assert abs(est - ref) <= 5.0 * max(se, 1e-4)


def test_mgf_rejects_large_lambda(linear_setup):
    model, _proc, data, geom = linear_setup
    state = bl.score_state(model, data, geom)
    post = bl.exact_gaussian_posterior(model, data, bl.Prior.flat())
    lam = np.zeros((1, 5))
    lam[0, 0] = math.sqrt(5.0) + 0.1
    with pytest.raises(ValueError):
        bl.posterior_log_mgf(post, geom, state, lam)


# ---------------------------------------------------------------------------
# Set probabilities
# ---------------------------------------------------------------------------

def test_set_probability_closed_forms(linear_setup):
    model, _proc, data, geom = linear_setup
    state = bl.score_state(model, data, geom)
    post = bl.exact_gaussian_posterior(model, data, bl.Prior.flat())
    full, _ = bl.set_probability(post, geom, state, bl.SetSpec(kind="full"))
    assert full == 1.0
    z = bl.chi2_quantile(5, 0.3)
    ball, _ = bl.set_probability(post, geom, state,
                                 bl.SetSpec(kind="ball", radius_sq=z))
    assert ball == pytest.approx(0.7, abs=1e-10)
    normal = np.zeros(5)
    normal[0] = 1.0
    half, _ = bl.set_probability(post, geom, state,
                                 bl.SetSpec(kind="halfspace", normal=normal))
    assert half == pytest.approx(0.5, abs=1e-12)


def test_set_probability_mc_vs_exact(linear_setup):
    model, _proc, data, geom = linear_setup
    state = bl.score_state(model, data, geom)
    sample = bl.rwm_sample(model, data, bl.Prior.flat(), geom,
                           bl.ChainConfig(n_draws=40_000), bl.RngStream(17))
    z = bl.chi2_quantile(5, 0.5)
    spec = bl.SetSpec(kind="ball", radius_sq=z)
    mc, se = bl.set_probability(sample, geom, state, spec)
    assert abs(mc - 0.5) <= 5.0 * max(se, 1e-3)


def test_set_spec_validation():
    with pytest.raises(ValueError):
        bl.SetSpec(kind="cube")
    with pytest.raises(ValueError):
        bl.SetSpec(kind="halfspace")


# ---------------------------------------------------------------------------
# Diagnostics and dumps
# ---------------------------------------------------------------------------

def test_propriety_probe_flags_separable():
    model = bl.LogisticModel(p=1, n=20, pool_size=6, design_seed=1)
    proc = bl.BinaryProcess(theta=np.array([0.5]), matches_model=True)
    counts = np.array([5, 5, 5, 5, 0, 0], dtype=np.int64)
    succ = np.where(model.pool[:, 0] > 0, counts, 0).astype(np.int64)
    sep = DatasetHandle(PooledCounts(counts=counts, totals=succ), 20, None)
    geom = bl.local_geometry(model, proc)
    assert not bl.flat_prior_propriety_probe(model, sep, geom)
    healthy = model.sample_dataset(proc, bl.RngStream(30))
    assert bl.flat_prior_propriety_probe(model, healthy, geom)


def test_dump_draws_roundtrip(tmp_path, linear_setup):
    model, _proc, data, geom = linear_setup
    sample = bl.rwm_sample(model, data, bl.Prior.flat(), geom,
                           bl.ChainConfig(n_draws=2000, burn_in=500),
                           bl.RngStream(18))
    bin_path = tmp_path / "draws.bin"
    side_path = tmp_path / "draws.json"
    bl.dump_draws(sample, bin_path, side_path)
    meta = json.loads(side_path.read_text())
    arr = np.frombuffer(bin_path.read_bytes(), dtype="<f8").reshape(meta["shape"])
    assert np.array_equal(arr, sample.draws)
    assert meta["burn_in"] == sample.chain_meta["burn_in"]
