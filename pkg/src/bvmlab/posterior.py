"""Posterior computation: exact conjugate Gaussian or random-walk Metropolis.

The target is the quasi posterior proportional to exp(L(theta)) pi(theta).
For the Gaussian families with flat or Gaussian priors the posterior is
Gaussian in closed form and serves as the exact oracle; everything else
goes through a preconditioned random-walk Metropolis chain whose proposal
covariance is (s^2 / p) D0^{-2}, with the step scale s adapted during
burn-in toward acceptance 0.234 and frozen afterward.

Moments, restricted moments over the locality set, tail masses, empirical
log-MGFs of lambda' D0 (v - theta_circ), and set probabilities are
computed from either representation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .chisq import noncentral_chi2_cdf, normal_sf
from .errors import SamplingError, UnsupportedCapability
from .geometry import LocalGeometry, ScoreState, spd_root, spd_solve
from .models import (DatasetHandle, GaussianLinearModel, GaussianMeanModel,
                     QuasiModel)
from .rng import RngStream
from .shells import sphere_directions

TARGET_ACCEPT = 0.234
MIN_BURN_IN = 5000


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Prior:
    """Flat, Gaussian (mean zero, precision g_sq), or custom prior density."""

    kind: str
    g_sq: Optional[np.ndarray] = None
    custom_log_density: Optional[Callable[[np.ndarray], float]] = None

    def __post_init__(self):
        if self.kind not in ("flat", "gaussian", "custom"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "gaussian":
            if self.g_sq is None:
                raise ValueError("gaussian prior needs a precision matrix")
            g = np.asarray(self.g_sq, dtype=float)
            if not np.allclose(g, g.T, atol=1e-12):
                raise ValueError("prior precision must be symmetric")
            if np.linalg.eigvalsh((g + g.T) / 2.0).min() < -1e-12:
                raise ValueError("prior precision must be positive semidefinite")
            object.__setattr__(self, "g_sq", (g + g.T) / 2.0)
        if self.kind == "custom" and self.custom_log_density is None:
            raise ValueError("custom prior needs a log-density callable")

    @staticmethod
    def flat() -> "Prior":
        return Prior(kind="flat")

    @staticmethod
    def gaussian(g_sq) -> "Prior":
        return Prior(kind="gaussian", g_sq=np.asarray(g_sq, dtype=float))

    @staticmethod
    def custom(log_density: Callable[[np.ndarray], float]) -> "Prior":
        return Prior(kind="custom", custom_log_density=log_density)

    def log_density(self, theta: np.ndarray) -> float:
        """Unnormalized log prior density."""
        if self.kind == "flat":
            return 0.0
        if self.kind == "gaussian":
            th = np.asarray(theta, dtype=float)
            return -0.5 * float(th @ self.g_sq @ th)
        return float(self.custom_log_density(np.asarray(theta, dtype=float)))


# ---------------------------------------------------------------------------
# Posterior representations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExactGaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def p(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class PosteriorSample:
    """Post-burn-in draws of a Metropolis chain."""
    draws: np.ndarray                      # (N, p)
    chain_meta: dict
    log_weights: Optional[np.ndarray] = None

    @property
    def p(self) -> int:
        return self.draws.shape[1]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]


PosteriorLike = Union[ExactGaussianPosterior, PosteriorSample]


@dataclass(frozen=True)
class PosteriorSummary:
    mean: np.ndarray
    cov: np.ndarray
    restricted_mean: np.ndarray
    restricted_cov: np.ndarray
    tail_mass: float
    inside_mass: float
    ess: float
    exact: bool
    n_draws: int
    flags: dict = field(default_factory=dict)


def exact_gaussian_posterior(model: QuasiModel, data: DatasetHandle,
                             prior: Prior) -> ExactGaussianPosterior:
    """Closed-form posterior for the Gaussian families with flat/Gaussian prior."""
    if prior.kind == "custom":
        raise UnsupportedCapability("no conjugate form for a custom prior")
    if isinstance(model, GaussianMeanModel):
        obs = data.observations
        lik_precision = (data.n / model.sigma**2) * np.eye(model.p)
        rhs = obs.sum_y / model.sigma**2
    elif isinstance(model, GaussianLinearModel):
        obs = data.observations
        lik_precision = model.xtx / model.sigma**2
        rhs = obs.xty / model.sigma**2
    else:
        raise UnsupportedCapability(
            f"family {model.family_id!r} has no conjugate Gaussian posterior"
        )
    precision = lik_precision.copy()
    if prior.kind == "gaussian":
        precision = precision + prior.g_sq
    mean = spd_solve(precision, rhs)
    cov = spd_solve(precision, np.eye(model.p))
    return ExactGaussianPosterior(mean=mean, cov=(cov + cov.T) / 2.0)


# ---------------------------------------------------------------------------
# Random-walk Metropolis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainConfig:
    n_draws: int = 100_000
    burn_in: Optional[int] = None          # default: max(5000, 20% of draws)
    step_scale: float = 2.38
    target_accept: float = TARGET_ACCEPT
    init: Optional[np.ndarray] = None      # default: theta_circ

    def resolved_burn_in(self) -> int:
        if self.burn_in is not None:
            return int(self.burn_in)
        return max(MIN_BURN_IN, int(0.2 * self.n_draws))


def rwm_sample(model: QuasiModel, data: DatasetHandle, prior: Prior,
               geom: LocalGeometry, config: ChainConfig,
               rng: RngStream) -> PosteriorSample:
    """Adaptive random-walk Metropolis targeting exp(L(theta)) pi(theta).

    Proposal covariance (s^2/p) D0^{-2}; s follows a Robbins-Monro
    recursion on the log scale during burn-in and is frozen afterward so
    the retained chain is Markovian.  Acceptance outside [0.05, 0.7] after
    adaptation raises :class:`SamplingError`.
    """
    p = geom.p
    burn_in = config.resolved_burn_in()
    n_total = burn_in + config.n_draws
    low, high = model.domain_box[:, 0], model.domain_box[:, 1]

    def log_post(theta: np.ndarray) -> float:
        if np.any(theta < low) or np.any(theta > high):
            return -math.inf
        return model.log_lik(data, theta) + prior.log_density(theta)

    x = np.array(config.init, dtype=float) if config.init is not None \
        else spd_solve(geom.d0_sq, model.score(data, geom.theta_star)) + geom.theta_star
    if not np.all(np.isfinite(x)):
        raise SamplingError("initial point has non-finite coordinates")
    # The default center can leave the box in extreme regimes; start inside.
    width = high - low
    x = np.clip(x, low + 1e-9 * width, high - 1e-9 * width)
    lp = log_post(x)
    if not math.isfinite(lp):
        raise SamplingError("log posterior is not finite at the initial point")

    gen = rng.generator()
    log_s = math.log(config.step_scale)
    draws = np.empty((config.n_draws, p))
    accept_post = 0
    block = 10_000
    t = 0
    root_inv = geom.d0_inv  # symmetric root inverse: root_inv @ root_inv = D0^{-2}
    while t < n_total:
        m = min(block, n_total - t)
        zs = gen.standard_normal((m, p)) @ root_inv.T
        log_us = np.log(gen.random(m))
        for i in range(m):
            step = t + i
            s = math.exp(log_s) / math.sqrt(p)
            cand = x + s * zs[i]
            lp_cand = log_post(cand)
            log_alpha = lp_cand - lp
            if log_us[i] < log_alpha:
                x, lp = cand, lp_cand
                accepted = True
            else:
                accepted = False
            if step < burn_in:
                alpha = math.exp(min(0.0, log_alpha)) if math.isfinite(log_alpha) else 0.0
                gain = (step + 10.0) ** -0.7
                log_s += gain * (alpha - config.target_accept)
            else:
                draws[step - burn_in] = x
                accept_post += accepted
        t += m
    rate = accept_post / config.n_draws
    if not 0.05 <= rate <= 0.7:
        raise SamplingError(
            f"post-adaptation acceptance rate {rate:.3f} outside [0.05, 0.7]"
        )
    meta = {
        "acceptance_rate": float(rate),
        "step_scale": float(math.exp(log_s)),
        "burn_in": int(burn_in),
        "n_draws": int(config.n_draws),
        "seed": int(rng.seed),
        "stream_key": list(rng.key),
    }
    return PosteriorSample(draws=draws, chain_meta=meta)


# ---------------------------------------------------------------------------
# Effective sample size (Geyer initial positive sequence)
# ---------------------------------------------------------------------------

def _autocorr(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    xc = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n].real / n
    if acov[0] <= 0.0:
        return np.zeros(1)
    return acov / acov[0]


def ess_per_coordinate(draws: np.ndarray) -> np.ndarray:
    """ESS per coordinate with truncation at the first negative pair sum."""
    n, p = draws.shape
    out = np.empty(p)
    for j in range(p):
        rho = _autocorr(draws[:, j])
        s = 0.0
        t = 1
        while t + 1 < len(rho):
            pair = rho[t] + rho[t + 1]
            if pair < 0.0:
                break
            s += pair
            t += 2
        out[j] = max(1.0, min(float(n), n / (1.0 + 2.0 * s)))
    return out


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------

def _eta_gaussian(post: ExactGaussianPosterior, geom: LocalGeometry,
                  center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of D0 (v - center) under the exact posterior."""
    m = geom.d0 @ (post.mean - center)
    s = geom.d0 @ post.cov @ geom.d0
    return m, (s + s.T) / 2.0


def _spherical_scale(mat: np.ndarray, tol: float = 1e-9) -> Optional[float]:
    p = mat.shape[0]
    c = float(np.trace(mat)) / p
    if c <= 0.0:
        return None
    if np.max(np.abs(mat - c * np.eye(p))) <= tol * max(1.0, c):
        return c
    return None


def _exact_inside_mass(post: ExactGaussianPosterior, geom: LocalGeometry,
                       flags: dict) -> float:
    """P(||D0 (v - theta_star)|| <= r0) for the exact Gaussian posterior."""
    m, s = _eta_gaussian(post, geom, geom.theta_star)
    c = _spherical_scale(s)
    if c is not None:
        return noncentral_chi2_cdf(geom.r0**2 / c, geom.p, float(m @ m) / c)
    # General covariance: deterministic quasi-MC fallback, flagged.
    flags["tail_mass_mc"] = True
    gen = RngStream(716925, (geom.p,)).generator()
    root, _ = spd_root(s + 1e-300 * np.eye(geom.p))
    z = gen.standard_normal((200_000, geom.p)) @ root.T + m
    return float(np.mean(np.einsum("ij,ij->i", z, z) <= geom.r0**2))


def posterior_moments(post: PosteriorLike, geom: LocalGeometry,
                      min_draws: int = 1000) -> PosteriorSummary:
    """Posterior mean/covariance, restricted moments, tail mass, and ESS.

    In exact mode the restriction to the locality set is a no-op (its tail
    mass at the default radius is far below float tolerance) and the tail
    mass is computed from the chi-square representation.  In sampling mode
    the ESS below 100 sets the ``low_precision`` flag carried downstream.
    """
    flags: dict = {}
    if isinstance(post, ExactGaussianPosterior):
        inside = _exact_inside_mass(post, geom, flags)
        inside = min(max(inside, 1e-300), 1.0)
        return PosteriorSummary(mean=post.mean.copy(), cov=post.cov.copy(),
                                restricted_mean=post.mean.copy(),
                                restricted_cov=post.cov.copy(),
                                tail_mass=(1.0 - inside) / inside,
                                inside_mass=inside,
                                ess=math.inf, exact=True, n_draws=0,
                                flags=flags)
    draws = post.draws
    n = draws.shape[0]
    if n < min_draws:
        raise SamplingError(f"need at least {min_draws} draws, got {n}")
    mean = draws.mean(axis=0)
    cov = np.cov(draws, rowvar=False, ddof=1).reshape(geom.p, geom.p)
    d = draws - geom.theta_star
    nsq = np.einsum("ij,jk,ik->i", d, geom.d0_sq, d)
    w = nsq <= geom.r0**2
    inside = float(w.mean())
    if inside == 0.0:
        flags["empty_locality"] = True
        restricted_mean, restricted_cov = mean, cov
        tail = math.inf
    else:
        sub = draws[w]
        restricted_mean = sub.mean(axis=0)
        if sub.shape[0] > 1:
            restricted_cov = np.cov(sub, rowvar=False, ddof=1).reshape(geom.p, geom.p)
        else:
            restricted_cov = np.zeros((geom.p, geom.p))
        tail = (1.0 - inside) / inside
    ess = float(ess_per_coordinate(draws).min())
    if ess < 100.0:
        flags["low_precision"] = True
    return PosteriorSummary(mean=mean, cov=cov,
                            restricted_mean=restricted_mean,
                            restricted_cov=restricted_cov,
                            tail_mass=tail, inside_mass=inside,
                            ess=ess, exact=False, n_draws=n, flags=flags)


# ---------------------------------------------------------------------------
# Empirical log-MGF of lambda' D0 (v - theta_circ)
# ---------------------------------------------------------------------------

def posterior_log_mgf(post: PosteriorLike, geom: LocalGeometry,
                      state: ScoreState, lambdas: np.ndarray, *,
                      restricted: bool = True,
                      n_batches: int = 20) -> list[tuple[float, float]]:
    """Per-lambda (log-MGF estimate, standard error).

    Only arguments with ||lambda||^2 <= p are admitted.  In sampling mode
    the restricted expectation is the unnormalized mean of
    exp(lambda' eta) over draws inside the locality set, with batch-means
    standard errors; in exact mode the Gaussian closed form is used and
    the standard error is zero.
    """
    lambdas = np.atleast_2d(np.asarray(lambdas, dtype=float))
    p = geom.p
    for lam in lambdas:
        if float(lam @ lam) > p * (1.0 + 1e-9):
            raise ValueError("||lambda||^2 must not exceed p")
    if isinstance(post, ExactGaussianPosterior):
        m, s = _eta_gaussian(post, geom, state.theta_circ)
        return [(float(lam @ m + 0.5 * lam @ s @ lam), 0.0) for lam in lambdas]
    eta = (post.draws - state.theta_circ) @ geom.d0
    if restricted:
        d = post.draws - geom.theta_star
        nsq = np.einsum("ij,jk,ik->i", d, geom.d0_sq, d)
        w = (nsq <= geom.r0**2).astype(float)
    else:
        w = np.ones(eta.shape[0])
    out = []
    n = eta.shape[0]
    bounds = np.linspace(0, n, n_batches + 1).astype(int)
    for lam in lambdas:
        x = eta @ lam
        shift = float(np.max(x))
        vals = np.exp(x - shift) * w
        mean = float(vals.mean())
        batch_means = np.array([vals[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])])
        se_mean = float(batch_means.std(ddof=1) / math.sqrt(n_batches))
        if mean <= 0.0:
            out.append((-math.inf, math.inf))
        else:
            out.append((shift + math.log(mean), se_mean / mean))
    return out


# ---------------------------------------------------------------------------
# Set probabilities in eta = D0 (v - theta_circ) coordinates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SetSpec:
    """Ball, ellipsoid, or half-space in standardized coordinates.

    ball:      ||eta||^2 <= radius_sq
    ellipsoid: eta' matrix eta <= radius_sq
    halfspace: normal' eta > offset
    full:      the whole space
    """
    kind: str
    radius_sq: float = 0.0
    matrix: Optional[np.ndarray] = None
    normal: Optional[np.ndarray] = None
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ball", "ellipsoid", "halfspace", "full"):
            raise ValueError(f"unsupported set shape {self.kind!r}")
        if self.kind == "ellipsoid" and self.matrix is None:
            raise ValueError("ellipsoid set needs a matrix")
        if self.kind == "halfspace" and self.normal is None:
            raise ValueError("halfspace set needs a normal vector")

    def indicator(self, eta: np.ndarray) -> np.ndarray:
        if self.kind == "full":
            return np.ones(eta.shape[0], dtype=bool)
        if self.kind == "ball":
            return np.einsum("ij,ij->i", eta, eta) <= self.radius_sq
        if self.kind == "ellipsoid":
            return np.einsum("ij,jk,ik->i", eta, self.matrix, eta) <= self.radius_sq
        return eta @ self.normal > self.offset

    def gaussian_probability(self, mean: np.ndarray, cov: np.ndarray) -> float:
        """P(eta in set) for eta ~ N(mean, cov), closed forms only."""
        if self.kind == "full":
            return 1.0
        if self.kind == "halfspace":
            mu = float(self.normal @ mean)
            sd = math.sqrt(max(1e-300, float(self.normal @ cov @ self.normal)))
            return normal_sf((self.offset - mu) / sd)
        if self.kind == "ball":
            c = _spherical_scale(cov)
            if c is None:
                raise UnsupportedCapability(
                    "exact ball probability needs a spherical covariance"
                )
            return noncentral_chi2_cdf(self.radius_sq / c, mean.shape[0],
                                       float(mean @ mean) / c)
        raise UnsupportedCapability(
            "exact ellipsoid probabilities are not implemented; use sampling mode"
        )


def standard_gaussian_probability(set_spec: SetSpec, p: int) -> float:
    """P(gamma in set) for standard normal gamma (reference probability)."""
    return set_spec.gaussian_probability(np.zeros(p), np.eye(p))


def set_probability(post: PosteriorLike, geom: LocalGeometry, state: ScoreState,
                    set_spec: SetSpec, *, restricted: bool = False,
                    n_batches: int = 20) -> tuple[float, float]:
    """Posterior probability of the event in eta coordinates, with SE.

    ``restricted=True`` computes the unnormalized locality-restricted
    probability (the event intersected with the locality set).
    """
    if isinstance(post, ExactGaussianPosterior):
        m, s = _eta_gaussian(post, geom, state.theta_circ)
        try:
            return float(set_spec.gaussian_probability(m, s)), 0.0
        except UnsupportedCapability:
            # No closed form (e.g. ball under a non-spherical standardized
            # covariance): deterministic Monte Carlo on the exact law.
            gen = RngStream(424377, (geom.p, 1)).generator()
            root, _ = spd_root(s)
            eta = gen.standard_normal((200_000, geom.p)) @ root.T + m
            ind = set_spec.indicator(eta)
            prob = float(ind.mean())
            se = math.sqrt(max(prob * (1.0 - prob), 1e-12) / ind.shape[0])
            return prob, se
    eta = (post.draws - state.theta_circ) @ geom.d0
    ind = set_spec.indicator(eta).astype(float)
    if restricted:
        d = post.draws - geom.theta_star
        nsq = np.einsum("ij,jk,ik->i", d, geom.d0_sq, d)
        ind = ind * (nsq <= geom.r0**2)
    n = ind.shape[0]
    bounds = np.linspace(0, n, n_batches + 1).astype(int)
    batch_means = np.array([ind[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])])
    return float(ind.mean()), float(batch_means.std(ddof=1) / math.sqrt(n_batches))


# ---------------------------------------------------------------------------
# Diagnostics and dumps
# ---------------------------------------------------------------------------

def flat_prior_propriety_probe(model: QuasiModel, data: DatasetHandle,
                               geom: LocalGeometry, n_rays: int = 8,
                               drop: float = 10.0) -> bool:
    """Heuristic propriety check: L must fall off along rays to the box edge.

    Returns False (improper-looking) when some ray to the domain boundary
    keeps the log-likelihood ratio above ``-drop``; degenerate separable
    logistic data is the known failure this catches.
    """
    dirs = sphere_directions(geom.p, n_rays, seed=23)
    low, high = model.domain_box[:, 0], model.domain_box[:, 1]
    for u in dirs:
        step = geom.d0_inv @ u
        scale = np.inf
        for j in range(geom.p):
            if step[j] > 0:
                scale = min(scale, (high[j] - geom.theta_star[j]) / step[j])
            elif step[j] < 0:
                scale = min(scale, (low[j] - geom.theta_star[j]) / step[j])
        theta_far = geom.theta_star + 0.999 * scale * step
        if model.log_lik_ratio(data, theta_far, geom.theta_star) > -drop:
            return False
    return True


def dump_draws(sample: PosteriorSample, bin_path, sidecar_path) -> None:
    """Write draws as a little-endian float64 matrix with a JSON sidecar."""
    arr = np.ascontiguousarray(sample.draws, dtype="<f8")
    with open(bin_path, "wb") as fh:
        fh.write(arr.tobytes())
    sidecar = {
        "dtype": "<f8",
        "order": "C",
        "shape": list(arr.shape),
        "burn_in": sample.chain_meta.get("burn_in"),
        "seed": sample.chain_meta.get("seed"),
        "stream_key": sample.chain_meta.get("stream_key"),
    }
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
