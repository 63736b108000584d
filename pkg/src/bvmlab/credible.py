"""Elliptic credible sets, their posterior mass, and frequentist coverage.

Three set constructions share the elliptic form
``{theta : (theta - center)' scale_sq (theta - center) <= z}``:

* oracle:           center theta_circ, scale D0^2,
* posterior-moment: center posterior mean, scale inverse posterior
  covariance,
* plugin-fisher:    center posterior mean, scale the model Fisher matrix
  evaluated at the center (computed under the parametric measure, so it
  inherits that measure's blind spot under misspecification).

Coverage is measured with respect to theta_star (the best parametric
fit).  Under misspecification the standardized score has covariance
``D0^{-1} V0^2 D0^{-1}`` (the sandwich matrix), which is what actually
governs coverage; ``sandwich_coverage`` evaluates the implied limit so
credible mass and coverage can be compared quantitatively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chisq import chi2_cdf, chi2_quantile, noncentral_chi2_cdf
from .errors import BvmLabError, SamplingError, UnsupportedCapability
from .geometry import (LocalGeometry, ScoreState, local_geometry, score_state,
                       spd_solve)
from .models import QuasiModel, TrueProcess
from .posterior import (ChainConfig, ExactGaussianPosterior, PosteriorLike,
                        PosteriorSummary, Prior, exact_gaussian_posterior,
                        posterior_moments, rwm_sample)
from .rng import RngStream

SET_KINDS = ("oracle", "posterior_moment", "plugin_fisher")


@dataclass(frozen=True)
class CredibleSet:
    kind: str
    center: np.ndarray
    scale_sq: np.ndarray
    z: float
    alpha: Optional[float]
    psd_projected: bool = False

    def quadratic(self, theta) -> float:
        d = np.asarray(theta, dtype=float) - self.center
        return float(d @ self.scale_sq @ d)


def set_membership(cset: CredibleSet, theta) -> bool:
    return cset.quadratic(theta) <= cset.z


def _psd_part(mat: np.ndarray) -> tuple[np.ndarray, bool]:
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() >= 0.0:
        return sym, False
    fixed = (vecs * np.maximum(vals, 0.0)) @ vecs.T
    return (fixed + fixed.T) / 2.0, True


def build_credible_set(kind: str, center, scale_sq, *, alpha: Optional[float] = None,
                       z: Optional[float] = None) -> CredibleSet:
    """Elliptic set of the given kind; z from the chi-square quantile at alpha."""
    if kind not in SET_KINDS:
        raise ValueError(f"set kind must be one of {SET_KINDS}")
    center = np.asarray(center, dtype=float).ravel()
    scale_sq, projected = _psd_part(np.asarray(scale_sq, dtype=float))
    p = center.shape[0]
    if (alpha is None) == (z is None):
        raise ValueError("provide exactly one of alpha or z")
    if z is None:
        z = chi2_quantile(p, alpha)
    return CredibleSet(kind=kind, center=center, scale_sq=scale_sq,
                       z=float(z), alpha=alpha, psd_projected=projected)


def oracle_set(state: ScoreState, geom: LocalGeometry, *, alpha=None, z=None
               ) -> CredibleSet:
    return build_credible_set("oracle", state.theta_circ, geom.d0_sq,
                              alpha=alpha, z=z)


def posterior_moment_set(summary: PosteriorSummary, *, alpha=None, z=None,
                         restricted: bool = False) -> CredibleSet:
    cov = summary.restricted_cov if restricted else summary.cov
    cov, projected = _psd_part(cov)
    eigs = np.linalg.eigvalsh(cov)
    if eigs.min() <= 0.0:
        raise BvmLabError("posterior covariance is singular")
    prec = spd_solve(cov, np.eye(cov.shape[0]))
    mean = summary.restricted_mean if restricted else summary.mean
    cset = build_credible_set("posterior_moment", mean, prec, alpha=alpha, z=z)
    if projected:
        cset = CredibleSet(kind=cset.kind, center=cset.center,
                           scale_sq=cset.scale_sq, z=cset.z, alpha=cset.alpha,
                           psd_projected=True)
    return cset


def plugin_fisher_set(model: QuasiModel, summary: PosteriorSummary, *,
                      alpha=None, z=None) -> CredibleSet:
    mean = summary.mean
    return build_credible_set("plugin_fisher", mean, model.plugin_fisher(mean),
                              alpha=alpha, z=z)


# ---------------------------------------------------------------------------
# Posterior mass of a set
# ---------------------------------------------------------------------------

def posterior_mass(cset: CredibleSet, post: PosteriorLike,
                   geom: LocalGeometry, n_batches: int = 20
                   ) -> tuple[float, float]:
    """Posterior probability of the set, with a standard error.

    Exact mode: when the set's quadratic form is simultaneously
    diagonalizable with the posterior covariance into a spherical problem
    (true for all built-in conjugate scenarios) the mass is a noncentral
    chi-square integral; otherwise falls back to a deterministic
    quasi-Monte Carlo evaluation of the exact Gaussian law.
    """
    if isinstance(post, ExactGaussianPosterior):
        p = post.p
        # Whiten: theta = mean + C v with v ~ N(0, I) and C the covariance
        # root; the set quadratic becomes (C v + offset)' S (C v + offset).
        vals, vecs = np.linalg.eigh(post.cov)
        if vals.min() <= 0.0:
            raise BvmLabError("exact posterior covariance is singular")
        root = (vecs * np.sqrt(vals)) @ vecs.T
        m = root @ cset.scale_sq @ root
        m = (m + m.T) / 2.0
        w = np.linalg.eigvalsh(m)
        offset = post.mean - cset.center
        if np.max(np.abs(w - w.mean())) <= 1e-9 * max(1.0, abs(w.mean())):
            # C S C = c I: the quadratic is c * || v + C^{-1} offset ||^2.
            c = float(w.mean())
            if c <= 0.0:
                return 1.0, 0.0
            shift_vec = np.linalg.solve(root, offset)
            nc = float(shift_vec @ shift_vec)
            return noncentral_chi2_cdf(cset.z / c, p, nc), 0.0
        # General weighted chi-square: deterministic MC on the exact law.
        gen = RngStream(902113, (p,)).generator()
        v = gen.standard_normal((200_000, p))
        theta = v @ root.T + post.mean
        d = theta - cset.center
        quad = np.einsum("ij,jk,ik->i", d, cset.scale_sq, d)
        inside = quad <= cset.z
        mass = float(inside.mean())
        se = math.sqrt(max(mass * (1.0 - mass), 1e-12) / inside.shape[0])
        return mass, se
    draws = post.draws
    d = draws - cset.center
    quad = np.einsum("ij,jk,ik->i", d, cset.scale_sq, d)
    ind = (quad <= cset.z).astype(float)
    n = ind.shape[0]
    bounds = np.linspace(0, n, n_batches + 1).astype(int)
    batch_means = np.array([ind[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])])
    return float(ind.mean()), float(batch_means.std(ddof=1) / math.sqrt(n_batches))


# ---------------------------------------------------------------------------
# Sandwich matrix and its implied coverage
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SandwichSpec:
    m: np.ndarray  # D0^{-1} V0^2 D0^{-1}, the covariance of xi

    @property
    def is_identity(self) -> bool:
        p = self.m.shape[0]
        return bool(np.max(np.abs(self.m - np.eye(p))) <= 1e-9)


def sandwich_matrix(geom: LocalGeometry) -> SandwichSpec:
    m = geom.d0_inv @ geom.v0_sq @ geom.d0_inv
    return SandwichSpec(m=(m + m.T) / 2.0)


def sandwich_coverage(spec: SandwichSpec, z: float, n_mc: int = 1_000_000,
                      rng: Optional[RngStream] = None) -> float:
    """Limit coverage P(||m^{1/2} gamma||^2 <= z) under the sandwich law.

    Closed form for p = 1; Monte Carlo over the eigenvalue-weighted
    chi-square otherwise (deterministic default stream).
    """
    w = np.linalg.eigvalsh(spec.m)
    p = w.shape[0]
    if p == 1:
        if w[0] <= 0:
            return 1.0
        return chi2_cdf(z / float(w[0]), 1)
    gen = (rng or RngStream(5150211, (p,))).generator()
    draws = gen.standard_normal((n_mc, p)) ** 2 @ np.maximum(w, 0.0)
    return float(np.mean(draws <= z))


# ---------------------------------------------------------------------------
# Coverage Monte Carlo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoverageResult:
    n_reps: int
    covered: int
    rate: float
    binomial_se: float
    target: float
    failures: int
    valid: bool

    @staticmethod
    def from_counts(covered: int, n_reps: int, target: float,
                    failures: int, attempted: int) -> "CoverageResult":
        rate = covered / n_reps if n_reps else math.nan
        se = math.sqrt(max(rate * (1.0 - rate), 0.0) / n_reps) if n_reps else math.nan
        return CoverageResult(n_reps=n_reps, covered=covered, rate=rate,
                              binomial_se=se, target=target, failures=failures,
                              valid=failures <= 0.05 * attempted)


def coverage_mc(model: QuasiModel, process: TrueProcess, prior: Prior,
                kind: str, alpha: float, n_reps: int, rng: RngStream, *,
                geom: Optional[LocalGeometry] = None,
                posterior_mode: str = "auto",
                chain_config: Optional[ChainConfig] = None,
                threads: int = 1) -> CoverageResult:
    """Frequency with which the chosen set kind contains theta_star.

    Repeats dataset generation, geometry evaluation, posterior computation
    (only when the set kind needs posterior moments), and set construction
    across replications with per-replication streams; replications run
    concurrently and tallies reduce in replication order.  Replications
    that fail (chain diagnostics, non-convergence) are recorded and
    excluded; more than 5% failures invalidates the scenario.
    """
    from .parallel import parallel_map

    if n_reps < 100:
        raise ValueError("coverage study needs at least 100 replications")
    if kind not in SET_KINDS:
        raise ValueError(f"set kind must be one of {SET_KINDS}")
    if geom is None:
        geom = local_geometry(model, process)
    z = chi2_quantile(geom.p, alpha)
    exact_ok = posterior_mode == "exact" or (
        posterior_mode == "auto"
        and model.family_id in ("gaussian_mean", "gaussian_linear")
        and prior.kind in ("flat", "gaussian"))

    def one_rep(rep: int) -> Optional[bool]:
        stream = rng.child(rep)
        try:
            data = model.sample_dataset(process, stream.child(0))
            state = score_state(model, data, geom)
            if kind == "oracle":
                cset = oracle_set(state, geom, z=z)
            else:
                if exact_ok:
                    post = exact_gaussian_posterior(model, data, prior)
                else:
                    cfg = chain_config or ChainConfig(n_draws=20_000)
                    post = rwm_sample(model, data, prior, geom, cfg,
                                      stream.child(1))
                summary = posterior_moments(post, geom)
                if kind == "posterior_moment":
                    cset = posterior_moment_set(summary, z=z)
                else:
                    cset = plugin_fisher_set(model, summary, z=z)
            return set_membership(cset, geom.theta_star)
        except (SamplingError, UnsupportedCapability, BvmLabError):
            return None

    results = parallel_map(one_rep, n_reps, threads)
    failures = sum(1 for r in results if r is None)
    covered = sum(1 for r in results if r is True)
    completed = n_reps - failures
    return CoverageResult.from_counts(covered, completed, 1.0 - alpha,
                                      failures, n_reps)
