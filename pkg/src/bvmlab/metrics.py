"""Discrepancy metrics between the posterior and its Gaussian approximation.

The reference law for eta = D0 (v - theta_circ) is standard normal.  The
report collects:

* ``mean_disc``  = ||D0 (posterior mean - theta_circ)||^2,
* ``cov_disc_op`` = operator norm of I - D0 S^2 D0,
* ``cov_disc_tr`` = squared Frobenius norm of D0 S^2 D0 - I (the trace of
  the squared deviation matrix in standardized coordinates),
* ``mgf_disc``   = max over a lambda set of |log-MGF - ||lambda||^2 / 2|,
* ``prob_disc``  = max over probe sets of |posterior - standard normal|
  probability,

plus two-sided sandwich checks with the measured error budget, shell
concentration checks, and the Gaussian KL / Pinsker total-variation
comparison used to justify plug-in credible sets.  Bounds that carry
unspecified absolute constants are reported as ratios against rd * q with
a configurable slack multiplier rather than hard pass/fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bracketing import ErrorBudget
from .chisq import noncentral_chi2_cdf
from .errors import BvmLabError
from .geometry import BracketPair, LocalGeometry, ScoreState, sym_opnorm
from .posterior import (ExactGaussianPosterior, PosteriorLike, PosteriorSummary,
                        SetSpec, _eta_gaussian, posterior_log_mgf,
                        set_probability, standard_gaussian_probability)


@dataclass(frozen=True)
class BvmReport:
    mean_disc: float
    cov_disc_op: float
    cov_disc_tr: float
    mgf_disc: float
    prob_disc: float
    rd: float
    q: float
    budget: Optional[ErrorBudget] = None
    flags: dict = field(default_factory=dict)


@dataclass(frozen=True)
class GaussCompare:
    """KL and Pinsker TV between N(0, I) and N(delta, B^{-1})."""
    b_matrix: np.ndarray
    delta: np.ndarray
    kl: float
    tv_bound: float
    lemma_bound: Optional[float] = None   # (rd^2 p + (1+rd) ||delta||^2) / 2


@dataclass(frozen=True)
class SandwichRecord:
    set_kind: str
    measured: float
    measured_se: float
    gaussian: float
    lower_bound: float
    upper_bound: float
    passed: bool
    ratio: float            # |measured - gaussian| / (rd * sqrt(q)), inf at rd = 0


@dataclass(frozen=True)
class ConcentrationRecord:
    x: float
    upper_measured: float
    upper_bound: float
    lower_measured: float
    lower_bound: float
    passed: bool


# ---------------------------------------------------------------------------
# Core discrepancies
# ---------------------------------------------------------------------------

def mean_discrepancy(summary: PosteriorSummary, state: ScoreState,
                     geom: LocalGeometry, *, restricted: bool = True) -> float:
    mean = summary.restricted_mean if restricted else summary.mean
    d = geom.d0 @ (mean - state.theta_circ)
    return float(d @ d)


def _project_psd(mat: np.ndarray) -> tuple[np.ndarray, bool]:
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() >= 0.0:
        return sym, False
    clipped = (vecs * np.maximum(vals, 0.0)) @ vecs.T
    return (clipped + clipped.T) / 2.0, True


def cov_discrepancy(summary: PosteriorSummary, geom: LocalGeometry, *,
                    restricted: bool = True) -> tuple[float, float, bool]:
    """(operator-norm, squared-Frobenius) deviation of D0 S^2 D0 from I.

    Covariance estimates that fail positive semidefiniteness from Monte
    Carlo noise are projected onto the PSD cone; the projection is flagged.
    """
    cov = summary.restricted_cov if restricted else summary.cov
    cov, projected = _project_psd(cov)
    s = geom.d0 @ cov @ geom.d0
    dev = s - np.eye(geom.p)
    op = sym_opnorm(dev)
    tr = float(np.sum(dev * dev))
    return float(op), tr, projected


def mgf_discrepancy(mgf_estimates: Sequence[tuple[float, float]],
                    lambdas: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Max over the lambda set of |log-MGF - ||lambda||^2 / 2|.

    Returns (max deviation, arg-max lambda, per-lambda deviations).
    """
    lambdas = np.atleast_2d(np.asarray(lambdas, dtype=float))
    devs = np.array([
        abs(est - 0.5 * float(lam @ lam))
        for (est, _se), lam in zip(mgf_estimates, lambdas)
    ])
    if len(devs) == 0:
        return 0.0, np.zeros(0), devs
    idx = int(np.argmax(devs))
    return float(devs[idx]), lambdas[idx], devs


def random_lambda_set(p: int, count: int, rng, radius_sq: Optional[float] = None
                      ) -> np.ndarray:
    """Quasi-uniform lambdas in the ball ||lambda||^2 <= p (the MGF range)."""
    gen = rng.generator() if hasattr(rng, "generator") else rng
    radius = math.sqrt(p if radius_sq is None else radius_sq)
    z = gen.standard_normal((count, p))
    norms = np.linalg.norm(z, axis=1)
    norms[norms == 0.0] = 1.0
    u = gen.random(count) ** (1.0 / p)
    return z / norms[:, None] * (radius * u)[:, None]


# ---------------------------------------------------------------------------
# Sandwich probability checks
# ---------------------------------------------------------------------------

def default_probe_sets(p: int, levels: Sequence[float] = (0.25, 0.5, 0.75, 0.9)
                       ) -> list[SetSpec]:
    """Centered balls at given standard-normal mass plus a half-space."""
    from .chisq import chi2_quantile

    sets = [SetSpec(kind="ball", radius_sq=chi2_quantile(p, 1.0 - lvl))
            for lvl in levels]
    normal = np.zeros(p)
    normal[0] = 1.0
    sets.append(SetSpec(kind="halfspace", normal=normal, offset=0.0))
    return sets


def prob_sandwich_check(post: PosteriorLike, geom: LocalGeometry,
                        state: ScoreState, probe_sets: Sequence[SetSpec],
                        budget: ErrorBudget, *, slack: float = 3.0,
                        x_n: Optional[float] = None) -> list[SandwichRecord]:
    """Two-sided comparison of posterior set probabilities with the
    standard normal reference:

        e^{-D} (P(gamma in A) - slack rd sqrt(q)) - e^{-x_n}
            <= P(eta in A | Y)
            <= e^{D} (P(gamma in A) + slack rd sqrt(q)) + e^{-x_n}

    with D the assembled budget (delta_oplus).  The slack multiplier
    stands in for the unspecified absolute constants, so raw ratios are
    reported alongside the pass flags.
    """
    xn = geom.x_n if x_n is None else float(x_n)
    d = budget.delta_oplus
    rdq = budget.rd * math.sqrt(budget.q)
    tail = math.exp(-xn)
    records = []
    for spec in probe_sets:
        measured, se = set_probability(post, geom, state, spec,
                                       restricted=not isinstance(post, ExactGaussianPosterior))
        gauss = standard_gaussian_probability(spec, geom.p)
        lower = math.exp(-d) * (gauss - slack * rdq) - tail
        upper = math.exp(d) * (gauss + slack * rdq) + tail
        margin = 4.0 * se
        passed = (measured >= lower - margin) and (measured <= upper + margin)
        ratio = abs(measured - gauss) / rdq if rdq > 0 else math.inf
        records.append(SandwichRecord(set_kind=spec.kind, measured=measured,
                                      measured_se=se, gaussian=gauss,
                                      lower_bound=lower, upper_bound=upper,
                                      passed=bool(passed), ratio=float(ratio)))
    return records


# ---------------------------------------------------------------------------
# Gaussian KL / TV comparison
# ---------------------------------------------------------------------------

def gaussian_kl_tv(b_matrix: np.ndarray, delta: np.ndarray,
                   declared_rd: Optional[float] = None) -> GaussCompare:
    """KL(N(0,I) || N(delta, B^{-1})) by the eigenvalue form, plus Pinsker.

    With a_j the eigenvalues of B - I:

        2 KL = sum_j (a_j - log(1 + a_j)) + delta' B delta,
        TV  <= sqrt(KL / 2).

    When ``declared_rd`` (a bound on ||B - I||_op, at most 1/2) is given,
    the closed-form comparison bound (rd^2 p + (1+rd) ||delta||^2) / 2 on
    2 KL is attached.
    """
    b = np.asarray(b_matrix, dtype=float)
    b = (b + b.T) / 2.0
    delta = np.asarray(delta, dtype=float).ravel()
    p = b.shape[0]
    a = np.linalg.eigvalsh(b) - 1.0
    if a.min() <= -1.0:
        raise BvmLabError("B must be positive definite (eigenvalue <= 0 found)")
    two_kl = float(np.sum(a - np.log1p(a))) + float(delta @ b @ delta)
    kl = 0.5 * two_kl
    lemma = None
    if declared_rd is not None:
        if not 0.0 <= declared_rd <= 0.5:
            raise ValueError("declared rd must lie in [0, 1/2]")
        if float(np.max(np.abs(a))) > declared_rd + 1e-12:
            raise ValueError("||B - I||_op exceeds the declared rd")
        lemma = 0.5 * (declared_rd**2 * p
                       + (1.0 + declared_rd) * float(delta @ delta))
    return GaussCompare(b_matrix=b, delta=delta, kl=kl,
                        tv_bound=math.sqrt(kl / 2.0), lemma_bound=lemma)


# ---------------------------------------------------------------------------
# Shell concentration check
# ---------------------------------------------------------------------------

def shell_concentration_check(post: PosteriorLike, geom: LocalGeometry,
                              state: ScoreState, pair: BracketPair,
                              budget: ErrorBudget,
                              x_values: Sequence[float]) -> list[ConcentrationRecord]:
    """Concentration of ||D_ub (v - theta_ub)||^2 on the shell around p.

    For each x <= p/2 the measured probabilities of deviations beyond
    +-sqrt(2 p x) are compared against exp(-x/4 + D+) (upper) and
    exp(-x/2 + D+) (lower deviation).  In exact mode the unrestricted
    probabilities are used; they dominate the locality-restricted ones, so
    the comparison is conservative.
    """
    p = geom.p
    records = []
    scale = 1.0 - pair.rd
    for x in x_values:
        x = float(x)
        if x > p / 2.0:
            raise ValueError("x must not exceed p/2")
        hi = p + math.sqrt(2.0 * p * x)
        lo = p - math.sqrt(2.0 * p * x)
        if isinstance(post, ExactGaussianPosterior):
            m, s = _eta_gaussian(post, geom, pair.theta_ub)
            m = m * math.sqrt(scale)          # D_ub = sqrt(1-rd) D0
            s = s * scale
            from .posterior import _spherical_scale

            c = _spherical_scale(s)
            if c is not None:
                nc = float(m @ m) / c
                upper = 1.0 - noncentral_chi2_cdf(hi / c, p, nc)
                lower = noncentral_chi2_cdf(lo / c, p, nc) if lo > 0 else 0.0
            else:
                # Non-spherical standardized covariance: deterministic
                # sampling of the exact law (restriction included).
                from .geometry import spd_root
                from .rng import RngStream

                gen = RngStream(665101, (p, 2)).generator()
                root, _ = spd_root(post.cov)
                theta = gen.standard_normal((200_000, p)) @ root.T + post.mean
                d = (theta - pair.theta_ub) @ geom.d0 * math.sqrt(scale)
                nsq = np.einsum("ij,ij->i", d, d)
                dloc = theta - geom.theta_star
                inside = (np.einsum("ij,jk,ik->i", dloc, geom.d0_sq, dloc)
                          <= geom.r0**2)
                upper = float(np.mean((nsq > hi) & inside))
                lower = float(np.mean((nsq < lo) & inside)) if lo > 0 else 0.0
        else:
            d = (post.draws - pair.theta_ub) @ geom.d0 * math.sqrt(scale)
            nsq = np.einsum("ij,ij->i", d, d)
            dloc = post.draws - geom.theta_star
            inside = np.einsum("ij,jk,ik->i", dloc, geom.d0_sq, dloc) <= geom.r0**2
            upper = float(np.mean((nsq > hi) & inside))
            lower = float(np.mean((nsq < lo) & inside)) if lo > 0 else 0.0
        ub = math.exp(-x / 4.0 + budget.delta_plus)
        lb = math.exp(-x / 2.0 + budget.delta_plus)
        records.append(ConcentrationRecord(
            x=x, upper_measured=float(upper), upper_bound=float(ub),
            lower_measured=float(lower), lower_bound=float(lb),
            passed=bool(upper <= ub and lower <= lb)))
    return records


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

def bvm_report(summary: PosteriorSummary, post: PosteriorLike,
               geom: LocalGeometry, state: ScoreState,
               lambdas: np.ndarray, probe_sets: Sequence[SetSpec],
               budget: ErrorBudget, *, slack: float = 3.0) -> BvmReport:
    """Assemble the headline discrepancy metrics into one report."""
    mean_d = mean_discrepancy(summary, state, geom)
    cov_op, cov_tr, projected = cov_discrepancy(summary, geom)
    mgf_est = posterior_log_mgf(post, geom, state, lambdas)
    mgf_d, _, _ = mgf_discrepancy(mgf_est, lambdas)
    records = prob_sandwich_check(post, geom, state, probe_sets, budget,
                                  slack=slack)
    prob_d = max((abs(r.measured - r.gaussian) for r in records), default=0.0)
    flags = {
        "rd_admissible": budget.rd <= 0.5,
        "psd_projection": projected,
        "sandwich_all_pass": all(r.passed for r in records),
    }
    flags.update(summary.flags)
    return BvmReport(mean_disc=mean_d, cov_disc_op=cov_op, cov_disc_tr=cov_tr,
                     mgf_disc=mgf_d, prob_disc=float(prob_d),
                     rd=budget.rd, q=budget.q, budget=budget, flags=flags)
