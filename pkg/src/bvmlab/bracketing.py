"""Empirical bracketing errors, tail exponents, and error budgets.

For a bracketing pair at constant rd, two one-sided discrepancies are
measured over the locality set for each surrogate:

* ``err`` (headline, per side): how far the surrogate sits from the
  log-likelihood ratio on its own side, sup(Lam_ub - L) above and
  sup(L - Lam_lb) below.  These are the worst-case costs of replacing L
  by a quadratic and feed the spread and the budgets.
* ``deficit`` (validity, per side): sup(L - Lam_ub) and sup(Lam_lb - L);
  positive values mean the surrogate fails to bracket L at the chosen rd.

Both are recorded raw and clipped at zero.  The budgets assembled here:

    spread       = err_ub + err_lb + (||xi_ub||^2 - ||xi_lb||^2) / 2
    delta_plus   = spread + (p/2) log((1+rd)/(1-rd)) + nu(r0)
    delta_minus  = spread + (p/2) log((1+rd)/(1-rd)) + rho(r0)
    delta_oplus  = delta_plus + rd p + 2 rd sqrt(p) ||xi||

with nu(r0) = -log P(||gamma + xi|| <= r0) for standard normal gamma
(noncentral chi-square, deterministic) and rho(r0) the posterior mass
ratio outside/inside the locality set (measured or bounded).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chisq import chi2_sf, chi2_tail_moment, noncentral_chi2_cdf
from .geometry import BracketPair, LocalGeometry, ScoreState, bracket_quadratic
from .models import DatasetHandle, QuasiModel
from .shells import ShellPlan, sphere_directions, supremum_on_ball


@dataclass(frozen=True)
class BracketErrors:
    """One-sided bracketing discrepancies over the locality set."""
    err_ub: float            # sup(Lam_ub - L), clipped at 0
    err_lb: float            # sup(L - Lam_lb), clipped at 0
    err_ub_raw: float
    err_lb_raw: float
    deficit_ub: float        # sup(L - Lam_ub), clipped at 0; > 0 voids the bracket
    deficit_lb: float        # sup(Lam_lb - L), clipped at 0
    deficit_ub_raw: float
    deficit_lb_raw: float
    n_points: int

    @property
    def bracket_valid(self) -> bool:
        tol = 1e-9
        return self.deficit_ub <= tol and self.deficit_lb <= tol


@dataclass(frozen=True)
class ErrorBudget:
    err_ub: float
    err_lb: float
    spread: float
    nu_r0: float
    rho_r0: float
    log_det_correction: float
    delta_plus: float
    delta_minus: float
    delta_oplus: float
    q: float
    rd: float


@dataclass(frozen=True)
class UpperFunctionReport:
    worst_violation: float
    n_points: int

    @property
    def passed(self) -> bool:
        return self.worst_violation <= 0.0


@dataclass(frozen=True)
class TailMassRecord:
    measured: float
    bound: float
    vacuous: bool
    passed: bool
    ratio: float


@dataclass(frozen=True)
class RestrictedMgfBounds:
    upper_tail_log_bound: float      # bound on log E[e^{lam' g} 1(||g|| > r)]
    lower_restricted_bound: float    # bound below E[e^{lam' g} 1(||g|| <= r)]


# ---------------------------------------------------------------------------
# Empirical bracket errors
# ---------------------------------------------------------------------------

def estimate_bracket_errors(model: QuasiModel, data: DatasetHandle,
                            geom: LocalGeometry, pair: BracketPair,
                            plan: Optional[ShellPlan] = None) -> BracketErrors:
    """Sampled one-sided sup discrepancies between L and the surrogates."""
    plan = plan or ShellPlan()
    if plan.directions_for(geom.p) < 1 or plan.n_radii < 1:
        raise ValueError("sampling plan must contain at least one point")
    theta_star = geom.theta_star

    def gap_ub(theta):   # surrogate slack above L
        return (bracket_quadratic(pair, "upper", theta, theta_star)
                - model.log_lik_ratio(data, theta, theta_star))

    def gap_lb(theta):   # L slack above the lower surrogate
        return (model.log_lik_ratio(data, theta, theta_star)
                - bracket_quadratic(pair, "lower", theta, theta_star))

    box = model.domain_box
    sup_gap_ub, _ = supremum_on_ball(gap_ub, geom, geom.r0, plan,
                                     maximize=True, include_center=True, box=box)
    sup_gap_lb, _ = supremum_on_ball(gap_lb, geom, geom.r0, plan,
                                     maximize=True, include_center=True, box=box)
    inf_gap_ub, _ = supremum_on_ball(gap_ub, geom, geom.r0, plan,
                                     maximize=False, include_center=True, box=box)
    inf_gap_lb, _ = supremum_on_ball(gap_lb, geom, geom.r0, plan,
                                     maximize=False, include_center=True, box=box)
    deficit_ub_raw = -inf_gap_ub   # sup(L - Lam_ub)
    deficit_lb_raw = -inf_gap_lb   # sup(Lam_lb - L)
    n_dirs = plan.directions_for(geom.p)
    return BracketErrors(
        err_ub=max(0.0, sup_gap_ub),
        err_lb=max(0.0, sup_gap_lb),
        err_ub_raw=float(sup_gap_ub),
        err_lb_raw=float(sup_gap_lb),
        deficit_ub=max(0.0, deficit_ub_raw),
        deficit_lb=max(0.0, deficit_lb_raw),
        deficit_ub_raw=float(deficit_ub_raw),
        deficit_lb_raw=float(deficit_lb_raw),
        n_points=n_dirs * plan.n_radii,
    )


# ---------------------------------------------------------------------------
# Budget ingredients
# ---------------------------------------------------------------------------

def bracket_spread(err_ub: float, err_lb: float, pair: BracketPair) -> float:
    """spread = err_ub + err_lb + (||xi_ub||^2 - ||xi_lb||^2) / 2."""
    for v in (err_ub, err_lb):
        if not math.isfinite(v):
            raise ValueError("bracket errors must be finite")
    xi_gap = 0.5 * (float(pair.xi_ub @ pair.xi_ub) - float(pair.xi_lb @ pair.xi_lb))
    return float(err_ub + err_lb + xi_gap)


def locality_exponent(state: ScoreState, geom: LocalGeometry) -> float:
    """nu(r0) = -log P(||gamma + xi|| <= r0), gamma standard normal.

    The norm is a noncentral chi-square with noncentrality ||xi||^2;
    evaluated by the deterministic mixture series (abs. tol 1e-12).
    """
    if geom.r0 <= 0.0:
        raise ValueError("locality radius must be positive")
    cdf = noncentral_chi2_cdf(geom.r0**2, geom.p, state.xi_norm_sq)
    if cdf <= 0.0:
        return math.inf
    return -math.log(cdf)


def posterior_tail_bound(err_lb: float, nu_r0: float, geom: LocalGeometry,
                         b_r0: float, rd: float) -> tuple[float, bool]:
    """Theoretical bound on the posterior mass ratio outside the locality set.

    ``exp(err_lb + nu(r0)) ((1+rd)/b)^{p/2} P(chi2_p >= b r0^2)``; vacuous
    (flagged) when b r0^2 <= p, where the chi-square tail is not small.
    """
    if b_r0 <= 0.0:
        raise ValueError("identification strength b must be positive")
    t = b_r0 * geom.r0**2
    bound = (math.exp(err_lb + nu_r0)
             * ((1.0 + rd) / b_r0) ** (geom.p / 2.0)
             * chi2_sf(t, geom.p))
    return float(bound), bool(t <= geom.p)


def restricted_moment_bound(err_lb: float, nu_r0: float, geom: LocalGeometry,
                            b_r0: float, rd: float, m: int) -> float:
    """Bound on E[ ||D_lb (v - theta_lb)||^m 1{outside} | Y ] for m in {0,1,2}."""
    if b_r0 <= 0.0:
        raise ValueError("identification strength b must be positive")
    t = b_r0 * geom.r0**2
    return float(math.exp(err_lb + nu_r0)
                 * ((1.0 + rd) / b_r0) ** (geom.p / 2.0)
                 * chi2_tail_moment(geom.p, t, m))


def tail_mass_check(measured_tail_mass: float, bound: float,
                    vacuous: bool) -> TailMassRecord:
    """Compare a measured posterior tail mass against the theoretical bound."""
    ratio = measured_tail_mass / bound if bound > 0 else math.inf
    return TailMassRecord(measured=float(measured_tail_mass), bound=float(bound),
                          vacuous=vacuous,
                          passed=bool(measured_tail_mass <= bound),
                          ratio=float(ratio))


def error_budget(err_ub: float, err_lb: float, pair: BracketPair,
                 nu_r0: float, rho_r0: float, geom: LocalGeometry) -> ErrorBudget:
    """Assemble the full budget from measured ingredients."""
    p = geom.p
    rd = pair.rd
    spread = bracket_spread(err_ub, err_lb, pair)
    if rd > 0.0:
        log_det = 0.5 * p * math.log((1.0 + rd) / (1.0 - rd))
    else:
        log_det = 0.0
    xi_norm = math.sqrt(max(0.0, (1.0 - rd) * float(pair.xi_ub @ pair.xi_ub)))
    delta_plus = spread + log_det + nu_r0
    delta_minus = spread + log_det + rho_r0
    delta_oplus = delta_plus + rd * p + 2.0 * rd * math.sqrt(p) * xi_norm
    q = p + xi_norm**2
    return ErrorBudget(err_ub=float(err_ub), err_lb=float(err_lb),
                       spread=spread, nu_r0=float(nu_r0), rho_r0=float(rho_r0),
                       log_det_correction=log_det, delta_plus=delta_plus,
                       delta_minus=delta_minus, delta_oplus=delta_oplus,
                       q=q, rd=rd)


# ---------------------------------------------------------------------------
# Upper-function audit outside the locality set
# ---------------------------------------------------------------------------

def upper_function_audit(model: QuasiModel, data: DatasetHandle,
                         geom: LocalGeometry, b: float,
                         plan: Optional[ShellPlan] = None,
                         r_max: Optional[float] = None) -> UpperFunctionReport:
    """Worst violation of L(theta, theta_star) <= -b ||D0 (theta-theta_star)||^2 / 2
    over sampled shells outside the locality set (up to the domain box).
    """
    if b <= 0.0:
        raise ValueError("b must be positive")
    plan = plan or ShellPlan()
    dirs = sphere_directions(geom.p, plan.directions_for(geom.p), plan.seed + 17)
    if r_max is None:
        r_max = 8.0 * geom.r0
    radii = np.geomspace(geom.r0 * 1.0001, r_max, plan.n_radii)
    worst = -math.inf
    n_points = 0
    low, high = model.domain_box[:, 0], model.domain_box[:, 1]
    for r in radii:
        for u in dirs:
            theta = geom.theta_at(u, float(r))
            if np.any(theta < low) or np.any(theta > high):
                continue
            n_points += 1
            val = (model.log_lik_ratio(data, theta, geom.theta_star)
                   + 0.5 * b * r**2)
            if val > worst:
                worst = float(val)
    if n_points == 0:
        raise ValueError("no sample points inside the domain box beyond r0")
    return UpperFunctionReport(worst_violation=worst, n_points=n_points)


# ---------------------------------------------------------------------------
# Restricted Gaussian MGF bounds (closed forms, used as oracles)
# ---------------------------------------------------------------------------

def restricted_gauss_mgf_bounds(lambda_vec: np.ndarray, r: float, mu: float,
                                x: float) -> RestrictedMgfBounds:
    """Closed-form bounds for the Gaussian MGF restricted by ||gamma|| vs r.

    Upper:  log E[e^{lam' g} 1(||g|| > r)]
            <= -(1-mu) r^2 / 2 + ||lam||^2 / (2 mu) + (p/2) log(1/mu),
    Lower:  E[e^{lam' g} 1(||g|| <= r)] >= e^{||lam||^2 / 2} (1 - e^{-x}),
            valid when r^2 >= 4 (p + x).

    Both require ||lam||^2 <= p and 0 < mu < 1.
    """
    lam = np.asarray(lambda_vec, dtype=float).ravel()
    p = lam.shape[0]
    lam_sq = float(lam @ lam)
    if not 0.0 < mu < 1.0:
        raise ValueError("mu must lie strictly in (0, 1)")
    if lam_sq > p * (1.0 + 1e-12):
        raise ValueError("||lambda||^2 must not exceed p")
    if x <= 0.0:
        raise ValueError("x must be positive")
    if r**2 < 4.0 * (p + x) * (1.0 - 1e-12):
        raise ValueError("lower bound requires r^2 >= 4 (p + x)")
    upper = -0.5 * (1.0 - mu) * r**2 + lam_sq / (2.0 * mu) + 0.5 * p * math.log(1.0 / mu)
    lower = math.exp(0.5 * lam_sq) * (1.0 - math.exp(-x))
    return RestrictedMgfBounds(upper_tail_log_bound=float(upper),
                               lower_restricted_bound=float(lower))
