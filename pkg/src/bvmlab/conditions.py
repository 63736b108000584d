"""Numerical estimation of the local regularity conditions.

The theory behind the bracketing device assumes a handful of analytic
regularity constants.  This module estimates them from the model:

* ``delta(r)``: worst relative deviation of the expected log-likelihood
  ratio from its quadratic approximation on the ball of metric radius r,
* ``omega(r)``: smallest scale at which the normalized increments of the
  stochastic score gradient satisfy a sub-Gaussian MGF bound,
* ``nu0``: sub-Gaussian slack of the normalized score at theta_star,
* ``g(r)``: largest tested MGF argument for which the score bound holds
  uniformly over the ball of radius r,
* ``b(r)``: identification strength |E L(theta, theta_star)| / r^2 on
  shells beyond the locality radius,
* the admissible bracketing constant ``rd = delta(r0) + 3 nu0 a^2 omega(r0)``.

Estimates are sampled sups/infs with Monte Carlo standard errors where
randomness enters; they are reported as estimates, never as proofs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BvmLabError
from .geometry import LocalGeometry
from .models import QuasiModel, TrueProcess
from .rng import RngStream
from .shells import ShellPlan, extremum_on_shell, sphere_directions

NU0_CAP = 4.0
RD_CAP = 0.5
DELTA_CAP = 0.5
OMEGA_CAP = 0.5
HEAVY_TAIL_TOP = 1e-3          # fraction of draws inspected by the guard
HEAVY_TAIL_SHARE = 0.5         # flagged when they carry more than this share


@dataclass(frozen=True)
class ConditionProfile:
    """Sampled condition profiles and derived constants."""

    r_grid: np.ndarray
    delta: np.ndarray
    omega: np.ndarray
    omega_se: np.ndarray
    g_of_r: np.ndarray
    b_grid: np.ndarray
    b_vals: np.ndarray
    nu0: float
    g_max: float
    rd: float
    flags: dict = field(default_factory=dict)

    @property
    def delta_r0(self) -> float:
        return float(self.delta[-1])

    @property
    def omega_r0(self) -> float:
        return float(self.omega[-1])

    @property
    def b_r0(self) -> float:
        return float(self.b_vals[0])

    @property
    def b_global(self) -> float:
        """Constant identification strength valid over the audited range.

        b(r) typically decays beyond the locality radius, so the usable
        constant is the profile minimum, not b(r0).
        """
        finite = self.b_vals[np.isfinite(self.b_vals)]
        return float(finite.min()) if finite.size else math.nan


@dataclass(frozen=True)
class IidRateSummary:
    n: int
    p: int
    delta_rate: float
    omega_rate: float
    critical_ratio: float


@dataclass(frozen=True)
class ExpMomentResult:
    """Outcome of the score-MGF (sub-Gaussian slack) check."""
    nu0: float
    passed: bool
    flagged_fraction: float
    g: float
    n_flagged: int
    n_checked: int
    note: str = ""


def _log_mean_exp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + math.log(float(np.mean(np.exp(x - m))))


def _heavy_tailed(x: np.ndarray) -> bool:
    """True when the top 0.1% of exp-draws carry > 50% of the mean."""
    ex = np.exp(x - np.max(x))
    k = max(1, int(len(ex) * HEAVY_TAIL_TOP))
    top = np.partition(ex, len(ex) - k)[len(ex) - k:]
    return float(top.sum()) > HEAVY_TAIL_SHARE * float(ex.sum())


# ---------------------------------------------------------------------------
# delta(r): quadratic deviation of the expected log-likelihood
# ---------------------------------------------------------------------------

def estimate_delta_profile(model: QuasiModel, process: TrueProcess,
                           geom: LocalGeometry,
                           r_grid: Optional[np.ndarray] = None,
                           plan: Optional[ShellPlan] = None
                           ) -> tuple[np.ndarray, np.ndarray, bool]:
    """Sampled delta(r) on a radial grid up to r0; nondecreasing by construction.

    Returns (r_grid, delta values, ok flag); ok is False when
    delta(r0) > 1/2, which voids the bracketing construction.
    """
    plan = plan or ShellPlan()
    if r_grid is None:
        r_grid = geom.r0 * np.arange(1, plan.n_radii + 1) / plan.n_radii
    r_grid = np.asarray(r_grid, dtype=float)
    el_star = model.expected_loglik(process, geom.theta_star)
    d0_sq = geom.d0_sq
    theta_star = geom.theta_star

    def deviation(theta: np.ndarray) -> float:
        d = theta - theta_star
        nsq = float(d @ d0_sq @ d)
        if nsq <= 0.0:
            return 0.0
        ratio = -2.0 * (model.expected_loglik(process, theta) - el_star) / nsq
        return abs(ratio - 1.0)

    dirs = sphere_directions(geom.p, plan.directions_for(geom.p), plan.seed)
    vals = np.empty_like(r_grid)
    for i, r in enumerate(r_grid):
        sup, _ = extremum_on_shell(deviation, geom, float(r), plan,
                                   maximize=True, directions=dirs,
                                   box=model.domain_box)
        vals[i] = sup
    vals = np.fmax.accumulate(vals)  # ball sup is monotone in r; skips NaN
    ok = bool(np.isfinite(vals[-1]) and vals[-1] <= DELTA_CAP)
    return r_grid, vals, ok


# ---------------------------------------------------------------------------
# Replicated score draws (shared by omega and the score-MGF check)
# ---------------------------------------------------------------------------

def _replicate_scores(model: QuasiModel, process: TrueProcess, thetas: list,
                      mc_budget: int, rng: RngStream) -> list:
    """Per-replicate stochastic-score draws at each requested theta.

    Returns a list of (mc_budget, p) arrays, one per theta, all computed
    from the same replicate datasets.
    """
    expected = [model.expected_score(process, th) for th in thetas]
    out = [np.empty((mc_budget, model.p)) for _ in thetas]
    for i in range(mc_budget):
        data = model.sample_dataset(process, rng.child(i))
        for j, th in enumerate(thetas):
            out[j][i] = model.score(data, th) - expected[j]
    return out


def _v0_norms(geom: LocalGeometry, gammas: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,jk,ik->i", gammas, geom.v0_sq, gammas))


# ---------------------------------------------------------------------------
# omega(r): increment MGF scale
# ---------------------------------------------------------------------------

def _min_omega_for_sample(t: np.ndarray, lambdas: np.ndarray, nu0: float) -> float:
    """Smallest omega with log E exp(lam * T / omega) <= nu0^2 lam^2 / 2.

    Uses a monotone scale curve h(s) = max(lme(sT), lme(-sT)) on a log
    grid with interpolation refinement; h is nondecreasing on s >= 0.
    """
    amax = float(np.max(np.abs(t)))
    if amax == 0.0:
        return 0.0
    sd = float(np.std(t))
    scale = sd if sd > 0 else amax
    s_grid = np.geomspace(1e-3 / scale, 64.0 / scale, 56)
    args = np.outer(s_grid, t)
    mx = args.max(axis=1, keepdims=True)
    pos = (mx + np.log(np.mean(np.exp(args - mx), axis=1))[:, None]).ravel()
    args = -args
    mx = args.max(axis=1, keepdims=True)
    neg = (mx + np.log(np.mean(np.exp(args - mx), axis=1))[:, None]).ravel()
    h = np.maximum(pos, neg)
    h = np.maximum.accumulate(h)  # enforce monotonicity against fp dips
    omega = 0.0
    for lam in lambdas:
        lam = abs(float(lam))
        if lam == 0.0:
            continue
        tau = 0.5 * nu0**2 * lam**2
        idx = np.searchsorted(h, tau, side="right") - 1
        if idx < 0:
            s_star = s_grid[0]  # bound violated even at the smallest scale
        elif idx >= len(s_grid) - 1:
            s_star = s_grid[-1]
        else:
            h0, h1 = h[idx], h[idx + 1]
            frac = 0.0 if h1 <= h0 else (tau - h0) / (h1 - h0)
            s_star = s_grid[idx] * (s_grid[idx + 1] / s_grid[idx]) ** frac
        omega = max(omega, lam / s_star)
    return omega


def estimate_omega_profile(model: QuasiModel, process: TrueProcess,
                           geom: LocalGeometry,
                           r_grid: Optional[np.ndarray] = None,
                           mc_budget: int = 2000,
                           rng: Optional[RngStream] = None, *,
                           nu0: float = 1.0,
                           g: Optional[float] = None,
                           n_lambda: int = 21,
                           n_probe: int = 4,
                           n_gamma: int = 8,
                           plan: Optional[ShellPlan] = None
                           ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Sampled omega(r) with jackknife standard errors, plus g(r).

    For each radius, stochastic-score increments between shell probes and
    theta_star are projected on quasi-random directions; omega(r) is the
    smallest scale making the sub-Gaussian MGF bound hold across the
    lambda grid, maximized over probes and directions and accumulated over
    radii.  ``g(r)`` is the largest grid lambda at which the plain (not
    increment) score bound holds over the ball.
    """
    if mc_budget < 1000:
        raise ValueError("MC budget below 1000 is rejected")
    plan = plan or ShellPlan()
    rng = rng or RngStream(0)
    if r_grid is None:
        r_grid = geom.r0 * np.arange(1, plan.n_radii + 1) / plan.n_radii
    r_grid = np.asarray(r_grid, dtype=float)
    if g is None:
        g = math.sqrt(geom.p + geom.x_n)
    lambdas = np.linspace(-g, g, n_lambda)
    pos_lambdas = lambdas[lambdas > 1e-9 * g]

    probe_dirs = sphere_directions(geom.p, n_probe, plan.seed + 7)
    gammas = sphere_directions(geom.p, n_gamma, plan.seed + 13)
    vnorms = _v0_norms(geom, gammas)

    low, high = model.domain_box[:, 0], model.domain_box[:, 1]
    thetas = [geom.theta_star]
    probe_counts = []
    for r in r_grid:
        kept = [geom.theta_at(u, float(r)) for u in probe_dirs]
        kept = [th for th in kept
                if np.all(th >= low) and np.all(th <= high)]
        probe_counts.append(len(kept))
        thetas.extend(kept)
    draws = _replicate_scores(model, process, thetas, mc_budget, rng)
    base = draws[0]

    n_groups = 4
    group_idx = np.arange(mc_budget) % n_groups

    omega_vals = np.empty_like(r_grid)
    omega_se = np.empty_like(r_grid)
    g_vals = np.empty_like(r_grid)
    offsets = np.concatenate([[0], np.cumsum(probe_counts)])
    for i, _r in enumerate(r_grid):
        block = draws[1 + offsets[i]: 1 + offsets[i + 1]]
        worst = 0.0
        worst_t = None
        g_r = g
        for probe in block:
            increments = probe - base
            scores_t = probe @ gammas.T / vnorms  # for g(r)
            inc_t = increments @ gammas.T / vnorms
            for k in range(n_gamma):
                om = _min_omega_for_sample(inc_t[:, k], pos_lambdas, nu0)
                if om > worst:
                    worst = om
                    worst_t = inc_t[:, k].copy()
                # largest lambda at which the raw-score bound holds
                t_full = scores_t[:, k]
                ok_lam = 0.0
                for lam in pos_lambdas:
                    bound = 0.5 * nu0**2 * lam**2
                    if (_log_mean_exp(lam * t_full) <= bound
                            and _log_mean_exp(-lam * t_full) <= bound):
                        ok_lam = lam
                    else:
                        break
                g_r = min(g_r, ok_lam)
        omega_vals[i] = worst
        g_vals[i] = g_r
        if worst_t is None or worst == 0.0:
            omega_se[i] = 0.0
        else:
            group_oms = [
                _min_omega_for_sample(worst_t[group_idx == b], pos_lambdas, nu0)
                for b in range(n_groups)
            ]
            omega_se[i] = float(np.std(group_oms, ddof=1) / math.sqrt(n_groups))
    omega_vals = np.maximum.accumulate(omega_vals)
    g_vals = np.minimum.accumulate(g_vals)
    return r_grid, omega_vals, omega_se, g_vals


# ---------------------------------------------------------------------------
# Score MGF check at theta_star
# ---------------------------------------------------------------------------

def exp_moment_check(model: QuasiModel, process: TrueProcess,
                     geom: LocalGeometry, mc_budget: int = 2000,
                     rng: Optional[RngStream] = None, *,
                     g: Optional[float] = None,
                     n_gamma: int = 32,
                     n_lambda: int = 21,
                     cap: float = NU0_CAP,
                     seed_offset: int = 29) -> ExpMomentResult:
    """Smallest admissible sub-Gaussian slack nu0 for the score at theta_star.

    Estimates sup over directions gamma and grid lambda of
    ``2 log E exp(lam gamma' grad_zeta(theta_star) / ||V0 gamma||) / lam^2``.
    Per-(gamma, lambda) estimates whose top 0.1% of draws carry more than
    half the mean are marked unreliable and excluded from the maximum; the
    check fails outright on non-finite draws or when more than a third of
    the grid is flagged (heavy tails), or when nu0 exceeds the cap.
    """
    if mc_budget < 1000:
        raise ValueError("MC budget below 1000 is rejected")
    rng = rng or RngStream(0)
    if g is None:
        g = math.sqrt(geom.p + geom.x_n)
    lambdas = np.linspace(-g, g, n_lambda)
    gammas = sphere_directions(geom.p, n_gamma, seed_offset)
    vnorms = _v0_norms(geom, gammas)
    draws = _replicate_scores(model, process, [geom.theta_star], mc_budget, rng)[0]
    t_all = draws @ gammas.T / vnorms
    if not np.all(np.isfinite(t_all)):
        return ExpMomentResult(nu0=math.inf, passed=False, flagged_fraction=1.0,
                               g=g, n_flagged=0, n_checked=0,
                               note="non-finite score draws (heavy tails)")
    nu_sq = 1.0  # the condition posits nu0 >= 1
    n_flagged = 0
    n_checked = 0
    for k in range(gammas.shape[0]):
        t = t_all[:, k]
        for lam in lambdas:
            if abs(lam) <= 1e-9 * g:
                continue
            n_checked += 1
            x = lam * t
            if _heavy_tailed(x):
                n_flagged += 1
                continue
            nu_sq = max(nu_sq, 2.0 * _log_mean_exp(x) / lam**2)
    frac = n_flagged / max(1, n_checked)
    nu0 = math.sqrt(nu_sq)
    note = ""
    passed = True
    if frac > 1.0 / 3.0:
        passed = False
        note = "heavy-tail guard tripped on more than a third of the MGF grid"
    if nu0 > cap:
        passed = False
        note = note or f"nu0 = {nu0:.3f} exceeds cap {cap}"
    return ExpMomentResult(nu0=nu0, passed=passed, flagged_fraction=frac,
                           g=g, n_flagged=n_flagged, n_checked=n_checked,
                           note=note)


# ---------------------------------------------------------------------------
# Identification strength b(r) beyond the locality radius
# ---------------------------------------------------------------------------

def estimate_identification_profile(model: QuasiModel, process: TrueProcess,
                                    geom: LocalGeometry,
                                    r_grid: Optional[np.ndarray] = None,
                                    plan: Optional[ShellPlan] = None
                                    ) -> tuple[np.ndarray, np.ndarray, bool]:
    """Sampled b(r) = inf |E L(theta, theta_star)| / r^2 on shells r >= r0."""
    plan = plan or ShellPlan()
    if r_grid is None:
        r_grid = geom.r0 * np.geomspace(1.0, 8.0, 8)
    r_grid = np.asarray(r_grid, dtype=float)
    el_star = model.expected_loglik(process, geom.theta_star)

    def neg_ratio(theta: np.ndarray) -> float:
        return -(model.expected_loglik(process, theta) - el_star)

    dirs = sphere_directions(geom.p, plan.directions_for(geom.p), plan.seed + 3)
    vals = np.empty_like(r_grid)
    for i, r in enumerate(r_grid):
        inf_val, _ = extremum_on_shell(neg_ratio, geom, float(r), plan,
                                       maximize=False, directions=dirs,
                                       box=model.domain_box)
        vals[i] = inf_val / r**2
    ok = bool(np.isfinite(vals[0]) and vals[0] > 0.0)
    return r_grid, vals, ok


# ---------------------------------------------------------------------------
# Admissible bracketing constant and rate bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdmissibleRd:
    rd: float
    applicable: bool  # False when rd > 1/2: the Gaussian approximation is void


def admissible_rd(delta_r0: float, omega_r0: float, nu0: float,
                  a_sq: float) -> AdmissibleRd:
    """rd = delta(r0) + 3 nu0 a^2 omega(r0); flagged when above 1/2."""
    rd = float(delta_r0 + 3.0 * nu0 * a_sq * omega_r0)
    return AdmissibleRd(rd=rd, applicable=bool(rd <= RD_CAP))


def iid_rate_summary(n: int, p: int, delta_rate: float,
                     omega_rate: float) -> IidRateSummary:
    if n < 1 or p < 1:
        raise ValueError("n and p must be >= 1")
    return IidRateSummary(n=int(n), p=int(p), delta_rate=float(delta_rate),
                          omega_rate=float(omega_rate),
                          critical_ratio=p**3 / n)


# ---------------------------------------------------------------------------
# Prior regularity
# ---------------------------------------------------------------------------

def prior_regularity_check(prior, geom: LocalGeometry,
                           plan: Optional[ShellPlan] = None,
                           threshold: float = 0.1) -> tuple[float, bool]:
    """sup over the locality set of |pi(theta)/pi(theta_star) - 1|."""
    from .shells import supremum_on_ball

    plan = plan or ShellPlan()
    ld_star = prior.log_density(geom.theta_star)
    if ld_star == -math.inf:
        raise BvmLabError("prior density vanishes at theta_star")

    def dev(theta: np.ndarray) -> float:
        return abs(math.exp(prior.log_density(theta) - ld_star) - 1.0)

    alpha_hat, _ = supremum_on_ball(dev, geom, geom.r0, plan, maximize=True,
                                    include_center=True)
    return float(alpha_hat), bool(alpha_hat <= threshold)


def gaussian_prior_check(g_sq: np.ndarray, geom: LocalGeometry,
                         threshold: float = 0.05) -> tuple[float, float, bool]:
    """Smallness diagnostics for a Gaussian prior with precision g_sq.

    Returns (||G theta_star||, ||D0^{-1} G^2 D0^{-1}||_op * p, pass); the
    second quantity must fall below the threshold for the flat-prior
    approximation analysis to carry over.
    """
    from .geometry import sym_opnorm

    g_sq = np.asarray(g_sq, dtype=float)
    quad = float(geom.theta_star @ g_sq @ geom.theta_star)
    g_theta = math.sqrt(max(0.0, quad))
    smallness = sym_opnorm(geom.d0_inv @ g_sq @ geom.d0_inv) * geom.p
    return g_theta, float(smallness), bool(smallness <= threshold)


# ---------------------------------------------------------------------------
# Full audit
# ---------------------------------------------------------------------------

def audit_conditions(model: QuasiModel, process: TrueProcess,
                     geom: LocalGeometry, mc_budget: int = 2000,
                     rng: Optional[RngStream] = None,
                     plan: Optional[ShellPlan] = None) -> ConditionProfile:
    """Run the full condition audit and assemble the profile."""
    rng = rng or RngStream(0)
    plan = plan or ShellPlan()
    r_grid, delta, delta_ok = estimate_delta_profile(model, process, geom, plan=plan)
    ed0 = exp_moment_check(model, process, geom, mc_budget, rng.child(1))
    _, omega, omega_se, g_of_r = estimate_omega_profile(
        model, process, geom, r_grid, mc_budget, rng.child(2), nu0=ed0.nu0,
        plan=plan)
    b_grid, b_vals, b_ok = estimate_identification_profile(model, process, geom,
                                                           plan=plan)
    rd_res = admissible_rd(float(delta[-1]), float(omega[-1]), ed0.nu0, geom.a_sq)
    rb = b_grid * b_vals
    flags = {
        "delta_ok": delta_ok,
        "omega_ok": bool(omega[-1] <= OMEGA_CAP),
        "ed0_pass": ed0.passed,
        "identification_ok": b_ok,
        "rb_monotone": bool(np.all(np.diff(rb) >= -1e-9 * np.abs(rb[:-1]))),
        "rd_applicable": rd_res.applicable,
    }
    return ConditionProfile(r_grid=r_grid, delta=delta, omega=omega,
                            omega_se=omega_se, g_of_r=g_of_r,
                            b_grid=b_grid, b_vals=b_vals,
                            nu0=ed0.nu0, g_max=ed0.g, rd=rd_res.rd,
                            flags=flags)
