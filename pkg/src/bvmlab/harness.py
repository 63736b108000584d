"""Experiment orchestration: single runs, sweeps, and report emission.

A run wires the full pipeline: scenario construction, local geometry,
condition audit, bracketing errors and budgets, posterior (exact or
MCMC), discrepancy metrics, credible sets, and optional coverage Monte
Carlo.  Everything is reduced deterministically, so a (config, seed) pair
produces byte-identical outputs regardless of the thread count.

Outputs per run directory:

* ``report.json``   machine-readable report with the resolved config,
* ``tables/*.csv``  flat tables (condition profiles, probes, coverage...),
* ``summary.txt``   one line per inequality check: measured value,
                    reference budget, and pass / ratio.

Exit codes: 0 success, 2 success with applicability flags raised
(bracketing constant above 1/2, failed moment conditions, low effective
sample size), 1 hard errors.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import rng as rng_tags
from .bracketing import (error_budget, estimate_bracket_errors,
                         locality_exponent, posterior_tail_bound,
                         tail_mass_check, upper_function_audit)
from .chisq import chi2_quantile
from .conditions import audit_conditions
from .config import ExperimentConfig, build_scenario
from .credible import (coverage_mc, oracle_set, plugin_fisher_set,
                       posterior_mass, posterior_moment_set, sandwich_coverage,
                       sandwich_matrix)
from .errors import BvmLabError
from .geometry import (bracket_pair, local_geometry, mle_expansion_gap,
                       score_state, solve_mle)
from .metrics import (cov_discrepancy, default_probe_sets, mean_discrepancy,
                      mgf_discrepancy, prob_sandwich_check, random_lambda_set,
                      shell_concentration_check)
from .parallel import parallel_map
from .posterior import (ChainConfig, dump_draws, exact_gaussian_posterior,
                        flat_prior_propriety_probe, posterior_log_mgf,
                        posterior_moments, rwm_sample)
from .rng import RngStream
from .shells import ShellPlan

BRACKET_TOL = 1e-9

# Condition-audit flags (True = healthy) mapped to problem labels.
_CONDITION_PROBLEMS = {
    "delta_ok": "delta_cap_exceeded",
    "omega_ok": "omega_cap_exceeded",
    "ed0_pass": "score_mgf_check_failed",
    "identification_ok": "identification_failed",
    "rd_applicable": "rd_above_half",
}


@dataclass(frozen=True)
class RunResult:
    report: dict
    exit_code: int
    out_dir: Optional[str]


# ---------------------------------------------------------------------------
# Serialization helpers
# ---------------------------------------------------------------------------

def json_safe(obj):
    """Recursively convert to JSON-clean values (no NaN/inf, no numpy)."""
    if obj is None or isinstance(obj, (bool, str, int)):
        return obj
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating,)):
        return json_safe(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [json_safe(v) for v in obj.tolist()]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: json_safe(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    raise TypeError(f"cannot serialize {type(obj)!r}")


def _fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt_cell(v) for v in row])


def _write_report(out_dir, report: dict, tables: dict, summary_lines: list[str]):
    os.makedirs(out_dir, exist_ok=True)
    tables_dir = os.path.join(out_dir, "tables")
    os.makedirs(tables_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(json_safe(report), fh, indent=2, sort_keys=True,
                  allow_nan=False)
        fh.write("\n")
    for name, (header, rows) in tables.items():
        write_csv(os.path.join(tables_dir, f"{name}.csv"), header, rows)
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(summary_lines))
        fh.write("\n")


def _check(name: str, measured: float, reference: float,
           passed: Optional[bool]) -> dict:
    ratio = measured / reference if reference not in (0.0, None) else math.inf
    if measured == 0.0 and reference == 0.0:
        ratio = 0.0
    return {"name": name, "measured": measured, "reference": reference,
            "passed": passed, "ratio": ratio}


def _check_line(c: dict) -> str:
    status = "    " if c["passed"] is None else ("PASS" if c["passed"] else "FAIL")
    ratio = c["ratio"]
    ratio_s = f"{ratio:.4g}" if (ratio is not None and math.isfinite(ratio)) else "-"
    return (f"[{status}] {c['name']}: measured={c['measured']:.6g} "
            f"reference={c['reference']:.6g} ratio={ratio_s}")


# ---------------------------------------------------------------------------
# Single experiment
# ---------------------------------------------------------------------------

def _metric_noise(summary, state, geom) -> float:
    """One-sigma Monte Carlo scale for the posterior-mean shift metric."""
    if summary.exact:
        return 0.0
    s = geom.d0 @ summary.restricted_cov @ geom.d0
    ess = max(summary.ess, 1.0)
    se_sq = np.clip(np.diag(s), 0.0, None) / ess
    eta = geom.d0 @ (summary.restricted_mean - state.theta_circ)
    var = 4.0 * float(np.sum(eta**2 * se_sq)) + 2.0 * float(np.sum(se_sq**2))
    return math.sqrt(var) + float(np.sum(se_sq))


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None,
                   threads: int = 1) -> RunResult:
    """Execute the full pipeline for one scenario and emit the report."""
    model, process, prior = build_scenario(cfg)
    root = RngStream(cfg.seed)
    problems: list[str] = []
    checks: list[dict] = []
    tables: dict = {}

    geom = local_geometry(
        model, process,
        r0_normalization=cfg.geometry.r0_normalization,
        x_n=cfg.geometry.x_n if cfg.geometry.x_n > 0 else None,
        r0_override=cfg.geometry.r0_override if cfg.geometry.r0_override > 0 else None,
    )
    if geom.boundary_fit:
        problems.append("theta_star_on_boundary")

    # Condition audit -------------------------------------------------------
    profile = None
    b_r0 = cfg.geometry.b_fixed
    if cfg.conditions.enabled:
        plan = ShellPlan(
            n_directions=cfg.conditions.n_directions or None,
            n_radii=cfg.conditions.n_radii,
            polish_steps=cfg.conditions.polish_steps,
            seed=cfg.seed % 2**31,
        )
        profile = audit_conditions(model, process, geom,
                                   mc_budget=cfg.conditions.mc_budget,
                                   rng=root.child(rng_tags.CONDITIONS),
                                   plan=plan)
        if math.isfinite(profile.b_global) and profile.b_global > 0:
            b_r0 = profile.b_global
        for key, label in _CONDITION_PROBLEMS.items():
            if not profile.flags.get(key, True):
                problems.append(label)
        rows = [(r, d, o, se, gg, None) for r, d, o, se, gg in zip(
            profile.r_grid, profile.delta, profile.omega, profile.omega_se,
            profile.g_of_r)]
        rows += [(r, None, None, None, None, b)
                 for r, b in zip(profile.b_grid, profile.b_vals)]
        tables["conditions"] = (
            ["r", "delta", "omega", "omega_se", "g", "b"], rows)

    if cfg.geometry.rd_source == "conditions":
        rd_estimate = profile.rd
    else:
        rd_estimate = cfg.geometry.rd
    rd_used = min(rd_estimate, 0.95)   # keep the surrogate matrices PD
    if rd_estimate > 0.5:
        problems.append("rd_above_half")

    # Data, score state, brackets ------------------------------------------
    data = model.sample_dataset(process, root.child(rng_tags.DATA))
    state = score_state(model, data, geom)
    pair = bracket_pair(geom, state, rd_used)
    bracket_plan = ShellPlan(
        n_directions=cfg.bracketing.n_directions or None,
        n_radii=cfg.bracketing.n_radii,
        polish_steps=cfg.bracketing.polish_steps,
        seed=(cfg.seed + 1) % 2**31,
    )
    errors = estimate_bracket_errors(model, data, geom, pair, bracket_plan)
    if not errors.bracket_valid:
        problems.append("bracket_invalid")
    checks.append(_check("upper surrogate dominates L on the locality set",
                         errors.deficit_ub, BRACKET_TOL,
                         errors.deficit_ub <= BRACKET_TOL))
    checks.append(_check("lower surrogate undershoots L on the locality set",
                         errors.deficit_lb, BRACKET_TOL,
                         errors.deficit_lb <= BRACKET_TOL))

    nu = locality_exponent(state, geom)
    rho_bound, rho_vacuous = posterior_tail_bound(errors.err_lb, nu, geom,
                                                  b_r0, rd_used)

    # Posterior --------------------------------------------------------------
    chain_meta = None
    if cfg.posterior.mode == "exact":
        post = exact_gaussian_posterior(model, data, prior)
    else:
        if prior.kind == "flat" and not flat_prior_propriety_probe(model, data, geom):
            problems.append("flat_posterior_propriety")
        chain_cfg = ChainConfig(
            n_draws=cfg.posterior.n_draws,
            burn_in=cfg.posterior.burn_in or None,
            step_scale=cfg.posterior.step_scale,
        )
        post = rwm_sample(model, data, prior, geom, chain_cfg,
                          root.child(rng_tags.CHAIN))
        chain_meta = post.chain_meta
    summary = posterior_moments(post, geom)
    for key in ("low_precision", "empty_locality"):
        if summary.flags.get(key):
            problems.append(key)

    rho_measured = summary.tail_mass
    rho_for_budget = rho_measured if math.isfinite(rho_measured) else rho_bound
    budget = error_budget(errors.err_ub, errors.err_lb, pair, nu,
                          rho_for_budget, geom)
    tail_rec = tail_mass_check(rho_measured, rho_bound, rho_vacuous)
    if not rho_vacuous:
        checks.append(_check("posterior tail mass vs theoretical bound",
                             tail_rec.measured, tail_rec.bound, tail_rec.passed))

    # Metrics ----------------------------------------------------------------
    slack_eff = 1.0 if summary.exact else cfg.metrics.slack
    lambdas = random_lambda_set(geom.p, cfg.metrics.n_lambda,
                                root.child(rng_tags.METRICS, 0))
    mgf_est = posterior_log_mgf(post, geom, state, lambdas)
    mgf_disc, mgf_arg, mgf_devs = mgf_discrepancy(mgf_est, lambdas)
    mean_disc = mean_discrepancy(summary, state, geom)
    cov_op, cov_tr, projected = cov_discrepancy(summary, geom)
    if projected:
        problems.append("cov_psd_projected")
    noise = _metric_noise(summary, state, geom)
    probe_sets = default_probe_sets(geom.p, cfg.metrics.probe_levels)
    sandwich_records = prob_sandwich_check(post, geom, state, probe_sets,
                                           budget, slack=cfg.metrics.slack)
    prob_disc = max((abs(r.measured - r.gaussian) for r in sandwich_records),
                    default=0.0)
    x_values = [x for x in cfg.metrics.concentration_x if 0 < x <= geom.p / 2]
    conc_records = shell_concentration_check(post, geom, state, pair, budget,
                                             x_values)

    checks.append(_check("posterior-mean shift vs assembled budget",
                         mean_disc, slack_eff * budget.delta_plus + 4.0 * noise,
                         mean_disc <= slack_eff * budget.delta_plus + 4.0 * noise))
    mgf_se = max((se for (_v, se) in mgf_est), default=0.0)
    checks.append(_check("log-MGF deviation vs assembled budget",
                         mgf_disc,
                         slack_eff * budget.delta_oplus + 4.0 * mgf_se,
                         mgf_disc <= slack_eff * budget.delta_oplus + 4.0 * mgf_se))
    checks.append(_check("posterior-mean shift ratio to rd*q",
                         mean_disc, budget.rd * budget.q, None))
    checks.append(_check("covariance deviation ratio to rd*q",
                         cov_op, budget.rd * budget.q, None))
    for rec in sandwich_records:
        checks.append(_check(
            f"set probability sandwich ({rec.set_kind}, ref {rec.gaussian:.3f})",
            rec.measured, rec.upper_bound, rec.passed))
    for rec in conc_records:
        checks.append(_check(f"shell concentration upper tail (x={rec.x:g})",
                             rec.upper_measured, rec.upper_bound,
                             rec.upper_measured <= rec.upper_bound))
        checks.append(_check(f"shell concentration lower tail (x={rec.x:g})",
                             rec.lower_measured, rec.lower_bound,
                             rec.lower_measured <= rec.lower_bound))

    # MLE expansion ----------------------------------------------------------
    mle = solve_mle(model, data, init=geom.theta_star)
    expansion = None
    if mle.converged:
        expansion = mle_expansion_gap(geom, state, pair, mle)
        ref = 2.0 * budget.spread + 1e-9
        checks.append(_check("qMLE expansion gap vs twice the spread",
                             expansion, ref, expansion <= slack_eff * ref))

    # Upper function audit ----------------------------------------------------
    upper_report = None
    if cfg.bracketing.upper_function_audit:
        upper_report = upper_function_audit(model, data, geom, b_r0,
                                            bracket_plan)
        checks.append(_check("upper function dominates L beyond the locality set",
                             upper_report.worst_violation, 0.0,
                             upper_report.passed))

    # Prior checks -----------------------------------------------------------
    prior_check = None
    if prior.kind == "gaussian":
        from .conditions import gaussian_prior_check

        g_norm, smallness, ok = gaussian_prior_check(prior.g_sq, geom)
        prior_check = {"g_theta_norm": g_norm, "smallness": smallness,
                       "passed": ok}
        checks.append(_check("Gaussian prior smallness", smallness, 0.05, ok))
        if not ok:
            problems.append("prior_not_small")

    # Credible sets ------------------------------------------------------------
    spec = sandwich_matrix(geom)
    credible_rows = []
    credible_entries = []
    for kind in cfg.credible.kinds:
        alpha = cfg.credible.alpha
        if kind == "oracle":
            cset = oracle_set(state, geom, alpha=alpha)
        elif kind == "posterior_moment":
            cset = posterior_moment_set(summary, alpha=alpha)
        else:
            cset = plugin_fisher_set(model, summary, alpha=alpha)
        mass, mass_se = posterior_mass(cset, post, geom)
        limit_cov = sandwich_coverage(spec, cset.z)
        credible_rows.append((kind, alpha, cset.z, mass, mass_se, limit_cov))
        credible_entries.append({
            "kind": kind, "alpha": alpha, "z": cset.z,
            "center": cset.center, "scale_sq": cset.scale_sq,
            "posterior_mass": mass, "mass_se": mass_se,
            "sandwich_limit_coverage": limit_cov,
            "psd_projected": cset.psd_projected,
        })
    tables["credible_sets"] = (
        ["kind", "alpha", "z", "posterior_mass", "mass_se",
         "sandwich_limit_coverage"], credible_rows)

    # Coverage -----------------------------------------------------------------
    coverage = None
    if cfg.coverage.enabled:
        cov_res = coverage_mc(model, process, prior, cfg.coverage.kind,
                              cfg.coverage.alpha, cfg.coverage.n_reps,
                              root.child(rng_tags.COVERAGE), geom=geom,
                              chain_config=ChainConfig(n_draws=cfg.sweep.n_draws),
                              threads=threads)
        z = chi2_quantile(geom.p, cfg.coverage.alpha)
        predicted = sandwich_coverage(spec, z)
        coverage = {"kind": cfg.coverage.kind, "alpha": cfg.coverage.alpha,
                    "n_reps": cov_res.n_reps, "covered": cov_res.covered,
                    "rate": cov_res.rate, "binomial_se": cov_res.binomial_se,
                    "target": cov_res.target, "predicted": predicted,
                    "failures": cov_res.failures, "valid": cov_res.valid}
        if not cov_res.valid:
            problems.append("coverage_invalid")
        checks.append(_check(
            f"coverage vs sandwich prediction ({cfg.coverage.kind})",
            abs(cov_res.rate - predicted), 4.0 * cov_res.binomial_se + 1e-12,
            abs(cov_res.rate - predicted) <= 4.0 * cov_res.binomial_se + 1e-12))
        tables["coverage"] = (
            ["scenario", "kind", "alpha", "n_reps", "rate", "se", "predicted"],
            [(cfg.scenario_id, cfg.coverage.kind, cfg.coverage.alpha,
              cov_res.n_reps, cov_res.rate, cov_res.binomial_se, predicted)])

    # Tables --------------------------------------------------------------------
    tables["mgf"] = (
        ["lambda_norm_sq", "log_mgf", "se", "deviation"],
        [(float(l @ l), est, se, dev)
         for l, (est, se), dev in zip(lambdas, mgf_est, mgf_devs)])
    tables["probe_sets"] = (
        ["kind", "measured", "se", "gaussian", "lower_bound", "upper_bound",
         "passed", "ratio"],
        [(r.set_kind, r.measured, r.measured_se, r.gaussian, r.lower_bound,
          r.upper_bound, r.passed, r.ratio) for r in sandwich_records])
    if conc_records:
        tables["concentration"] = (
            ["x", "upper_measured", "upper_bound", "lower_measured",
             "lower_bound", "passed"],
            [(r.x, r.upper_measured, r.upper_bound, r.lower_measured,
              r.lower_bound, r.passed) for r in conc_records])
    tables["checks"] = (
        ["name", "measured", "reference", "passed", "ratio"],
        [(c["name"], c["measured"], c["reference"], c["passed"], c["ratio"])
         for c in checks])

    flags = {
        "rd_applicable": rd_estimate <= 0.5,
        "bracket_valid": errors.bracket_valid,
        "exact_posterior": summary.exact,
    }
    if profile is not None:
        flags.update(profile.flags)
    flags.update({k: bool(v) for k, v in summary.flags.items()})

    report = {
        "kind": "run",
        "scenario": cfg.scenario_id,
        "resolved_config": cfg.resolved(),
        "geometry": {
            "theta_star": geom.theta_star,
            "d0_sq": geom.d0_sq,
            "v0_sq": geom.v0_sq,
            "a_sq": geom.a_sq,
            "r0": geom.r0,
            "r0_normalization": geom.r0_normalization,
            "x_n": geom.x_n,
            "q_star": geom.q_star,
        },
        "score_state": {
            "xi": state.xi,
            "theta_circ": state.theta_circ,
            "q": state.q,
            "xi_norm_sq": state.xi_norm_sq,
        },
        "conditions": None if profile is None else {
            "nu0": profile.nu0,
            "g_max": profile.g_max,
            "delta_r0": profile.delta_r0,
            "omega_r0": profile.omega_r0,
            "b_r0": profile.b_r0,
            "rd": profile.rd,
            "flags": profile.flags,
        },
        "iid_rates": None if profile is None else {
            "n": model.n, "p": model.p,
            "delta_rate": profile.delta_r0 * math.sqrt(model.n) / geom.r0,
            "omega_rate": profile.omega_r0 * math.sqrt(model.n) / geom.r0,
            "critical_ratio": model.p**3 / model.n,
        },
        "bracketing": {
            "rd_estimate": rd_estimate,
            "rd_used": rd_used,
            "errors": errors,
            "nu_r0": nu,
            "rho_bound": rho_bound,
            "rho_bound_vacuous": rho_vacuous,
            "b_r0": b_r0,
            "upper_function": upper_report,
        },
        "budget": budget,
        "posterior": {
            "mode": cfg.posterior.mode,
            "mean": summary.mean,
            "cov": summary.cov,
            "restricted_mean": summary.restricted_mean,
            "restricted_cov": summary.restricted_cov,
            "tail_mass": summary.tail_mass,
            "inside_mass": summary.inside_mass,
            "ess": None if summary.exact else summary.ess,
            "exact": summary.exact,
            "chain_meta": chain_meta,
        },
        "bvm": {
            "mean_disc": mean_disc,
            "cov_disc_op": cov_op,
            "cov_disc_tr": cov_tr,
            "mgf_disc": mgf_disc,
            "mgf_argmax_lambda": mgf_arg,
            "prob_disc": prob_disc,
            "rd": budget.rd,
            "q": budget.q,
            "metric_noise": noise,
        },
        "mle": {
            "theta_hat": mle.theta_hat,
            "converged": mle.converged,
            "grad_norm": mle.grad_norm,
            "iterations": mle.iterations,
            "on_boundary": mle.on_boundary,
            "expansion_gap": expansion,
        },
        "credible_sets": credible_entries,
        "sandwich_matrix": spec.m,
        "coverage": coverage,
        "prior_check": prior_check,
        "checks": checks,
        "flags": flags,
        "problems": sorted(set(problems)),
    }
    exit_code = 2 if problems else 0
    report["exit_code"] = exit_code

    summary_lines = [
        f"scenario: {cfg.scenario_id}",
        f"family: {model.family_id}  p={model.p}  n={model.n}  "
        f"posterior={cfg.posterior.mode}",
        f"rd: estimate={rd_estimate:.6g} used={rd_used:.6g}  "
        f"q={budget.q:.6g}  r0={geom.r0:.6g} "
        f"(normalization {geom.r0_normalization:g})",
        f"budget: spread={budget.spread:.6g} nu={budget.nu_r0:.6g} "
        f"rho={budget.rho_r0:.6g} delta_plus={budget.delta_plus:.6g} "
        f"delta_oplus={budget.delta_oplus:.6g}",
        "",
        "inequality checks (measured vs reference):",
    ]
    summary_lines += [_check_line(c) for c in checks]
    if problems:
        summary_lines += ["", "applicability flags: " + ", ".join(sorted(set(problems)))]
    else:
        summary_lines += ["", "applicability flags: none"]

    if out_dir is not None:
        _write_report(out_dir, report, tables, summary_lines)
        if cfg.posterior.dump_draws and chain_meta is not None:
            dump_draws(post, os.path.join(out_dir, "draws.bin"),
                       os.path.join(out_dir, "draws.json"))
    return RunResult(report=report, exit_code=exit_code, out_dir=out_dir)


# ---------------------------------------------------------------------------
# Condition audit only
# ---------------------------------------------------------------------------

def run_audit(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> RunResult:
    """Geometry plus condition audit, without the posterior pipeline."""
    model, process, _prior = build_scenario(cfg)
    root = RngStream(cfg.seed)
    geom = local_geometry(
        model, process,
        r0_normalization=cfg.geometry.r0_normalization,
        x_n=cfg.geometry.x_n if cfg.geometry.x_n > 0 else None,
        r0_override=cfg.geometry.r0_override if cfg.geometry.r0_override > 0 else None,
    )
    plan = ShellPlan(
        n_directions=cfg.conditions.n_directions or None,
        n_radii=cfg.conditions.n_radii,
        polish_steps=cfg.conditions.polish_steps,
        seed=cfg.seed % 2**31,
    )
    profile = audit_conditions(model, process, geom,
                               mc_budget=cfg.conditions.mc_budget,
                               rng=root.child(rng_tags.CONDITIONS), plan=plan)
    problems = [label for key, label in _CONDITION_PROBLEMS.items()
                if not profile.flags.get(key, True)]
    rows = [(r, d, o, se, gg, None) for r, d, o, se, gg in zip(
        profile.r_grid, profile.delta, profile.omega, profile.omega_se,
        profile.g_of_r)]
    rows += [(r, None, None, None, None, b)
             for r, b in zip(profile.b_grid, profile.b_vals)]
    tables = {"conditions": (["r", "delta", "omega", "omega_se", "g", "b"], rows)}
    report = {
        "kind": "audit",
        "scenario": cfg.scenario_id,
        "resolved_config": cfg.resolved(),
        "geometry": {
            "theta_star": geom.theta_star, "d0_sq": geom.d0_sq,
            "v0_sq": geom.v0_sq, "a_sq": geom.a_sq, "r0": geom.r0,
            "x_n": geom.x_n, "q_star": geom.q_star,
        },
        "conditions": {
            "nu0": profile.nu0, "g_max": profile.g_max,
            "delta_r0": profile.delta_r0, "omega_r0": profile.omega_r0,
            "b_r0": profile.b_r0, "rd": profile.rd, "flags": profile.flags,
            "r_grid": profile.r_grid, "delta": profile.delta,
            "omega": profile.omega, "omega_se": profile.omega_se,
            "g_of_r": profile.g_of_r, "b_grid": profile.b_grid,
            "b_vals": profile.b_vals,
        },
        "iid_rates": {
            "n": model.n, "p": model.p,
            "delta_rate": profile.delta_r0 * math.sqrt(model.n) / geom.r0,
            "omega_rate": profile.omega_r0 * math.sqrt(model.n) / geom.r0,
            "critical_ratio": model.p**3 / model.n,
        },
        "problems": sorted(set(problems)),
    }
    exit_code = 2 if problems else 0
    report["exit_code"] = exit_code
    lines = [
        f"scenario: {cfg.scenario_id} (condition audit)",
        f"family: {model.family_id}  p={model.p}  n={model.n}",
        f"delta(r0)={profile.delta_r0:.6g}  omega(r0)={profile.omega_r0:.6g}  "
        f"nu0={profile.nu0:.6g}  b(r0)={profile.b_r0:.6g}",
        f"admissible rd = {profile.rd:.6g} "
        f"({'applicable' if profile.flags.get('rd_applicable') else 'NOT applicable: above 1/2'})",
        f"critical ratio p^3/n = {model.p**3 / model.n:.6g}",
        "applicability flags: " + (", ".join(sorted(set(problems))) or "none"),
    ]
    if out_dir is not None:
        _write_report(out_dir, report, tables, lines)
    return RunResult(report=report, exit_code=exit_code, out_dir=out_dir)


# ---------------------------------------------------------------------------
# Critical-dimension sweep
# ---------------------------------------------------------------------------

def _replication_metrics(model, process, prior, geom, chain_cfg, stream,
                         n_lambda: int = 8):
    """Per-replication discrepancy metrics from a fresh dataset and chain."""
    data = model.sample_dataset(process, stream.child(0))
    state = score_state(model, data, geom)
    post = rwm_sample(model, data, prior, geom, chain_cfg, stream.child(1))
    summary = posterior_moments(post, geom)
    mean_disc = mean_discrepancy(summary, state, geom)
    cov_op, cov_tr, _ = cov_discrepancy(summary, geom)
    lambdas = random_lambda_set(geom.p, n_lambda, stream.child(2))
    mgf_est = posterior_log_mgf(post, geom, state, lambdas)
    mgf_disc, _, _ = mgf_discrepancy(mgf_est, lambdas)
    return {
        "mean_disc": mean_disc, "cov_disc_op": cov_op, "cov_disc_tr": cov_tr,
        "mgf_disc": mgf_disc, "ess": summary.ess,
        "noise": _metric_noise(summary, state, geom),
        "tail_mass": summary.tail_mass,
    }


_SWEEP_METRICS = ("mean_disc", "cov_disc_op", "cov_disc_tr", "mgf_disc")


def _aggregate(reps: list[Optional[dict]]) -> dict:
    ok = [r for r in reps if r is not None]
    out = {"reps_completed": len(ok), "reps_failed": len(reps) - len(ok)}
    for key in _SWEEP_METRICS + ("ess", "noise"):
        vals = np.array([r[key] for r in ok], dtype=float)
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            out[f"median_{key}"] = math.nan
            out[f"iqr_{key}"] = math.nan
            continue
        out[f"median_{key}"] = float(np.median(vals))
        q1, q3 = np.percentile(vals, [25, 75])
        out[f"iqr_{key}"] = float(q3 - q1)
    return out


def sweep_critical_dimension(cfg: ExperimentConfig,
                             ratios: Optional[Sequence[float]] = None,
                             reps: Optional[int] = None,
                             out_dir: Optional[str] = None,
                             threads: int = 1) -> RunResult:
    """Sweep the critical ratio p^3/n at fixed p, n = round(p^3 / ratio).

    Each row carries the audited condition profile, the admissible rd, and
    medians/IQRs of the discrepancy metrics over replications.  Rows are
    sorted by the realized ratio, ascending.
    """
    ratios = list(cfg.sweep.ratios if ratios is None else ratios)
    if not ratios:
        raise BvmLabError("ratio list must be nonempty")
    n_reps = int(cfg.sweep.reps if reps is None else reps)
    if n_reps < 5:
        raise BvmLabError("critical-dimension sweep needs at least 5 replications")
    p = cfg.model.p
    root = RngStream(cfg.seed)
    plan = ShellPlan(n_directions=cfg.sweep.n_directions,
                     n_radii=cfg.sweep.n_radii,
                     polish_steps=cfg.sweep.polish_steps,
                     seed=cfg.seed % 2**31)
    rows = []
    for row_idx, ratio in enumerate(sorted(ratios)):
        n = max(1, round(p**3 / ratio))
        row: dict = {"target_ratio": float(ratio), "p": p, "n": n,
                     "critical_ratio": p**3 / n}
        row_cfg = _with_model_n(cfg, n)
        infeasible = (cfg.model.family in ("gaussian_linear",) and n < p)
        if infeasible:
            row["infeasible"] = True
            rows.append(row)
            continue
        row["infeasible"] = False
        model, process, prior = build_scenario(row_cfg)
        geom = local_geometry(
            model, process,
            r0_normalization=cfg.geometry.r0_normalization,
            x_n=cfg.geometry.x_n if cfg.geometry.x_n > 0 else None,
        )
        profile = audit_conditions(model, process, geom,
                                   mc_budget=cfg.sweep.mc_budget,
                                   rng=root.child(rng_tags.SWEEP, row_idx, 0),
                                   plan=plan)
        rd_est = profile.rd if cfg.geometry.rd_source == "conditions" \
            else cfg.geometry.rd
        row.update({
            "delta_r0": profile.delta_r0, "omega_r0": profile.omega_r0,
            "nu0": profile.nu0, "rd_estimate": rd_est,
            "rd_applicable": rd_est <= 0.5, "a_sq": geom.a_sq, "r0": geom.r0,
        })
        chain_cfg = ChainConfig(n_draws=cfg.sweep.n_draws)

        def one_rep(rep: int, _model=model, _process=process, _prior=prior,
                    _geom=geom, _row=row_idx):
            stream = root.child(rng_tags.SWEEP, _row, 1, rep)
            try:
                return _replication_metrics(_model, _process, _prior, _geom,
                                            chain_cfg, stream)
            except BvmLabError:
                return None

        rep_results = parallel_map(one_rep, n_reps, threads)
        row.update(_aggregate(rep_results))
        row["valid"] = row["reps_failed"] <= 0.05 * n_reps
        row["_rep_results"] = rep_results
        rows.append(row)
    rows.sort(key=lambda r: r["critical_ratio"])
    rep_rows = []
    for r in rows:
        for rep, res in enumerate(r.pop("_rep_results", [])):
            if res is None:
                rep_rows.append([r["critical_ratio"], r["n"], rep, None, None,
                                 None, None, None, False])
            else:
                rep_rows.append([r["critical_ratio"], r["n"], rep,
                                 res["mean_disc"], res["cov_disc_op"],
                                 res["cov_disc_tr"], res["mgf_disc"],
                                 res["ess"], True])
    header = ["critical_ratio", "p", "n", "rd_estimate", "delta_r0", "omega_r0",
              "nu0", "reps_completed", "reps_failed"]
    header += [f"median_{m}" for m in _SWEEP_METRICS]
    header += [f"iqr_{m}" for m in _SWEEP_METRICS]
    table_rows = [[r.get(h) for h in header] for r in rows]
    report = {
        "kind": "sweep_critical",
        "scenario": cfg.scenario_id,
        "resolved_config": cfg.resolved(),
        "reps": n_reps,
        "rows": rows,
    }
    report["exit_code"] = 0
    lines = [f"critical-dimension sweep: {cfg.scenario_id} "
             f"(p={p}, reps={n_reps})", ""]
    lines.append(f"{'p^3/n':>10} {'n':>8} {'rd':>10} {'med mean_disc':>14} "
                 f"{'med cov_op':>12} {'med mgf':>10}")
    for r in rows:
        if r.get("infeasible"):
            lines.append(f"{r['critical_ratio']:>10.4g} {r['n']:>8} "
                         f"{'infeasible':>10}")
            continue
        lines.append(
            f"{r['critical_ratio']:>10.4g} {r['n']:>8} "
            f"{r['rd_estimate']:>10.4g} {r['median_mean_disc']:>14.6g} "
            f"{r['median_cov_disc_op']:>12.6g} {r['median_mgf_disc']:>10.4g}")
    if out_dir is not None:
        tables = {
            "sweep": (header, table_rows),
            "replications": (
                ["critical_ratio", "n", "rep", "mean_disc", "cov_disc_op",
                 "cov_disc_tr", "mgf_disc", "ess", "completed"], rep_rows),
        }
        _write_report(out_dir, report, tables, lines)
    return RunResult(report=report, exit_code=0, out_dir=out_dir)


def _with_model_n(cfg: ExperimentConfig, n: int) -> ExperimentConfig:
    import copy

    new = copy.deepcopy(cfg)
    new.model.n = int(n)
    return new


# ---------------------------------------------------------------------------
# Gaussian-prior sweep
# ---------------------------------------------------------------------------

def sweep_gaussian_prior(cfg: ExperimentConfig,
                         g_values: Optional[Sequence[float]] = None,
                         reps: Optional[int] = None,
                         out_dir: Optional[str] = None,
                         threads: int = 1) -> RunResult:
    """Paired flat/Gaussian-prior runs across prior precisions G^2 = g I.

    For each g the report carries the prior smallness diagnostics, the
    per-metric medians under both priors on shared per-replication data,
    the median paired delta, and the joint Monte Carlo noise scale.
    """
    from .conditions import gaussian_prior_check

    g_values = list(cfg.sweep.g_values if g_values is None else g_values)
    if not g_values:
        raise BvmLabError("g list must be nonempty")
    n_reps = int(cfg.sweep.reps if reps is None else reps)
    if n_reps < 2:
        raise BvmLabError("prior sweep needs at least 2 replications")
    model, process, _ = build_scenario(cfg)
    root = RngStream(cfg.seed)
    geom = local_geometry(
        model, process,
        r0_normalization=cfg.geometry.r0_normalization,
        x_n=cfg.geometry.x_n if cfg.geometry.x_n > 0 else None,
    )
    chain_cfg = ChainConfig(n_draws=cfg.sweep.n_draws)
    from .posterior import Prior

    # Paired comparisons share the per-replication data and chain streams
    # (common random numbers), so g -> 0 degenerates to the flat baseline
    # bit for bit and the paired deltas are low-noise.
    def paired_rep(rep: int, prior) -> Optional[dict]:
        stream = root.child(rng_tags.SWEEP, 0, rep)
        try:
            data = model.sample_dataset(process, stream.child(0))
            state = score_state(model, data, geom)
            post = rwm_sample(model, data, prior, geom, chain_cfg,
                              stream.child(1))
            summary = posterior_moments(post, geom)
            cov_op, cov_tr, _p = cov_discrepancy(summary, geom)
            lambdas = random_lambda_set(geom.p, 8, stream.child(2))
            mgf_est = posterior_log_mgf(post, geom, state, lambdas)
            mgf_disc, _, _ = mgf_discrepancy(mgf_est, lambdas)
            return {
                "mean_disc": mean_discrepancy(summary, state, geom),
                "cov_disc_op": cov_op, "cov_disc_tr": cov_tr,
                "mgf_disc": mgf_disc, "ess": summary.ess,
                "noise": _metric_noise(summary, state, geom),
                "tail_mass": summary.tail_mass,
            }
        except BvmLabError:
            return None

    flat_prior = Prior.flat()
    flat_results = parallel_map(lambda r: paired_rep(r, flat_prior),
                                n_reps, threads)
    rows = []
    for g in sorted(g_values):
        g_sq = float(g) * np.eye(model.p)
        g_norm, smallness, small_ok = gaussian_prior_check(g_sq, geom)
        prior_g = Prior.flat() if g == 0.0 else Prior.gaussian(g_sq)
        g_results = parallel_map(lambda r: paired_rep(r, prior_g),
                                 n_reps, threads)
        row = {"g": float(g), "g_theta_norm": g_norm, "smallness": smallness,
               "prior_small": small_ok}
        deltas = []
        noises = []
        for fr, gr in zip(flat_results, g_results):
            if fr is None or gr is None:
                continue
            deltas.append({m: gr[m] - fr[m] for m in _SWEEP_METRICS})
            noises.append(fr["noise"] + gr["noise"])
        row["pairs_completed"] = len(deltas)
        for m in _SWEEP_METRICS:
            flat_vals = [r[m] for r in flat_results if r is not None]
            g_vals = [r[m] for r in g_results if r is not None]
            row[f"median_flat_{m}"] = float(np.median(flat_vals)) if flat_vals else math.nan
            row[f"median_gauss_{m}"] = float(np.median(g_vals)) if g_vals else math.nan
            dv = [d[m] for d in deltas]
            row[f"median_delta_{m}"] = float(np.median(dv)) if dv else math.nan
        row["median_joint_noise"] = float(np.median(noises)) if noises else math.nan
        rows.append(row)
    header = ["g", "smallness", "g_theta_norm", "prior_small", "pairs_completed",
              "median_joint_noise"]
    for m in _SWEEP_METRICS:
        header += [f"median_flat_{m}", f"median_gauss_{m}", f"median_delta_{m}"]
    table_rows = [[r.get(h) for h in header] for r in rows]
    report = {
        "kind": "sweep_prior",
        "scenario": cfg.scenario_id,
        "resolved_config": cfg.resolved(),
        "reps": n_reps,
        "rows": rows,
    }
    report["exit_code"] = 0
    lines = [f"Gaussian-prior sweep: {cfg.scenario_id} (reps={n_reps})", ""]
    lines.append(f"{'g':>10} {'smallness':>12} {'small?':>7} "
                 f"{'med delta mean_disc':>20} {'joint noise':>12}")
    for r in rows:
        lines.append(f"{r['g']:>10.4g} {r['smallness']:>12.4g} "
                     f"{str(r['prior_small']):>7} "
                     f"{r['median_delta_mean_disc']:>20.6g} "
                     f"{r['median_joint_noise']:>12.6g}")
    if out_dir is not None:
        _write_report(out_dir, report, {"prior_sweep": (header, table_rows)},
                      lines)
    return RunResult(report=report, exit_code=0, out_dir=out_dir)
