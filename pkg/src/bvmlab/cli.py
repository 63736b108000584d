"""Command-line front end.

Subcommands:

* ``run CONFIG``             full pipeline for one scenario
* ``sweep-critical CONFIG``  critical-dimension (p^3/n) sweep
* ``sweep-prior CONFIG``     Gaussian-prior smallness sweep
* ``audit CONFIG``           condition audit only

Common flags: ``--seed`` (overrides the config seed), ``--threads``
(replication parallelism; the env var BVMLAB_THREADS is honored when the
flag is absent and never affects results), ``--out DIR`` (output
directory, default ``./out/<scenario>``).

Exit codes: 0 success, 2 applicability flags raised, 1 errors.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import load_config
from .errors import BvmLabError, ConfigError
from .harness import (run_audit, run_experiment, sweep_critical_dimension,
                      sweep_gaussian_prior)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("config", help="path to the TOML experiment config")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    sub.add_argument("--threads", type=int, default=None,
                     help="replication thread count (default: "
                          "BVMLAB_THREADS or 1); never affects results")
    sub.add_argument("--out", default=None, help="output directory")


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad float list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bvmlab",
        description="Finite-sample Gaussian-approximation diagnostics for "
                    "quasi-likelihood posteriors",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    run_p = subs.add_parser("run", help="run one scenario end to end")
    _add_common(run_p)

    crit_p = subs.add_parser("sweep-critical",
                             help="sweep the critical ratio p^3/n")
    _add_common(crit_p)
    crit_p.add_argument("--ratios", type=_float_list, default=None,
                        help="comma-separated target ratios, e.g. 0.01,0.1,1,10")
    crit_p.add_argument("--reps", type=int, default=None,
                        help="replications per ratio")

    prior_p = subs.add_parser("sweep-prior",
                              help="sweep the Gaussian prior precision")
    _add_common(prior_p)
    prior_p.add_argument("--g", type=_float_list, default=None,
                         help="comma-separated prior precisions g (G^2 = g I)")
    prior_p.add_argument("--reps", type=int, default=None,
                         help="replications per g")

    audit_p = subs.add_parser("audit", help="condition audit only")
    _add_common(audit_p)
    return parser


def _resolve_threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("BVMLAB_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = int(args.seed)
        threads = _resolve_threads(args)
        out_dir = args.out or os.path.join("out", cfg.scenario_id)
        if args.command == "run":
            result = run_experiment(cfg, out_dir=out_dir, threads=threads)
        elif args.command == "sweep-critical":
            result = sweep_critical_dimension(cfg, ratios=args.ratios,
                                              reps=args.reps, out_dir=out_dir,
                                              threads=threads)
        elif args.command == "sweep-prior":
            result = sweep_gaussian_prior(cfg, g_values=args.g, reps=args.reps,
                                          out_dir=out_dir, threads=threads)
        elif args.command == "audit":
            result = run_audit(cfg, out_dir=out_dir)
        else:  # pragma: no cover - argparse enforces the choices
            raise BvmLabError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1
    except BvmLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {result.out_dir} (exit {result.exit_code})")
    return result.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
