#!/usr/bin/env python3
"""Headline experiment: discrepancy growth along the critical ratio p^3/n.

Writes out/critical-sweep/{report.json,tables,summary.txt}; the medians of
the covariance and mean discrepancies should grow with the ratio, with the
ratio-0.01 row far below the ratio-10 row.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from bvmlab.cli import main

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIG = os.path.join(HERE, "..", "configs", "logistic-sweep.toml")

if __name__ == "__main__":
    reps = sys.argv[1] if len(sys.argv) > 1 else "20"
    raise SystemExit(main([
        "sweep-critical", CONFIG,
        "--ratios", "0.01,0.1,1,10",
        "--reps", reps,
        "--threads", os.environ.get("BVMLAB_THREADS", "4"),
        "--out", os.path.join("out", "critical-sweep"),
    ]))
