#!/usr/bin/env python3
"""Run the bundled reference scenarios into out/.

The exact conjugate scenario must come out flag-clean with zero
discrepancies; the critical-dimension scenario must exit with the
applicability flag (the admissible bracketing constant exceeds 1/2).
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from bvmlab.cli import main

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIGS = os.path.join(HERE, "..", "configs")

SCENARIOS = [
    ("gaussian-exact.toml", 0),
    ("gaussian-mcmc.toml", 0),
    ("logistic-small.toml", 2),
    ("logistic-critical.toml", 2),
    ("coverage-wellspec.toml", 0),
    ("coverage-misspec.toml", 0),
]

if __name__ == "__main__":
    threads = os.environ.get("BVMLAB_THREADS", "4")
    for name, expected in SCENARIOS:
        out = os.path.join("out", name.removesuffix(".toml"))
        code = main(["run", os.path.join(CONFIGS, name),
                     "--threads", threads, "--out", out])
        status = "ok" if code == expected else f"UNEXPECTED (wanted {expected})"
        print(f"{name}: exit {code} {status}")
