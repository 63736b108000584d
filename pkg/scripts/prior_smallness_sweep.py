#!/usr/bin/env python3
"""Gaussian-prior smallness sweep: when does the prior start to matter?

Paired flat/Gaussian chains on shared data across prior precisions; the
smallness diagnostic ||D0^-1 G^2 D0^-1|| p separates the regimes.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from bvmlab.cli import main

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIG = os.path.join(HERE, "..", "configs", "prior-sweep.toml")

if __name__ == "__main__":
    raise SystemExit(main([
        "sweep-prior", CONFIG,
        "--g", "0.001,0.1,10,100",
        "--reps", sys.argv[1] if len(sys.argv) > 1 else "4",
        "--threads", os.environ.get("BVMLAB_THREADS", "4"),
        "--out", os.path.join("out", "prior-sweep"),
    ]))
