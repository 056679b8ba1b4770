#!/usr/bin/env python3
"""Reproduce the degrees-of-freedom error sweep on the sinc family.

For each basis size d, compares the mean approximation error of the best
d original basis functions (refit per realization) against the rank-d
conditioned basis (projection of the full coefficient vectors). Writes
dof_sweep.csv plus the offline artifacts.

Usage: python3 scripts/run_dof_sweep.py [--output DIR] [extra condgp CLI
flags, e.g. --override sweep.d_max=12]
"""

import sys

from condgp import cli

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--preset" not in args:
        args += ["--preset", "sinc"]
    if "--output" not in args:
        args += ["--output", "runs/dof_sweep"]
    sys.exit(cli.main(["sweep", *args]))
