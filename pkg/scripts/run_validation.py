#!/usr/bin/env python3
"""Run the invariant validation suite and exit nonzero on any failure.

Checks: combined-basis orthonormality, coefficient-distance equality,
RK4 convergence order, particle filter vs exact Kalman filter on a
linear-Gaussian model, filter statistics bookkeeping, determinism, and
causality of the online run.

Usage: python3 scripts/run_validation.py
"""

import sys

from condgp import cli

if __name__ == "__main__":
    sys.exit(cli.main(["validate", *sys.argv[1:]]))
