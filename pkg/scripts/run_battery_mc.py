#!/usr/bin/env python3
"""Reproduce the battery Monte Carlo study.

50 independent runs of the noise-adaptive particle filter on the battery
surrogate: wrong basis initialization at step 0 and a sudden change of the
true nested function at step 1000. Writes per-run step logs, the
across-run mean/std summary, and the resolved configuration.

Usage: python3 scripts/run_battery_mc.py [--output DIR] [--runs N] [extra
condgp CLI flags, e.g. --override filter.num_particles=200]
"""

import sys

from condgp import cli

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--output" not in args:
        args += ["--output", "runs/battery_mc"]
    sys.exit(cli.main(["mc", *args]))
