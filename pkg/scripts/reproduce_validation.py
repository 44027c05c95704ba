#!/usr/bin/env python3
"""Analysis-vs-simulation validation sweep.

Writes analysis.csv and validate.csv for N=7 stations on the uniform
four-state channel, plus the small N=2 cross-check, into results/validation/.
"""

import sys

from oppmac.cli import main

OUT = "results/validation"

if __name__ == "__main__":
    rc = main([
        "analyze",
        "--lambda", "10,20,30,40,50,60,70,80,85,90,100",
        "--set", "system.retry_limit=unlimited",
        "--out", OUT,
    ])
    rc |= main([
        "validate",
        "--lambda", "20,40,60,80",
        "--reps", "3",
        "--duration-s", "60",
        "--set", "system.retry_limit=unlimited",
        "--tolerance", "0.12",
        "--out", OUT,
    ])
    rc |= main([
        "validate",
        "--lambda", "20",
        "--set", "system.n_stations=2",
        "--set", "system.retry_limit=unlimited",
        "--duration-s", "120",
        "--tolerance", "0.02",
        "--out", OUT + "/n2",
    ])
    sys.exit(rc)
