#!/usr/bin/env python3
"""Throughput comparison sweep.

Opportunistic scheduling vs DCF with ARF and with threshold rate adaptation,
seven stations in Rayleigh fading (mean Eb/N0 28 dB).  Emits plot-ready
compare.csv (downlink and system throughput per scheme per arrival rate)
into results/throughput/.
"""

import sys

from oppmac.cli import main

if __name__ == "__main__":
    sys.exit(main([
        "compare",
        "--scheme", "opportunistic,dcf-arf,dcf-threshold",
        "--lambda", "10,20,30,40,50,60,70,80,90,100,110,120",
        "--reps", "2",
        "--duration-s", "40",
        "--set", "channel.mode=rayleigh",
        "--set", "channel.mean_ebn0_db=28.0",
        "--out", "results/throughput",
    ]))
