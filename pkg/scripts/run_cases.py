#!/usr/bin/env python3
"""Reproduce the two shipped loss scenarios in both modes and export traces.

Writes one output directory per (case, mode) under results/cases/, each with
trace.csv, packets.csv, summary.csv and a companion plot script.
"""

import sys
from pathlib import Path

from dynaroute.cli import main

OUT = Path(__file__).resolve().parent.parent / "results" / "cases"


def run_all(seed: int = 0) -> int:
    worst = 0
    for case in ("case1", "case2"):
        for mode in ("dynaroute", "baseline"):
            out = OUT / f"{case}_{mode}"
            rc = main([
                "run", "--loss-case", case, "--mode", mode,
                "--seed", str(seed), "--out", str(out), "--format", "plotscript",
            ])
            worst = max(worst, rc)
    return worst


if __name__ == "__main__":
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    sys.exit(run_all(seed))
