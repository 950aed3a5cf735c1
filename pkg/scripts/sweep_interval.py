#!/usr/bin/env python3
"""Packet-interval sweep over both modes (throughput / delay comparison)."""

import sys
from pathlib import Path

from dynaroute.cli import main

OUT = Path(__file__).resolve().parent.parent / "results" / "sweep_interval"

if __name__ == "__main__":
    seeds = sys.argv[1] if len(sys.argv) > 1 else "5"
    sys.exit(main([
        "sweep", "--param", "interval", "--values", "0.1,0.2,0.5,1.0",
        "--seeds", seeds, "--out", str(OUT),
    ]))
