#!/usr/bin/env python3
"""Sweep fixed round-trip delays through the closed-loop plant proxy and
locate the stability margin by bisection.

Usage: python scripts/sweep_delay_margin.py
"""

import sys

from uavqos.plant import run_fixed_delay_loop


def main():
    sweep = [10.0, 27.0, 50.0, 80.0, 120.0, 200.0, 300.0, 500.0, 800.0]
    print(f"{'rtt (ms)':>10}{'steady err (m)':>16}{'diverged':>10}")
    for rtt in sweep:
        r = run_fixed_delay_loop(rtt, duration_ms=60_000.0)
        print(f"{rtt:>10.0f}{r.steady_error:>16.4f}{str(r.diverged):>10}")

    lo, hi = 300.0, 1500.0
    while hi - lo > 25.0:
        mid = (lo + hi) / 2.0
        if run_fixed_delay_loop(mid, duration_ms=90_000.0).diverged:
            hi = mid
        else:
            lo = mid
    print(f"\ndivergence margin between {lo:.0f} and {hi:.0f} ms rtt")
    return 0


if __name__ == "__main__":
    sys.exit(main())
