#!/usr/bin/env python3
"""Run the bundled scenarios and print the quantitative comparison table
(mean control round trip, platform and background goodput per phase).

Usage: python scripts/run_table_scenarios.py [--out results/]
"""

import argparse
import statistics
import sys
import time
from pathlib import Path

from uavqos.engine import run
from uavqos.output import emit
from uavqos.scenario import BUILTIN_SCENARIOS, load_config


def phase_stats(traces, t_from, t_to):
    rows = [r for r in traces if t_from < r.time <= t_to]
    return (statistics.mean(r.rtt for r in rows),
            statistics.mean(r.uav_goodput for r in rows),
            statistics.mean(r.bg_goodput for r in rows))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default=None,
                        help="also write trace/summary files per scenario")
    args = parser.parse_args()

    print(f"{'scenario':<18}{'uav Rx (Mbps)':>14}{'rtt (ms)':>16}"
          f"{'bg Rx (Mbps)':>14}{'verdict':>12}{'wall (s)':>10}")
    for name in BUILTIN_SCENARIOS:
        cfg = load_config(name)
        t0 = time.perf_counter()
        traces, summary = run(cfg)
        wall = time.perf_counter() - t0
        if cfg.background:
            lo, hi = cfg.background.active_window_ms
            window = (max(lo, 5000.0) + 2000.0, min(hi, cfg.duration_ms))
        else:
            window = (5000.0, cfg.duration_ms)
        rtt, uav, bg = phase_stats(traces, *window)
        rtt_cell = f"{rtt:.1f}" if summary.stability == "stable" \
            else f"{rtt:.0f} (rises)"
        print(f"{name:<18}{uav:>14.2f}{rtt_cell:>16}{bg:>14.2f}"
              f"{summary.stability:>12}{wall:>10.2f}")
        if args.out:
            emit(traces, summary, Path(args.out) / name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
