"""Benchmark the JIT-compiled kernels against the pure-Python/numpy fallback.

Runs the same workload twice in subprocesses, once with numba enabled and
once with ENGAGETRACE_DISABLE_NUMBA=1, reports wall times, and checks that
both paths produce identical evaluation results.

Usage: python3 benchmarks/bench_numba_vs_numpy.py [--events N]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def workload(n_events: int) -> dict:
    from engagetrace import _kernels
    from engagetrace.evaluation import evaluate_sequential
    from engagetrace.models import config_for
    from engagetrace.synth import generate_novelty_stream

    n_learners = max(2, n_events // 100)
    events, _ = generate_novelty_stream(n_learners, total_events=n_events,
                                        n_kcs=200, topics_per_event=5, seed=11)
    _kernels.warmup()  # JIT compilation happens outside the timed region

    timings = {}
    results = {}
    for kind in ("truelearn-novelty", "truelearn-fixed-depth", "multiskill-kt"):
        cfg = config_for(kind, init_var=0.1)
        start = time.perf_counter()
        report = evaluate_sequential(cfg, events, seed=11)
        timings[kind] = time.perf_counter() - start
        results[kind] = report.weighted

    return {
        "mode": "numba" if _kernels.NUMBA_ENABLED else "fallback",
        "events": n_events,
        "timings": timings,
        "results": results,
    }


def run_mode(disable_numba: bool, n_events: int) -> dict:
    env = dict(os.environ)
    env["ENGAGETRACE_DISABLE_NUMBA"] = "1" if disable_numba else "0"
    proc = subprocess.run(
        [sys.executable, __file__, "--worker", "--events", str(n_events)],
        env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--events", type=int, default=100_000,
                        help="workload size in events (default 100000)")
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        print(json.dumps(workload(args.events)))
        return 0

    jit = run_mode(disable_numba=False, n_events=args.events)
    pure = run_mode(disable_numba=True, n_events=args.events)

    print(f"workload: {args.events} events, per-event sequential updates\n")
    print(f"{'model':<24}{'numba':>12}{'fallback':>12}{'speedup':>10}")
    for kind in jit["timings"]:
        a, b = jit["timings"][kind], pure["timings"][kind]
        print(f"{kind:<24}{a:>11.2f}s{b:>11.2f}s{b / a:>9.1f}x")

    agree = True
    for kind in jit["results"]:
        for metric, value in jit["results"][kind].items():
            if abs(value - pure["results"][kind][metric]) > 1e-12:
                agree = False
                print(f"MISMATCH {kind}/{metric}: "
                      f"numba={value!r} fallback={pure['results'][kind][metric]!r}")
    print("\nresults identical across paths" if agree
          else "\nWARNING: paths disagree beyond 1e-12")
    return 0 if agree else 1


if __name__ == "__main__":
    sys.exit(main())
