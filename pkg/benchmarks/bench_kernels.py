#!/usr/bin/env python3
"""Micro-benchmark: compiled kernels vs the numpy fallback.

Times the four hot particle-filter kernels on realistic sizes and prints a
table with per-call latency and the speedup of the compiled path. Run after
building the extension:

    python benchmarks/bench_kernels.py [--n 50 2000 20000] [--repeat 2000]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from aomdp_lab.kernels import BACKEND, fallback

if BACKEND == "compiled":
    from aomdp_lab.kernels import _ckernels as compiled
else:
    compiled = None


def _cases(n: int, rng: np.random.Generator):
    logw = rng.normal(size=n)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    vals = rng.normal(size=n)
    pred = rng.normal(size=n)
    return {
        "normalize_log_weights": (np.ascontiguousarray(logw),),
        "systematic_resample": (np.ascontiguousarray(w), 0.371),
        "weighted_moments": (np.ascontiguousarray(vals), np.ascontiguousarray(w)),
        "gaussian_loglik": (np.ascontiguousarray(vals), np.ascontiguousarray(pred), 0.24),
    }


def bench(fn, args, repeat: int) -> float:
    timer = timeit.Timer(lambda: fn(*args))
    loops = max(1, repeat)
    return min(timer.repeat(repeat=3, number=loops)) / loops


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, nargs="+", default=[50, 2000, 20000],
                        help="particle counts to benchmark")
    parser.add_argument("--repeat", type=int, default=2000, help="loops per timing")
    args = parser.parse_args()

    print(f"active backend: {BACKEND}")
    if compiled is None:
        print("compiled extension unavailable; timing the fallback only")
    rng = np.random.default_rng(0)
    header = f"{'kernel':<24}{'n':>8}{'fallback us':>14}{'compiled us':>14}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for n in args.n:
        cases = _cases(n, rng)
        repeat = max(10, args.repeat // max(1, n // 50))
        for name, call_args in cases.items():
            t_fb = bench(getattr(fallback, name), call_args, repeat)
            if compiled is not None:
                t_c = bench(getattr(compiled, name), call_args, repeat)
                ratio = t_fb / t_c if t_c > 0 else float("inf")
                print(f"{name:<24}{n:>8}{t_fb * 1e6:>14.2f}{t_c * 1e6:>14.2f}{ratio:>9.2f}x")
            else:
                print(f"{name:<24}{n:>8}{t_fb * 1e6:>14.2f}{'-':>14}{'-':>10}")


if __name__ == "__main__":
    main()
