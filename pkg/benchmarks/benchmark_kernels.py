#!/usr/bin/env python3
"""Benchmark the JIT kernels against the pure-numpy fallback.

Runs each hot kernel on identical inputs under both backends, reports
median wall time and speedup, and checks numerical agreement (integer
outputs must match exactly, float outputs to 1e-9).

Usage:
    python benchmarks/benchmark_kernels.py [--trials N] [--n LEN] [--iters I]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mdelta import _kernels


def time_call(fn, iters):
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), out


def agreement(a, b):
    if isinstance(a, tuple):
        return all(agreement(x, y) for x, y in zip(a, b))
    if isinstance(a, (int, np.integer)):
        return a == b
    a = np.asarray(a)
    b = np.asarray(b)
    if a.dtype.kind in "iu":
        return bool(np.array_equal(a, b))
    return bool(np.allclose(a, b, rtol=1e-9, atol=1e-9))


def build_cases(trials, n, rng):
    theta = rng.uniform(0.3, 0.7, 16)
    u = rng.random((trials, n))
    bits = _kernels.sample_batch(theta, 0, 4, u)
    lt1, lt0 = np.log2(theta), np.log2(1 - theta)
    return [
        ("sample_batch", lambda: _kernels.sample_batch(theta, 0, 4, u)),
        ("count_batch", lambda: _kernels.count_batch(bits, 0, 4)),
        ("log2_prob_batch", lambda: _kernels.log2_prob_batch(lt1, lt0, 0, 4, bits)),
        ("enum_ml_log2 (n=16)", lambda: _kernels.enum_ml_log2(2, 0, 16)),
        ("enum_kt_log2 (n=16)", lambda: _kernels.enum_kt_log2(2, 0, 16)),
        ("domination_dist (n=14)", lambda: _kernels.domination_dist(14, 0.3, 7, True)),
        ("azuma_failures", lambda: _kernels.azuma_failures(u, 3.0, 1)),
    ]


def main():
    parser = argparse.ArgumentParser(description="mdelta kernel benchmark")
    parser.add_argument("--trials", type=int, default=2000, help="batch rows (default 2000)")
    parser.add_argument("--n", type=int, default=4096, help="bits per row (default 4096)")
    parser.add_argument("--iters", type=int, default=5, help="timing repetitions (default 5)")
    args = parser.parse_args()

    if not _kernels.HAVE_NUMBA:
        parser.error("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    cases = build_cases(args.trials, args.n, rng)

    print(f"batch {args.trials} x {args.n} bits, median of {args.iters} runs\n")
    print(f"{'kernel':<24} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}  agree")
    print("-" * 68)

    all_agree = True
    for name, fn in cases:
        _kernels.set_backend("numba")
        fn()  # JIT warmup outside the timed region
        t_nb, out_nb = time_call(fn, args.iters)
        _kernels.set_backend("numpy")
        t_np, out_np = time_call(fn, args.iters)
        ok = agreement(out_np, out_nb)
        all_agree &= ok
        print(
            f"{name:<24} {t_np * 1e3:>12.2f} {t_nb * 1e3:>12.2f} "
            f"{t_np / t_nb:>8.1f}x  {'yes' if ok else 'NO'}"
        )

    _kernels.set_backend("auto")
    print("\nnumerical agreement:", "all kernels match" if all_agree else "MISMATCH")
    return 0 if all_agree else 1


if __name__ == "__main__":
    raise SystemExit(main())
