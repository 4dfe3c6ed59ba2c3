#!/usr/bin/env python3
"""Benchmark the dilated-convolution kernels: numba loops vs numpy slices.

The grid stage spends most of its time in conv2d_forward/backward, so
this script times both backends over a range of grid sizes and channel
widths and reports the speedup. Results drift with BLAS build and core
count; treat them as relative, not absolute.

Usage:
    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --sizes 16 32 64 --channels 32 80
    python3 benchmarks/bench_kernels.py --repeats 50 --output results.json
"""

import argparse
import json
import statistics
import time

import numpy as np

from crener import kernels


def time_call(fn, repeats):
    """Median wall time of `fn()` over `repeats` calls, in seconds."""
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def bench_case(n, c_in, c_out, dilation, repeats, rng):
    x = rng.standard_normal((n, n, c_in)).astype(np.float32)
    w = (rng.standard_normal((3, 3, c_in, c_out)) * 0.1).astype(np.float32)
    b = np.zeros(c_out, dtype=np.float32)
    g = rng.standard_normal((n, n, c_out)).astype(np.float32)

    rows = []
    for op, call in (
        ("forward", lambda: kernels.conv2d_forward(x, w, b, dilation)),
        ("backward", lambda: kernels.conv2d_backward(x, w, g, dilation)),
    ):
        timings = {}
        for backend in ("numpy", "numba"):
            try:
                kernels.set_backend(backend)
            except RuntimeError:
                timings[backend] = None
                continue
            call()  # warm-up; first numba call pays JIT compilation
            timings[backend] = time_call(call, repeats)
        rows.append({
            "n": n,
            "c_in": c_in,
            "c_out": c_out,
            "dilation": dilation,
            "op": op,
            "numpy_s": timings["numpy"],
            "numba_s": timings["numba"],
        })

    # the two backends must agree before timings mean anything
    kernels.set_backend("numpy")
    ref = kernels.conv2d_forward(x, w, b, dilation)
    if kernels._NUMBA_AVAILABLE:
        kernels.set_backend("numba")
        np.testing.assert_allclose(
            kernels.conv2d_forward(x, w, b, dilation), ref, atol=1e-4
        )
    return rows


def format_table(rows):
    header = f"{'n':>4} {'c_in':>5} {'c_out':>6} {'dil':>4} {'op':<9} " \
             f"{'numpy (ms)':>11} {'numba (ms)':>11} {'speedup':>8}"
    lines = [header, "-" * len(header)]
    for r in rows:
        if r["numba_s"] is None:
            right = f"{'n/a':>11} {'n/a':>8}"
        else:
            right = f"{r['numba_s'] * 1e3:>11.3f} " \
                    f"{r['numpy_s'] / r['numba_s']:>7.2f}x"
        lines.append(
            f"{r['n']:>4} {r['c_in']:>5} {r['c_out']:>6} {r['dilation']:>4} "
            f"{r['op']:<9} {r['numpy_s'] * 1e3:>11.3f} {right}"
        )
    return "\n".join(lines)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64],
                        help="grid side lengths n (cost grows as n^2)")
    parser.add_argument("--channels", type=int, nargs="+", default=[32, 80],
                        help="input channel widths; output is fixed below")
    parser.add_argument("--c-out", type=int, default=16,
                        help="output channels per dilation branch")
    parser.add_argument("--dilation", type=int, default=2)
    parser.add_argument("--repeats", type=int, default=20,
                        help="timed calls per case (median reported)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--output", default=None, help="write rows as JSON")
    args = parser.parse_args()

    if not kernels._NUMBA_AVAILABLE:
        print("note: numba is not importable; timing the numpy path only")
    rng = np.random.default_rng(args.seed)

    rows = []
    for n in args.sizes:
        for c_in in args.channels:
            rows.extend(
                bench_case(n, c_in, args.c_out, args.dilation, args.repeats, rng)
            )

    print(format_table(rows))
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
        print(f"\nwrote {len(rows)} rows to {args.output}")


if __name__ == "__main__":
    main()
