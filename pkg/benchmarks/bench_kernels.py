"""Benchmark the compiled kernel backend against the numpy fallback.

Runs each hot kernel on identical inputs under both implementations,
checks they agree, and prints a table of best-of-N per-call times with
the speedup of the compiled extension.  Usage:

    python3 benchmarks/bench_kernels.py [--n 16384] [--repeats 3] ...
"""

import argparse
import timeit

import numpy as np

from caol._kernels import _numpy

try:
    from caol._kernels import _fastops
except ImportError:
    _fastops = None


def best_per_call(fn, args, repeats):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeats, number=number)) / number


def fmt_time(seconds):
    if seconds < 1e-3:
        return f"{seconds * 1e6:8.1f} us"
    if seconds < 1.0:
        return f"{seconds * 1e3:8.2f} ms"
    return f"{seconds:8.2f} s "


def agree(name, a, b):
    if isinstance(a, tuple):
        ok = all(np.allclose(x, y, rtol=1e-12, atol=0) for x, y in zip(a, b))
    else:
        ok = np.allclose(a, b, rtol=1e-12, atol=0)
    if not ok:
        raise AssertionError(f"{name}: backends disagree, refusing to time them")


def build_cases(args):
    rng = np.random.default_rng(args.seed)
    x_line = rng.standard_normal(args.n)
    line_offsets = np.arange(args.r, dtype=np.int64)
    x_grid = rng.standard_normal((args.side, args.side))
    grid_offsets = np.array(
        [(dy, dx) for dy in range(args.gh) for dx in range(args.gw)],
        dtype=np.int64,
    )
    v = 0.7 * rng.standard_normal(args.n * args.k)
    a = rng.standard_normal(args.n * args.k)
    b = rng.standard_normal(args.n * args.k)
    e = rng.standard_normal((args.l, args.n, args.k))
    pos = rng.integers(0, args.n, size=args.l).astype(np.int64)
    return [
        ("lift_line", f"N={args.n} R={args.r}", (x_line, line_offsets)),
        (
            "lift_grid",
            f"{args.side}x{args.side} R={args.gh}x{args.gw}",
            (x_grid, grid_offsets),
        ),
        ("hard_threshold", f"{args.n * args.k} values", (v, 0.25)),
        ("residual_sqnorm", f"{args.n * args.k} values", (a, b)),
        (
            "impulse_adjoint_accumulate",
            f"L={args.l} N={args.n} K={args.k}",
            (e, pos, args.r),
        ),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=16384, help="1-D signal length")
    parser.add_argument("--r", type=int, default=9, help="1-D filter taps")
    parser.add_argument("--side", type=int, default=128, help="2-D image side")
    parser.add_argument("--gh", type=int, default=3, help="2-D filter rows")
    parser.add_argument("--gw", type=int, default=3, help="2-D filter cols")
    parser.add_argument("--k", type=int, default=9, help="filters per bank")
    parser.add_argument("--l", type=int, default=32, help="signals per stack")
    parser.add_argument("--repeats", type=int, default=3, help="timing repeats")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if _fastops is None:
        print("compiled extension not importable; timing the numpy backend only")
    header = f"{'kernel':<28} {'inputs':<24} {'numpy':>11} {'cython':>11} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, note, call_args in build_cases(args):
        np_time = best_per_call(getattr(_numpy, name), call_args, args.repeats)
        if _fastops is None:
            print(f"{name:<28} {note:<24} {fmt_time(np_time)} {'-':>11} {'-':>8}")
            continue
        fast = getattr(_fastops, name)
        agree(name, fast(*call_args), getattr(_numpy, name)(*call_args))
        cy_time = best_per_call(fast, call_args, args.repeats)
        print(
            f"{name:<28} {note:<24} {fmt_time(np_time)} {fmt_time(cy_time)} "
            f"{np_time / cy_time:7.2f}x"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
