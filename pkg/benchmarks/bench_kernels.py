"""Timing comparison of the compiled kernels against the numpy fallback.

Runs the four kernels at training-realistic shapes (a 256-row batch expanded
to 5 candidate successors of 3 units each, hidden width 128) and prints
microseconds per call for each backend plus the speedup.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--dtype float32]
"""

import argparse
import time

import numpy as np

from ace.nn import kernels_py

try:
    from ace.nn import _kernels
except ImportError:
    _kernels = None


def bench(fn, args, repeat):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1e6


def cases(dtype):
    rng = np.random.default_rng(0)
    rows, hidden = 256 * 5 * 3, 128
    x = rng.standard_normal((rows, hidden)).astype(dtype)
    w = rng.standard_normal((hidden, hidden)).astype(dtype)
    b = rng.standard_normal(hidden).astype(dtype)
    y = np.maximum(x @ w.T + b, 0)
    dy = rng.standard_normal((rows, hidden)).astype(dtype)
    dw = np.zeros_like(w)
    db = np.zeros_like(b)
    n = hidden * hidden
    p, g, m = (rng.standard_normal(n).astype(dtype) for _ in range(3))
    v = rng.random(n).astype(dtype)  # second moment: nonnegative
    tgt, onl = (rng.standard_normal(n).astype(dtype) for _ in range(2))
    return [
        ("dense_forward", (x, w, b, True)),
        ("dense_backward", (x, y, w, dy, True, dw, db)),
        ("adam_step", (p, g, m, v, 5e-4, 0.9, 0.999, 1e-8, 0.0, 10)),
        ("soft_update", (tgt, onl, 0.02)),
    ]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--dtype", choices=("float32", "float64"),
                        default="float32")
    args = parser.parse_args()
    dtype = np.dtype(args.dtype)

    print(f"dtype={args.dtype} repeat={args.repeat}")
    print(f"{'kernel':<16}{'python us':>12}{'compiled us':>14}{'speedup':>10}")
    for name, call_args in cases(dtype):
        t_py = bench(getattr(kernels_py, name), call_args, args.repeat)
        if _kernels is None:
            print(f"{name:<16}{t_py:>12.1f}{'missing':>14}{'-':>10}")
            continue
        t_c = bench(getattr(_kernels, name), call_args, args.repeat)
        print(f"{name:<16}{t_py:>12.1f}{t_c:>14.1f}{t_py / t_c:>10.2f}")


if __name__ == "__main__":
    main()
