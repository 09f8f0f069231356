"""Timing comparison of the pure-numpy and Cython coupling kernels.

Runs each hot kernel on identical inputs with both backends and prints the
per-call time plus the speedup. Usage:

    python3 benchmarks/bench_kernels.py [--rows 20000] [--dims 8]
                                        [--bins 8] [--repeats 30]
"""

import argparse
import time

import numpy as np

from flowtopo._kernels import get_backend


def _time(fn, repeats):
    # one warm-up call, then best-of-repeats wall time
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _affine_inputs(rng, rows, dims):
    z = rng.standard_normal((rows, dims))
    raw = rng.standard_normal((rows, dims))
    t = rng.standard_normal((rows, dims))
    return z, raw, t


def _spline_inputs(rng, rows, dims, bins):
    z = rng.uniform(-3.5, 3.5, size=(rows, dims))
    theta = rng.standard_normal((rows, dims, 3 * bins - 1))
    return z, theta


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=20000)
    parser.add_argument("--dims", type=int, default=8)
    parser.add_argument("--bins", type=int, default=8)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    try:
        cython = get_backend("cython")
    except ImportError:
        print("cython backend not built; run pip install -e . first")
        return 1
    python = get_backend("python")

    rng = np.random.default_rng(0)
    z, raw, t = _affine_inputs(rng, args.rows, args.dims)
    zs, theta = _spline_inputs(rng, args.rows, args.dims, args.bins)
    u = cython.rqs_forward(zs, theta, args.bins, 4.0)[0]

    cases = [
        ("affine_forward", lambda b: b.affine_forward(z, raw, t, 3.0)),
        ("affine_inverse", lambda b: b.affine_inverse(z, raw, t, 3.0)),
        ("affine_partials", lambda b: b.affine_partials(z, raw, t, 3.0, False)),
        ("rqs_forward", lambda b: b.rqs_forward(zs, theta, args.bins, 4.0)),
        ("rqs_inverse", lambda b: b.rqs_inverse(u, theta, args.bins, 4.0)),
        ("rqs_forward_partials",
         lambda b: b.rqs_forward_partials(zs, theta, args.bins, 4.0)),
        ("rqs_inverse_partials",
         lambda b: b.rqs_inverse_partials(u, theta, args.bins, 4.0)),
    ]

    print(f"rows={args.rows} dims={args.dims} bins={args.bins} "
          f"(best of {args.repeats})")
    print(f"{'kernel':<22}{'python':>12}{'cython':>12}{'speedup':>10}")
    for name, call in cases:
        tp = _time(lambda: call(python), args.repeats)
        tc = _time(lambda: call(cython), args.repeats)
        print(f"{name:<22}{tp * 1e3:>10.2f}ms{tc * 1e3:>10.2f}ms"
              f"{tp / tc:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
