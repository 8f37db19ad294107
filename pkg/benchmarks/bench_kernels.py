"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--paths N]

Each kernel runs on identical inputs in both backends; the script checks
that the outputs agree before reporting timings.
"""

import argparse
import sys
import time

import numpy as np

from sdepca import _kernels


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(n_paths):
    rng = np.random.default_rng(0)
    A1, B1, C1, D1 = (np.array([[-1.0]]), np.array([[[0.5]]]), np.array([[0.2]]),
                      np.array([[[0.1]]]))
    d = 3
    A3 = rng.normal(0, 0.5, (d, d)) - np.eye(d)
    B3 = rng.normal(0, 0.3, (2, d, d))
    C3 = rng.normal(0, 0.3, (d, d))
    D3 = rng.normal(0, 0.2, (2, d, d))
    ids = np.arange(n_paths)
    dw3 = 0.1 * rng.normal(size=(n_paths // 10, 200, 2))
    x03 = np.ones((n_paths // 10, d))
    return [
        ("normals (P x 200)", lambda k: k.normals(7, ids, 0, 200, 1)),
        ("em_linear scalar (P/10 x 200)",
         lambda k: k.em_linear(A1, B1, C1, D1, np.ones((n_paths // 10, 1)),
                               dw3[:, :, :1].copy(), 0.01, 50, True, 1e12)[0]),
        ("em_linear d=3 (P/10 x 200)",
         lambda k: k.em_linear(A3, B3, C3, D3, x03, dw3, 0.01, 50, True, 1e12)[0]),
        ("moment_sums scalar (P x 200)",
         lambda k: k.moment_sums(A1, B1, C1, D1, np.array([1.0]), 0.01, 50, 200, True, 2.0, 3,
                                 0, n_paths, 1e12)[0]),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--paths", type=int, default=20_000)
    args = ap.parse_args(argv)
    if _kernels.compiled is None:
        print("compiled extension not available; build it with "
              "`pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    print(f"{'kernel':34s} {'cython [s]':>11s} {'python [s]':>11s} {'speedup':>8s}")
    for name, fn in cases(args.paths):
        tc, oc = _best(lambda: fn(_kernels.compiled), args.repeat)
        tp, op = _best(lambda: fn(_kernels.python), args.repeat)
        if not np.allclose(np.asarray(oc), np.asarray(op), rtol=1e-12, atol=1e-14,
                           equal_nan=True):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 2
        print(f"{name:34s} {tc:11.4f} {tp:11.4f} {tp / tc:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
