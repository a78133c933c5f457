"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--m 15 50 200] [--repeat 200]

Times one likelihood+score evaluation and one full NAS maximization per
backend, and reports the speed-up.
"""

import argparse
import timeit

import numpy as np

from fhci._core import _fallback

try:
    from fhci._core import _kernels
except ImportError:
    _kernels = None


def make_problem(m, p=2, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(m), rng.uniform(size=(m, p - 1))])
    D = rng.uniform(0.2, 2.0, size=m)
    y = X @ np.ones(p) + rng.normal(size=m) * np.sqrt(1.0 + D)
    return np.ascontiguousarray(y), np.ascontiguousarray(X), np.ascontiguousarray(D)


def bench(mod, y, X, D, repeat):
    z = 1.959963984540054
    a = (1 + z * z) / 4
    a_max = 100.0 * (D.max() + y.var())
    ev = timeit.timeit(lambda: mod.adjusted_value_and_score(y, X, D, 0.7, a, 0.0, 0.0), number=repeat) / repeat
    mx = timeit.timeit(lambda: mod.maximize_adjusted(y, X, D, a, 0.0, 0.0, a_max, 60, 1e-8, 200), number=repeat) / repeat
    return ev, mx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, nargs="+", default=[15, 50, 200])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
    print(f"{'m':>5} {'backend':>8} {'eval (us)':>11} {'maximize (us)':>14}")
    for m in args.m:
        y, X, D = make_problem(m)
        res = {"python": bench(_fallback, y, X, D, args.repeat)}
        if _kernels is not None:
            res["cython"] = bench(_kernels, y, X, D, args.repeat)
        for name, (ev, mx) in res.items():
            print(f"{m:>5} {name:>8} {ev * 1e6:>11.1f} {mx * 1e6:>14.1f}")
        if "cython" in res:
            print(f"{'':>5} {'speedup':>8} {res['python'][0] / res['cython'][0]:>10.1f}x {res['python'][1] / res['cython'][1]:>13.1f}x")


if __name__ == "__main__":
    main()
