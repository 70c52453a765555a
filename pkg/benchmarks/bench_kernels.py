"""Compare the numba and pure-numpy implementations of every hot kernel.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel is run once untimed (JIT compilation), then timed ``--repeat``
times; the median is reported together with the largest absolute difference
between the two outputs.
"""
import argparse
import json
import statistics
import sys
import time

import numpy as np

from ctgcn import _kernels as K


def _time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def cases(rng):
    a, b = rng.standard_normal(400), rng.standard_normal(400)
    X = rng.standard_normal((16, 250))
    x, y = rng.standard_normal(1000), rng.standard_normal(1000)
    Z = rng.standard_normal((3, 1000))
    rcond = np.finfo(float).eps * 1000
    n = 20
    lag = rng.uniform(-0.1, 0.1, (2, n, n))
    mix = np.eye(n)
    noise = rng.standard_normal((5000, n))
    x0 = np.zeros((2, n))
    yield ("dtw 400x400", lambda: K.dtw_numba(a, b, -1), lambda: K.dtw_numpy(a, b, -1))
    yield ("dtw 400x400 band 20", lambda: K.dtw_numba(a, b, 20), lambda: K.dtw_numpy(a, b, 20))
    yield ("dtw_matrix 16x250", lambda: K.dtw_matrix_numba(X, -1), lambda: K.dtw_matrix_numpy(X, -1))
    yield ("parcorr n=1000 |Z|=3", lambda: K.parcorr_residual_numba(x, y, Z, rcond)[0],
           lambda: K.parcorr_residual_numpy(x, y, Z, rcond)[0])
    yield ("simulate 5000x20 L=2", lambda: K.simulate_linear_numba(lag, mix, noise, x0),
           lambda: K.simulate_linear_numpy(lag, mix, noise, x0))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    if not K.HAS_NUMBA:
        print("numba is not importable; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    rows = []
    for name, jit_fn, np_fn in cases(rng):
        t_jit = _time(jit_fn, args.repeat)
        t_np = _time(np_fn, args.repeat)
        diff = float(np.max(np.abs(np.asarray(jit_fn()) - np.asarray(np_fn()))))
        rows.append({"kernel": name, "numba_s": t_jit, "numpy_s": t_np,
                     "speedup": t_np / t_jit, "max_abs_diff": diff})
    width = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':<{width}}  {'numba ms':>10}  {'numpy ms':>10}  {'speedup':>8}  {'max |diff|':>10}")
    for r in rows:
        print(f"{r['kernel']:<{width}}  {r['numba_s'] * 1e3:>10.3f}  {r['numpy_s'] * 1e3:>10.3f}  "
              f"{r['speedup']:>7.1f}x  {r['max_abs_diff']:>10.2e}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
