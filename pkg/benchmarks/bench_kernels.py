"""Compare the numba kernels with their pure-Python fallbacks.

    python3 benchmarks/bench_kernels.py [--dims 100] [--updates 200000]

The fallback runs in a child interpreter with RESLAT_DISABLE_NUMBA=1;
both sides do identical work on identical inputs.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from reslat import kernels
from reslat._jit import USE_NUMBA
from reslat.core import builtin_matrix
from reslat.lattice import init_product_measure, make_rng


def bench_lattice(fn, dims, n_updates, repeat):
    m = builtin_matrix("M9", theta=(0.6, 0.7, 0.8))
    best = np.inf
    for r in range(repeat):
        state = init_product_measure((dims, dims), [1 / 3] * 3, make_rng(0))
        rng = make_rng(1)
        sites = rng.integers(0, state.size, size=n_updates, dtype=np.int64)
        uniforms = rng.random(n_updates)
        counts = state.counts()
        t = time.perf_counter()
        fn(state.sites, m.entries, counts, sites, uniforms)
        best = min(best, time.perf_counter() - t)
    return best


def bench_rk4(fn, nsteps, repeat):
    a = builtin_matrix("M0").entries
    u0 = np.array([0.5, 0.3, 0.2])
    best = np.inf
    for _ in range(repeat):
        states = np.empty((nsteps + 1, 3))
        t = time.perf_counter()
        fn(a, u0, 0.01, nsteps, 0.0, states)
        best = min(best, time.perf_counter() - t)
    return best


def timings(args):
    # warm up compilation so it is not timed
    bench_lattice(kernels.lattice_updates_2d, 10, 100, 1)
    bench_rk4(kernels.rk4_integrate, 10, 1)
    return {
        "lattice_updates_2d": bench_lattice(kernels.lattice_updates_2d, args.dims,
                                            args.updates, args.repeat),
        "rk4_integrate": bench_rk4(kernels.rk4_integrate, args.steps, args.repeat),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dims", type=int, default=100)
    ap.add_argument("--updates", type=int, default=200_000)
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(timings(args)))
        return

    # the fallback needs a fresh interpreter since the flag is read at import
    env = dict(os.environ, RESLAT_DISABLE_NUMBA="1")
    cmd = [sys.executable, __file__, "--child", "--dims", str(args.dims),
           "--updates", str(args.updates), "--steps", str(args.steps), "--repeat", "1"]
    slow = json.loads(subprocess.run(cmd, env=env, check=True, capture_output=True,
                                     text=True).stdout)
    fast = timings(args)
    work = {"lattice_updates_2d": args.updates, "rk4_integrate": args.steps}
    print(f"numba enabled: {USE_NUMBA}")
    print(f"{'kernel':<20}{'work':>10}{'numba s':>12}{'python s':>12}{'speedup':>10}")
    for name in fast:
        print(f"{name:<20}{work[name]:>10}{fast[name]:>12.4f}{slow[name]:>12.4f}"
              f"{slow[name] / fast[name]:>10.1f}")


if __name__ == "__main__":
    main()
