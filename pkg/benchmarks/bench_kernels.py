"""Time the shallow-water forward and adjoint sweeps with each kernel set.

Usage::

    python3 benchmarks/bench_kernels.py [--n 15] [--steps 90] [--repeat 5]

Prints the best-of-``repeat`` wall time per sweep for the numpy and, when
installed, numba kernels, plus the largest state difference between them.
"""
import argparse
import time

import numpy as np

from rohmc.models import ShallowWaterModel
from rohmc.models._kernels import BACKEND


def best_time(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=15, help="grid points per side")
    ap.add_argument("--steps", type=int, default=90, help="time steps per sweep")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    kernels = ["numpy"] + (["numba"] if BACKEND == "numba" else [])
    lam = np.random.default_rng(0).standard_normal(3 * args.n * args.n)
    results = {}
    for k in kernels:
        m = ShallowWaterModel(nx=args.n, ny=args.n, kernels=k)
        x0 = m.balanced_state()
        fwd = best_time(lambda: m.trajectory(x0, args.steps), args.repeat)
        adj = best_time(lambda: m.adjoint(x0, lam, args.steps), args.repeat)
        results[k] = (fwd, adj, m.trajectory(x0, args.steps)[-1], m.adjoint(x0, lam, args.steps))
        print(f"{k:6s} forward {fwd * 1e3:8.2f} ms   adjoint {adj * 1e3:8.2f} ms")
    if len(results) == 2:
        a, b = results["numpy"], results["numba"]
        print(f"speedup forward {a[0] / b[0]:.1f}x   adjoint {a[1] / b[1]:.1f}x")
        print(f"max |numpy - numba|: state {np.max(np.abs(a[2] - b[2])):.1e}, "
              f"adjoint {np.max(np.abs(a[3] - b[3])):.1e}")
    else:
        print("numba not available or disabled; numpy kernels only")


if __name__ == "__main__":
    main()
