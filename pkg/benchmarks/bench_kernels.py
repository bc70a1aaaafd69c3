"""Compare the compiled and pure-numpy time-stepping kernels.

Runs a fixed number of steps of the heterogeneous two-species problem on a
few grid sizes with each available backend and prints steps per second.
Both backends must produce bit-identical states; the script exits nonzero
if they do not.

Usage::

    python benchmarks/bench_kernels.py [--steps 2000] [--cells 64 256 1024] [--repeat 3]
"""
import argparse
import sys
import time

import numpy as np

from fitnessflow._kernels import BACKENDS
from fitnessflow.grid import Grid
from fitnessflow.model import ProblemData
from fitnessflow.solver import SolverConfig, _advance, _kernel_arrays

A2 = np.array([[2.0, 1.0], [1.0, 2.0]])


def problem(cells, dim):
    g = Grid.box((cells,) if dim == 1 else (cells, cells))
    x = g.centers()[0]
    m = np.stack([3 + np.sin(2 * np.pi * x), 3 + np.cos(2 * np.pi * x)])
    d = ProblemData.on_grid(g, A2, m)
    u0 = np.full((2,) + g.extents, 0.5)
    return g, d, u0


def time_backend(g, d, u0, cfg, backend, steps, repeat):
    best = np.inf
    final = None
    for _ in range(repeat):
        arrays = _kernel_arrays(d, g, u0)
        t0 = time.perf_counter()
        out = _advance(g, arrays, 0.0, cfg.t_end, steps, cfg, backend)
        best = min(best, time.perf_counter() - t0)
        final = arrays[0].copy()
        taken = out[1]
    return best, taken, final


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--cells", type=int, nargs="+", default=[64, 256, 1024])
    p.add_argument("--dim", type=int, choices=(1, 2), default=1)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    backends = [b for b in ("python", "cython") if b in BACKENDS]
    cfg = SolverConfig(t_end=1e6)
    print(f"{'cells':>8} {'backend':>8} {'steps':>7} {'seconds':>9} {'steps/s':>11} {'speedup':>8}")
    mismatch = False
    for cells in args.cells:
        g, d, u0 = problem(cells, args.dim)
        results = {}
        for b in backends:
            results[b] = time_backend(g, d, u0, cfg, b, args.steps, args.repeat)
        base = results["python"][0]
        for b in backends:
            sec, taken, _ = results[b]
            print(f"{g.n_cells:>8} {b:>8} {taken:>7} {sec:>9.4f} {taken / sec:>11.1f} {base / sec:>8.1f}")
        if len(backends) == 2 and not np.array_equal(results["python"][2], results["cython"][2]):
            print(f"  backends disagree at {g.n_cells} cells", file=sys.stderr)
            mismatch = True
    if len(backends) < 2:
        print("compiled kernel not available; only the numpy backend was timed", file=sys.stderr)
    return 1 if mismatch else 0


if __name__ == "__main__":
    sys.exit(main())
