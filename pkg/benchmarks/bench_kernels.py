"""Compiled vs pure-Python kernels.

Times each hot loop in both backends on identical inputs and checks that
the results agree.  Run with ``python benchmarks/bench_kernels.py``; add
``--repeat N`` for more stable timings.
"""

import argparse
import time

import numpy as np

from curvlab import _pykernels
from curvlab.surface import bolza_generators

try:
    from curvlab import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(rng):
    h = 0.01
    n = 20_000
    kvals = -(1.0 + 0.3 * np.sin(np.linspace(0, 50, 2 * n + 1))) ** 2
    y0 = np.array([[1.0, 0.0], [0.0, 1.0]])
    gens = np.asarray(bolza_generators(), dtype=np.float64)
    g = np.empty((2000, 2, 2))
    for i in range(g.shape[0]):
        m = np.eye(2)
        for k in rng.integers(0, gens.shape[0], size=12):
            m = m @ gens[k]
        g[i] = m
    return {
        "jacobi_rk4": (kvals, h, y0),
        "riccati_rk4": (kvals, h, 1.0, 1e6),
        "revolution_orbit": (np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 0.6, 0.8]), h, 5000, -60.0, 60.0),
        "sl2_reduce": (g, gens, 200),
    }


def timed(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.allclose(a, b, rtol=1e-12, atol=1e-12, equal_nan=True)
    return a == b


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not available; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'python [s]':>12}{'cython [s]':>12}{'speed-up':>10}  agree")
    for name, args_ in cases(rng).items():
        tp, op = timed(getattr(_pykernels, name), args_, args.repeat)
        tc, oc = timed(getattr(_kernels, name), args_, args.repeat)
        print(f"{name:<18}{tp:>12.4f}{tc:>12.4f}{tp / tc:>10.1f}  {same(op, oc)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
