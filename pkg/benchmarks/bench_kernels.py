"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N time of each implementation
and the speed-up.  Without the extension only the Python column is filled.
"""
import argparse
import timeit

import numpy as np

from lileymap import _pykernels as PY
from lileymap import kernels
from lileymap import model as M
from lileymap import solver as S


def cases(p, impl):
    c = M.pack_coefficients(p)
    x = S.solve_equilibrium(p)
    b = np.zeros(M.N_STATE)
    b[3] = 1e4
    normals = np.random.default_rng(0).standard_normal(20_000) * 1e-3
    return {
        "rhs (x1000)": lambda: [impl.rhs(x, c) for _ in range(1000)],
        "jac (x1000)": lambda: [impl.jac(x, c) for _ in range(1000)],
        "integrate 2000 steps": lambda: impl.integrate(x, c, 1e-5, 2000),
        "variational 500 steps": lambda: impl.integrate_variational(x, c, 1e-5, 500),
        "simulate_em 20000 steps": lambda: impl.simulate_em(x, c, 1e-5, b, normals, 10, 1e3),
    }


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    p = M.sample_parameters(1, 1)[0]
    py = cases(p, PY)
    comp = cases(p, kernels.compiled_kernels) if kernels.compiled_kernels else {}
    print(f"{'kernel':26s} {'python s':>10s} {'compiled s':>11s} {'speed-up':>9s}")
    for name, fn in py.items():
        tp = best(fn, args.repeat)
        if name in comp:
            tc = best(comp[name], args.repeat)
            print(f"{name:26s} {tp:10.4f} {tc:11.5f} {tp / tc:8.0f}x")
        else:
            print(f"{name:26s} {tp:10.4f} {'-':>11s} {'-':>9s}")


if __name__ == "__main__":
    main()
