"""Compiled kernels vs the numpy fallback.

Times the three IPFP kernels and a full cold IPFP solve for each backend on
random surplus matrices, and checks that both backends agree.

    python3 benchmarks/bench_ipfp.py --sizes 500 2000 5000 --repeats 3
"""

import argparse
import time

import numpy as np

from lowrank_ot import _backend, ot_core
from lowrank_ot.ot_core import DiscreteMarginal, build_surplus, coupling_from, ipfp


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_size(n, d, repeats, rng):
    X, Y = rng.standard_normal((n, d)), rng.standard_normal((n, d))
    A = rng.standard_normal((d, d))
    A /= np.linalg.norm(A, 2)
    phi = build_surplus(X, Y, A)
    mu = DiscreteMarginal.uniform(n)
    K = phi.kernel()
    a, b = rng.standard_normal(n), rng.standard_normal(n)
    out, G = np.empty(n), np.empty((n, n))

    rows, masses = {}, {}
    for name in ("compiled", "python"):
        k = _backend.get_kernels(name)
        ot_core.kernels = k  # the solver looks the module up at call time
        rows[name] = {
            "lse_rows": best_of(lambda: k.lse_rows(K, b, out), repeats),
            "lse_cols": best_of(lambda: k.lse_cols(K, a, out), repeats),
            "gibbs": best_of(lambda: k.gibbs(K, a, b, G), repeats),
            "ipfp": best_of(lambda: ipfp(phi, mu, mu, tol=1e-9), repeats),
        }
        masses[name] = coupling_from(ipfp(phi, mu, mu, tol=1e-9), phi).mass
    ot_core.kernels = _backend.kernels
    diff = float(np.max(np.abs(masses["compiled"] - masses["python"])))
    return rows, diff


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[500, 2000, 5000])
    p.add_argument("--dim", type=int, default=6)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    try:
        _backend.get_kernels("compiled")
    except ImportError as exc:
        raise SystemExit(f"benchmark needs the compiled extension: {exc}")

    rng = np.random.default_rng(args.seed)
    print(f"{'N':>6} {'kernel':>9} {'compiled s':>11} {'python s':>10} {'speedup':>8}")
    for n in args.sizes:
        rows, diff = bench_size(n, args.dim, args.repeats, rng)
        for kernel in ("lse_rows", "lse_cols", "gibbs", "ipfp"):
            c, py = rows["compiled"][kernel], rows["python"][kernel]
            print(f"{n:>6} {kernel:>9} {c:>11.4f} {py:>10.4f} {py / c:>7.1f}x")
        print(f"{n:>6} max |coupling difference| between backends: {diff:.1e}")


if __name__ == "__main__":
    main()
