"""Time the compiled and numpy EM backends on the 165-setting synthetic POVM.

    python3 benchmarks/bench_em.py [--iterations N] [--repeats R]

Prints seconds per run and per iteration for each available backend and
checks that both end at the same state.
"""
import argparse
import time

import numpy as np

from sspdtomo import kernels
from sspdtomo.simulator import DEFAULT_CURRENTS, SyntheticDetector
from sspdtomo.states import coherent_distribution


def bench(run, P, R, rho0, iterations, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        t = time.perf_counter()
        out = run(P, R, rho0, iterations, 1000, 0.0, True)
        best = min(best, time.perf_counter() - t)
    return best, out[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=20_000)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--n-mr", type=int, default=30)
    args = ap.parse_args()

    povm = SyntheticDetector().povm(DEFAULT_CURRENTS, args.n_mr)
    P = np.ascontiguousarray(povm.elements)
    R = povm.predict(coherent_distribution(2.5, args.n_mr))
    rho0 = np.full(args.n_mr + 1, 1.0 / (args.n_mr + 1))

    backends = [("python", kernels.em_run_python)]
    if kernels.em_run_compiled is not None:
        backends.append(("cython", kernels.em_run_compiled))
    else:
        print("compiled backend not built; timing numpy only")

    print(f"{P.shape[0]} settings x {P.shape[1]} photon numbers, {args.iterations} iterations")
    results = {}
    for name, run in backends:
        sec, rho = bench(run, P, R, rho0, args.iterations, args.repeats)
        results[name] = (sec, rho)
        print(f"{name:>7}: {sec:8.3f} s  ({1e6 * sec / args.iterations:.1f} s per 10^6 iterations)")
    if len(results) == 2:
        (tp, rp), (tc, rc) = results["python"], results["cython"]
        print(f"speedup: {tp / tc:.1f}x, max |rho difference| = {np.max(np.abs(rp - rc)):.1e}")


if __name__ == "__main__":
    main()
