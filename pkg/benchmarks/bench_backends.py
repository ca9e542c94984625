"""Compare the compiled and pure-numpy backends.

Times the ensemble simulator and the tridiagonal solver used by the PDE
oracle under both backends, and checks that the two simulator backends give
identical counts. Compilation is excluded by a warm-up call.

    python benchmarks/bench_backends.py --replicas 2000
"""

import argparse
import time

import numpy as np

from bbmkit import _accel, make_potential
from bbmkit.pde import PdeProblem, solve_rho_bar
from bbmkit.sim import SimConfig, run_ensemble


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--replicas", type=int, default=2000)
    ap.add_argument("--beta", type=float, default=5.0)
    ap.add_argument("--t-end", type=float, default=5.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    p = make_potential({"dim": 3, "shape": "bump", "radius": 1.0, "height": 1.0})
    cps = (1.0, 2.0, args.t_end)
    # a counting region forces step-by-step thinning everywhere (no exterior jumps)
    cases = {
        "simulate": SimConfig(p, args.beta, args.t_end, cps, replicas=args.replicas, seed=0),
        "simulate+U": SimConfig(p, args.beta, args.t_end, cps, replicas=args.replicas, seed=0,
                                count_region=((0.0, 0.0, 0.0), 2.0)),
    }
    pde = PdeProblem(p, args.beta, 4.0, h=0.01, dt=0.0025, n_max=2)

    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    results = {}
    for name in backends:
        _accel.set_backend(name)
        run_ensemble(SimConfig(p, args.beta, 1.0, replicas=4, seed=0))   # warm-up
        solve_rho_bar(PdeProblem(p, args.beta, 0.01, h=0.1, dt=0.005, n_max=2))
        row = {}
        for label, cfg in cases.items():
            row[label] = best_of(lambda: run_ensemble(cfg), args.repeat)
        row["pde"] = best_of(lambda: solve_rho_bar(pde), args.repeat)
        results[name] = row
        print(f"{name:>6}: " + "   ".join(f"{k} {v[0]:7.3f} s" for k, v in row.items()))

    if len(results) == 2:
        a, b = results["numpy"], results["numba"]
        for k in a:
            line = f"{k:>11}: numba speedup x{a[k][0] / b[k][0]:.1f}"
            if k != "pde":
                line += f", identical counts: {np.array_equal(a[k][1].counts, b[k][1].counts)}"
            print(line)


if __name__ == "__main__":
    main()
