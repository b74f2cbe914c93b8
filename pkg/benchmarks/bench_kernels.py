"""Time the numba kernels against the pure-numpy/Python fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends are called explicitly, so the BRANCHWALK_DISABLE_NUMBA flag
does not matter here. Compilation happens in a warm-up call.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from branchwalk import genfun, kernels, mc, registry
from branchwalk._accel import HAVE_NUMBA


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    irr = registry.irreducible_n(N=2000)
    tree = registry.tree_edge(lam=0.3, radius=4000)
    cx3 = registry.counterexample3()
    z_irr = np.full(irr.n, 0.7)
    z_tree = np.full(tree.n, 0.7)
    yield "G apply, irreducible-N N=2000", lambda nb: genfun.apply_G(irr, z_irr, numba=nb)
    yield "G apply, tree radius 4000", lambda nb: genfun.apply_G(tree, z_tree, numba=nb)
    yield "global extinction, irreducible-N N=2000", \
        lambda nb: genfun.global_extinction(irr, policy="ghost-survive", numba=nb)
    yield "global extinction, tree radius 4000", \
        lambda nb: genfun.global_extinction(tree, policy="ghost-survive", numba=nb)
    tab = cx3.table()
    ina = np.zeros(3, dtype=bool)

    def reps(nb, model=registry.binary_bp(0.7)):
        cfg = mc.SimConfig(seed=1, replicates=2000, horizon=100, threads=1, numba=nb)
        return mc.simulate(model, 0, cfg)
    yield "2000 replicates, binary BP", reps
    yield "single replicate, counterexample3 (cap 1e5)", \
        lambda nb: kernels.replicate(mc.replicate_stream(0, 0), tab, 0, 200, 10**5, ina, 100,
                                     False, numba=nb)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; only the fallback can run")
    print(f"{'case':48s} {'numba [s]':>11s} {'numpy [s]':>11s} {'speedup':>8s}")
    for name, fn in cases():
        t_np = best_of(lambda: fn(False), args.repeat)
        if HAVE_NUMBA:
            t_nb = best_of(lambda: fn(True), args.repeat)
            print(f"{name:48s} {t_nb:11.5f} {t_np:11.5f} {t_np / t_nb:8.1f}")
        else:
            print(f"{name:48s} {'-':>11s} {t_np:11.5f} {'-':>8s}")


if __name__ == "__main__":
    main()
