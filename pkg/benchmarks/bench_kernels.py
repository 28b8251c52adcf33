"""Compiled vs numpy kernels: constitutive update, element assembly and
one end-to-end micro-solve per backend.

    python3 benchmarks/bench_kernels.py [--points 100000] [--repeat 5]

The kernel timings call both implementations in-process.  The end-to-end
runs start a fresh interpreter per backend so that HDMR_HOMOG_NUMBA takes
effect at import time.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from hdmr_homog import fem, materials as mat
from hdmr_homog._accel import HAVE_NUMBA

END_TO_END = """
import time, numpy as np
from hdmr_homog import micro, materials as mat, fem
cell = micro.inclusion_rve(micro.RveGrid(31, 31), mat.NeoHookeanB(100, 0.4), mat.NeoHookeanB(1000, 0.3))
F = np.array([[1.1, 0.15], [0.05, 0.95]])
micro.homogenize(cell, F)
t = time.perf_counter(); micro.homogenize(cell, F); a = time.perf_counter() - t
p = fem.cantilever(cells=(20, 5), elements_per_cell=(4, 4))
prov = fem.DirectProvider(p.mesh, mat.NeoHookeanB(100, 0.4))
u = np.zeros(p.mesh.n_dofs)
fem.assemble(p.mesh, p.bc, prov, u)
t = time.perf_counter(); fem.assemble(p.mesh, p.bc, prov, u); b = time.perf_counter() - t
print(a, b)
"""


def best_of(fn, repeat):
    fn()  # compile / warm caches
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=100_000)
    ap.add_argument("--elements", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    n = args.points
    F = np.eye(2) + rng.uniform(-0.2, 0.2, (n, 2, 2))
    m1, m2 = mat.NeoHookeanA(100.0, 1.0), mat.NeoHookeanB(1000.0, 0.3)
    kind, p1, p2 = mat.parameter_arrays([m1, m2], rng.integers(0, 2, n))

    rows = []
    for label, tangent in (("constitutive, stress only", False), ("constitutive, with tangent", True)):
        t_nb = best_of(lambda: mat._constitutive_numba(kind, p1, p2, F, tangent), args.repeat)
        t_np = best_of(lambda: mat._constitutive_numpy(kind, p1, p2, F, tangent), args.repeat)
        rows.append((f"{label} ({n} points)", t_nb, t_np))

    ne = args.elements
    dNdX = rng.normal(size=(ne, 4, 4, 2))
    w = rng.uniform(0.1, 1.0, (ne, 4))
    P = rng.normal(size=(ne * 4, 2, 2))
    C = rng.normal(size=(ne * 4, 2, 2, 2, 2))
    t_nb = best_of(lambda: fem._element_arrays_numba(dNdX, w, P, C, True), args.repeat)
    t_np = best_of(lambda: fem._element_arrays_numpy(dNdX, w, P, C, True), args.repeat)
    rows.append((f"element force + stiffness ({ne} elements)", t_nb, t_np))

    if not args.skip_end_to_end:
        res = {}
        for flag in ("1", "0"):
            env = dict(os.environ, HDMR_HOMOG_NUMBA=flag)
            out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, check=True,
                                 capture_output=True, text=True).stdout.split()
            res[flag] = [float(v) for v in out]
        rows.append(("micro-solve, inclusion cell 31x31", res["1"][0], res["0"][0]))
        rows.append(("macro assembly, cantilever 80x20", res["1"][1], res["0"][1]))

    print(f"{'kernel':<48} {'numba [s]':>11} {'numpy [s]':>11} {'speed-up':>9}")
    for label, a, b in rows:
        print(f"{label:<48} {a:11.4f} {b:11.4f} {b / a:9.2f}")


if __name__ == "__main__":
    main()
