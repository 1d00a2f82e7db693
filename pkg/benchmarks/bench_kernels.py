"""Compiled vs pure-Python pair-sum kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Times the full-box energy, the C_Omega energy and the interior gradient
(plain and smoothed) on a few grids, and reports the speedup together
with the largest disagreement between the two backends.
"""

import argparse
import json
import timeit

import numpy as np

from doublephase import kernels
from doublephase.geometry import Grid
from doublephase.kernel_energy import Coefficient, Exponents, NonlocalEnergy

CASES = [
    # dim, n, (p, q, s, s')
    (1, 64, (2.0, 2.5, 0.5, 0.5)),
    (1, 256, (2.0, 2.5, 0.5, 0.5)),
    (2, 12, (1.2, 1.404, 0.3, 0.3)),
    (2, 20, (2.0, 2.5, 0.5, 0.5)),
]


def _ops(op, u):
    g = op.grid
    every = np.arange(g.n_cells)
    return {
        "energy": lambda b: op_energy(op, u, every, b),
        "energy_c_omega": lambda b: kernels.c_omega_energy(
            u, op.kp, op.kq, op.exp.p, op.exp.q, g.interior, backend=b),
        "gradient": lambda b: kernels.pair_gradient(
            u, op.kp, op.kq, op.exp.p, op.exp.q, g.interior_idx, backend=b),
        "gradient_smoothed": lambda b: kernels.pair_gradient(
            u, op.kp, op.kq, op.exp.p, op.exp.q, g.interior_idx, backend=b, eps=1e-3),
    }


def op_energy(op, u, idx, backend):
    return kernels.pair_energy(u, op.kp, op.kq, op.exp.p, op.exp.q, idx, idx, backend=backend)


def run(repeat):
    rows = []
    rng = np.random.default_rng(0)
    for dim, n, (p, q, s, s2) in CASES:
        g = Grid.build(dim, 1.0, n, 0.75, 0.01, 1)
        op = NonlocalEnergy(g, Exponents(dim, p, q, s, s2), Coefficient("constant", 1.0))
        u = rng.normal(size=g.n_cells)
        for name, f in _ops(op, u).items():
            t = {}
            vals = {}
            for b in kernels.available_backends():
                vals[b] = np.atleast_1d(f(b))
                number = 3 if b == "python" else 20
                t[b] = min(timeit.repeat(lambda: f(b), number=number, repeat=repeat)) / number
            diff = 0.0
            if len(vals) == 2:
                a, c = vals["cython"], vals["python"]
                diff = float(np.max(np.abs(a - c)) / max(np.max(np.abs(c)), 1e-300))
            rows.append({
                "case": f"{dim}D n={n}", "cells": g.n_cells, "op": name,
                "python_ms": 1e3 * t["python"],
                "cython_ms": 1e3 * t.get("cython", float("nan")),
                "speedup": t["python"] / t["cython"] if "cython" in t else float("nan"),
                "max_rel_diff": diff,
            })
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the rows as JSON")
    args = ap.parse_args()
    if "cython" not in kernels.available_backends():
        print("compiled kernels not built; timing the fallback only")
    rows = run(args.repeat)
    print(f"{'case':<10} {'cells':>6} {'op':<18} {'python ms':>10} {'cython ms':>10} "
          f"{'speedup':>8} {'max rel diff':>13}")
    for r in rows:
        print(f"{r['case']:<10} {r['cells']:>6} {r['op']:<18} {r['python_ms']:>10.3f} "
              f"{r['cython_ms']:>10.3f} {r['speedup']:>8.1f} {r['max_rel_diff']:>13.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
