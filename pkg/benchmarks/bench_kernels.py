#!/usr/bin/env python3
"""Compare the compiled and numpy cost kernels on the design grid.

Times ``quadratic_costs`` from both backends on the same batch of
closed-loop systems and reports the maximum relative difference in ``J``.

Usage::

    python benchmarks/bench_kernels.py --points 200 --repeats 3
"""

import argparse
import statistics
import time

import numpy as np

from mftune import _cost_py, hri
from mftune.bayesopt import DesignGrid


def _batch(points: int, seed: int):
    X = DesignGrid.standard().points
    rng = np.random.default_rng(seed)
    if points < len(X):
        X = X[np.sort(rng.choice(len(X), points, replace=False))]
    plant = hri.build_plant(2, hri.OperatorGains(10.0, 20.0), d=hri.default_disturbance())
    Ks = hri.build_controllers(X, plant.n)
    A_cl = plant.A[None] - plant.B[None] @ Ks
    W = plant.Q[None] + np.transpose(Ks, (0, 2, 1)) @ plant.R[None] @ Ks
    return A_cl, W, plant.Z0, plant.d


def _time(fn, args, repeats):
    times, out = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=200, help="grid points per batch (max 1331)")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--horizon", type=float, default=hri.DEFAULT_HORIZON)
    ap.add_argument("--step", type=float, default=hri.DEFAULT_STEP)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    A_cl, W, Z0, d = _batch(args.points, args.seed)
    call = (A_cl, W, Z0, d, args.horizon, args.step)
    rows = [("python", _cost_py.quadratic_costs)]
    try:
        from mftune._cost import quadratic_costs as compiled

        rows.insert(0, ("cython", compiled))
    except ImportError:
        print("compiled backend not built; timing the numpy fallback only")

    results = {}
    for name, fn in rows:
        t, (J, div) = _time(fn, call, args.repeats)
        results[name] = (t, J, div)
        print(f"{name:>7}: {t:8.3f} s for {len(J)} systems ({1e3 * t / len(J):.2f} ms each)")

    if len(results) == 2:
        (tc, Jc, dc), (tp, Jp, dp) = results["cython"], results["python"]
        rel = np.max(np.abs(Jc - Jp) / np.maximum(np.abs(Jp), 1e-300))
        print(f"speed-up {tp / tc:.1f}x; max relative |dJ| {rel:.2e}; "
              f"divergence flags agree: {bool(np.array_equal(dc, dp))}")


if __name__ == "__main__":
    main()
