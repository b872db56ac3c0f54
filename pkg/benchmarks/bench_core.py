"""Time the pure-Python and compiled kernels on the workloads the package runs.

    python benchmarks/bench_core.py [--repeat N]

Reports the best of N timings per kernel and backend, plus a full heuristic
episode with each backend swapped into the driver.
"""

import argparse
import time

import numpy as np

from obsp import core, heuristics
from obsp.heuristics import (BATCHING_RULES, MIO_BATCH_CAP, POSB_MAX, SEQUENCING_RULES,
                             SIO_BATCH_CAP)
from obsp.instance import ResourceConfig, generate_instance
from obsp.routes import TimingConfig, item_split


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def plan_workload(n=330, seed=0):
    inst = generate_instance("B", n, ResourceConfig(), seed)
    orders = sorted(inst.orders, key=lambda o: (o.cutoff_time, o.id))
    bt = np.array([o.base_type for o in orders], dtype=np.int64)
    items = np.array([o.items for o in orders], dtype=np.int64)
    split = np.array([item_split(o.base_type, o.items) for o in orders], dtype=np.int64)
    cutoff = np.array([o.cutoff_time for o in orders], dtype=np.float64)
    params = np.asarray(TimingConfig().kernel_params())
    return bt, items, split[:, 0].copy(), split[:, 1].copy(), cutoff, params


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = core.backends()
    if "cython" not in backends:
        print("compiled kernel not built; only the Python fallback is timed")

    bt, items, ptg, gtp, cutoff, params = plan_workload()
    rng = np.random.default_rng(0)
    rewards = rng.standard_normal(1025)
    dones = rng.random(1025) < 0.002
    inst = generate_instance("A", 300, ResourceConfig(5, 10, 1, 1, 1), 1)

    rows = []
    for name, mod in backends.items():
        t_plan = best_of(lambda: [mod.plan_units(bt, items, ptg, gtp, cutoff, 600.0, b, s, params,
                                                 SIO_BATCH_CAP, MIO_BATCH_CAP, POSB_MAX)
                                  for b in BATCHING_RULES.values()
                                  for s in SEQUENCING_RULES.values()], args.repeat) / 20
        t_ret = best_of(lambda: [mod.discounted_returns(rewards, dones, 0.9999, 0.0)
                                 for _ in range(100)], args.repeat) / 100
        saved = core.plan_units
        core.plan_units = mod.plan_units
        try:
            t_ep = best_of(lambda: heuristics.run_heuristic(inst, "LST+POSB", "LST"),
                           args.repeat)
        finally:
            core.plan_units = saved
        rows.append((name, t_plan, t_ret, t_ep))

    print(f"{'backend':<8} {'plan_units (330 orders)':>24} {'returns (T=1025)':>18} "
          f"{'heuristic episode':>18}")
    for name, a, b, c in rows:
        print(f"{name:<8} {a * 1e6:>21.1f} us {b * 1e6:>15.1f} us {c * 1e3:>15.1f} ms")
    if len(rows) == 2:
        (_, a0, b0, c0), (_, a1, b1, c1) = rows
        print(f"speed-up {a0 / a1:>23.1f}x {b0 / b1:>17.1f}x {c0 / c1:>17.1f}x")


if __name__ == "__main__":
    main()
