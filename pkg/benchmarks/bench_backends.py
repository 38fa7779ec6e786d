"""Time the numba and pure-numpy kernels on the same workloads.

    python3 benchmarks/bench_backends.py [--repeat 3] [--json out.json]

Each workload runs once untimed (numba compilation) and then ``--repeat`` times;
the best wall time is reported.  Both backends get identical inputs, but the
numpy path consumes random numbers in a different order, so only the kernels'
statistics agree, not their bits.
"""
import argparse
import json
import time

import numpy as np

from twospeed import fkpp
from twospeed._backend import HAVE_NUMBA
from twospeed.engine import RngStream, simulate_conditioned, simulate_standard, simulate_two_speed
from twospeed.model import CANONICAL_BELOW, BarrierSpec, SimulationPlan


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(backend):
    plan = SimulationPlan(t=9.0, profile=CANONICAL_BELOW, barrier=BarrierSpec(2.0, 2.0))
    return {
        "standard BBM t=8 (x20)":
            lambda: [simulate_standard(8.0, rng=RngStream(1, i), backend=backend)
                     for i in range(20)],
        "two-speed BELOW t=9, barrier (x20)":
            lambda: [simulate_two_speed(plan, RngStream(2, i), backend=backend)
                     for i in range(20)],
        "conditioned t=4, level a t (x20)":
            lambda: [simulate_conditioned(4.0, 0.5858 * 4.0, rng=RngStream(3, i), barrier=3.0,
                                          backend=backend) for i in range(20)],
        "F-KPP Heaviside to t=10":
            lambda: fkpp.solve(10.0, backend=backend),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", metavar="PATH")
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    results = {}
    for b in backends:
        for name, fn in workloads(b).items():
            results.setdefault(name, {})[b] = _best(fn, args.repeat)
    print(f"{'workload':40s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name, row in results.items():
        speed = row["numpy"] / row["numba"] if "numba" in row else np.nan
        print(f"{name:40s}" + "".join(f"{row[b]:11.3f}s" for b in backends) + f"  {speed:9.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
