"""Compiled vs pure-Python event loop on the bundled model family.

    python3 benchmarks/bench_kernels.py [--runs N] [--horizon T]

Both backends consume the same streams, so each case also checks that
their trajectories agree exactly.
"""
import argparse
import math
import time

import numpy as np

from sbdp import (AggregationModel, AggregationParams, Box, ComparisonModel, Configuration, ConstantRateModel,
                  StepKernel, comparison_model, simulate, simulate_coupled)
from sbdp import kernels
from sbdp.coupling import nested_initial

UNIT = Box((0.0, 0.0), (1.0, 1.0))
PARAMS = AggregationParams(StepKernel(math.log(3.0)), 2.0, 1.0, UNIT, True)


def _single(model, alpha, horizon):
    def go(seed, backend):
        return simulate(model, alpha, horizon, seed, backend=backend)
    return go


def _coupled(horizon):
    a2 = Configuration(2, [(0.5, 0.5), (0.25, 0.75), (1.5, 0.5)])
    a1 = nested_initial(a2, UNIT)
    lower, upper = comparison_model(PARAMS), AggregationModel(PARAMS)

    def go(seed, backend):
        return simulate_coupled(lower, upper, a1, a2, horizon, seed, backend=backend)[1]
    return go


def _time(fn, runs, backend):
    events = 0
    out = []
    t0 = time.perf_counter()
    for seed in range(runs):
        tr = fn(seed, backend)
        events += len(tr)
        out.append(tr)
    return time.perf_counter() - t0, events, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--horizon", type=float, default=8.0)
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        raise SystemExit("compiled kernel not built; run: pip install -e . --no-build-isolation")
    one = Configuration(2, [(0.5, 0.5)])
    cases = [
        ("constant rates", _single(ConstantRateModel(UNIT, 1.5, 0.5), one, args.horizon)),
        ("comparison", _single(ComparisonModel(UNIT, 2.0, 1.0), one, args.horizon)),
        ("aggregation", _single(AggregationModel(PARAMS), Configuration(2, [(0.5, 0.5), (0.2, 0.2)]),
                                args.horizon)),
        ("coupled pair", _coupled(args.horizon)),
    ]
    print(f"{'case':<16}{'events':>10}{'python s':>11}{'cython s':>11}{'speedup':>9}  identical")
    for name, fn in cases:
        tp, ev, a = _time(fn, args.runs, "python")
        tc, _, b = _time(fn, args.runs, "cython")
        same = all(np.array_equal(x.times, y.times) and np.array_equal(x.coords, y.coords) for x, y in zip(a, b))
        print(f"{name:<16}{ev:>10}{tp:>11.3f}{tc:>11.3f}{tp / tc:>8.1f}x  {same}")


if __name__ == "__main__":
    main()
