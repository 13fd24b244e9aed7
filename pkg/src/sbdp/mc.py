"""Parallel Monte Carlo over independent runs with reproducible substreams.

Run ``i`` of an experiment seeded with ``seed`` always receives the stream
derived from ``(seed, i)``.  Results are collected in run order and reduced
with numpy's pairwise summation, so estimates do not depend on the number
of workers or on scheduling.
"""
from __future__ import annotations

import math
import multiprocessing
import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .rng import Stream, substream


@dataclass
class MCEstimate:
    mean: float
    std_error: float
    runs: int
    extra: dict = field(default_factory=dict)

    @property
    def se_defined(self) -> bool:
        return self.runs > 1

    def z_score(self, target: float) -> float:
        if not self.std_error > 0:
            return 0.0 if self.mean == target else math.copysign(math.inf, self.mean - target)
        return (self.mean - target) / self.std_error

    def __str__(self) -> str:
        se = f"{self.std_error:.6g}" if self.se_defined else "undefined (runs=1)"
        return f"{self.mean:.6g} +/- {se} (runs={self.runs})"


def estimate(values: Sequence[float], bernoulli: bool = False, **extra) -> MCEstimate:
    """Mean and standard error of per-run values.

    With ``bernoulli`` the SE is sqrt(p(1 - p)/n); otherwise the sample
    standard deviation over sqrt(n).  For a single run the SE is NaN and
    flagged in ``extra``.
    """
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    if n == 0:
        raise ValueError("no runs")
    mean = float(np.sum(x) / n)
    if n == 1:
        return MCEstimate(mean, math.nan, 1, {"se_undefined": True, **extra})
    if bernoulli:
        se = math.sqrt(max(mean * (1.0 - mean), 0.0) / n)
    else:
        dev = x - mean
        se = math.sqrt(float(np.sum(dev * dev)) / (n - 1) / n)
    return MCEstimate(mean, se, n, dict(extra))


class RunFailure(RuntimeError):
    def __init__(self, run_index: int, seed: int, cause: BaseException):
        self.run_index = run_index
        self.seed = seed
        self.cause = cause
        super().__init__(
            f"run {run_index} failed (substream seed={seed}, run_index={run_index}): "
            f"{type(cause).__name__}: {cause}")

    def __reduce__(self):
        # crosses the process boundary; replace causes that cannot be pickled
        cause = self.cause
        try:
            pickle.dumps(cause)
        except Exception:
            cause = RuntimeError(f"{type(cause).__name__}: {cause}")
        return (RunFailure, (self.run_index, self.seed, cause))


# worker-side globals; set by the pool initializer (inherited, not pickled, under fork)
_RUN_FN: Callable | None = None
_SEED: int = 0


def _init_worker(run_fn, seed):
    global _RUN_FN, _SEED
    _RUN_FN = run_fn
    _SEED = seed


def _run_one(run_fn, seed, i):
    try:
        return run_fn(i, Stream(substream(seed, i)))
    except Exception as exc:  # re-raised with replay coordinates
        raise RunFailure(i, seed, exc) from exc


def _run_chunk(bounds):
    lo, hi = bounds
    return [_run_one(_RUN_FN, _SEED, i) for i in range(lo, hi)]


def _chunks(runs: int, workers: int) -> list[tuple[int, int]]:
    size = max(1, min(1024, math.ceil(runs / (4 * workers))))
    return [(lo, min(lo + size, runs)) for lo in range(0, runs, size)]


def map_runs(run_fn: Callable[[int, Stream], Any], runs: int, seed: int, workers: int = 1) -> list:
    """Evaluate ``run_fn(i, stream_i)`` for i = 0..runs-1, results in run order."""
    if runs < 0:
        raise ValueError("runs must be nonnegative")
    seed = int(seed)
    if workers <= 1 or runs <= 1:
        return [_run_one(run_fn, seed, i) for i in range(runs)]
    try:
        ctx = multiprocessing.get_context("fork")
    except ValueError:  # pragma: no cover - platforms without fork
        return [_run_one(run_fn, seed, i) for i in range(runs)]
    out: list = []
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_init_worker,
                             initargs=(run_fn, seed)) as pool:
        for part in pool.map(_run_chunk, _chunks(runs, workers)):
            out.extend(part)
    return out


def mc_parallel(run_fn: Callable[[int, Stream], float], runs: int, seed: int, workers: int = 1,
                bernoulli: bool = False) -> MCEstimate:
    """Monte Carlo estimate of E[run_fn], identical for any worker count."""
    values = map_runs(run_fn, runs, seed, workers)
    return estimate([float(v) for v in values], bernoulli=bernoulli)
