"""Dynkin-residual checks of simulated trajectories against the generator.

For a bounded-increment functional F,

    LF(eta) = int b(x, eta) [F(eta + x) - F(eta)] dx
              + sum_{x in eta} d(x, eta) [F(eta - x) - F(eta)],

and F(eta_T) - F(eta_0) - int_0^T LF(eta_s) ds has mean zero.  The birth
integral is estimated by drawing locations from the model's own birth
sampler; the death sum is exact.
"""
from __future__ import annotations

import math
from math import erf, sqrt
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import Configuration, RateModel, Region
from .engine import simulate
from .mc import MCEstimate, estimate, map_runs
from .rng import Stream, substream


@dataclass
class CylindricalFunctional:
    """F(eta) depending only on eta inside the ball of radius ``radius``.

    ``cap`` bounds |F(eta + x) - F(eta)|.  ``add_delta(eta, x)`` and
    ``remove_delta(eta, pid)`` are optional fast paths for the increments.
    """

    radius: float
    cap: float
    evaluator: Callable[[Configuration], float]
    add_delta: Callable | None = None
    remove_delta: Callable | None = None

    def __post_init__(self):
        if not self.radius > 0 or not self.cap > 0:
            raise ValueError("radius and cap must be positive")

    def __call__(self, eta: Configuration) -> float:
        return float(self.evaluator(eta))

    def delta_add(self, eta: Configuration, x) -> float:
        if self.add_delta is not None:
            return float(self.add_delta(eta, x))
        bigger = eta.copy()
        bigger.add(x)
        return self(bigger) - self(eta)

    def delta_remove(self, eta: Configuration, pid: int) -> float:
        if self.remove_delta is not None:
            return float(self.remove_delta(eta, pid))
        smaller = eta.copy()
        smaller.remove(pid)
        return self(smaller) - self(eta)


def _enclosing_radius(region: Region) -> float:
    lo, hi = region.bounding_box()
    return float(np.sqrt(np.sum(np.maximum(np.abs(lo), np.abs(hi)) ** 2)))


def capped_count(region: Region, M: float) -> CylindricalFunctional:
    """F(eta) = min(|eta cap region|, M)."""
    if M < 1:
        raise ValueError("cap must be at least 1")

    def count(eta):
        return sum(1 for p in eta.points() if region.contains(p))

    def value(eta):
        return min(count(eta), M)

    def add(eta, x):
        if not region.contains(x):
            return 0.0
        n = count(eta)
        return min(n + 1, M) - min(n, M)

    def remove(eta, pid):
        if not region.contains(eta[pid]):
            return 0.0
        n = count(eta)
        return min(n - 1, M) - min(n, M)

    return CylindricalFunctional(max(_enclosing_radius(region), 1e-12), float(M), value, add, remove)


def generator_apply_estimate(model: RateModel, F: CylindricalFunctional, t: float,
                             eta: Configuration, k: int, rng, *, birth_scale: float = 1.0) -> float:
    """Unbiased estimate of LF(eta) at time t.

    Birth term: birth_mass times the mean of k sampled increments.  Death
    term: exact sum.  ``birth_scale`` multiplies the birth term and exists
    only to build deliberately wrong compensators for testing the harness.
    """
    birth, death = _terms(model, F, t, eta, k, Stream.coerce(rng))
    return birth_scale * birth + death


def _terms(model, F, t, eta, k, stream):
    if k < 1:
        raise ValueError("k must be >= 1")
    B = model.birth_mass(t, eta)
    birth = 0.0
    if B > 0:
        incs = [F.delta_add(eta, model.sample_birth(t, eta, stream)) for _ in range(k)]
        birth = B * math.fsum(incs) / k
    death = math.fsum(model.death_rate(pid, t, eta) * F.delta_remove(eta, pid) for pid in eta.ids())
    return birth, death


def dynkin_residual_run(model: RateModel, F: CylindricalFunctional, alpha: Configuration, T: float,
                        stream: Stream, aux: Stream, *, k: int = 8,
                        birth_scales: tuple = (1.0,), backend: str | None = None) -> list[float]:
    """Residuals of one trajectory, one per compensator ``birth_scale``."""
    if not model.time_homogeneous:
        raise ValueError("the Dynkin check needs a time-homogeneous model")
    tr = simulate(model, alpha, T, stream, backend=backend)
    eta = alpha.copy()
    f0 = F(eta)
    integrals = [[] for _ in birth_scales]
    t = 0.0
    for i in range(len(tr) + 1):
        t_next = float(tr.times[i]) if i < len(tr) else T
        dt = t_next - t
        if dt > 0:
            birth, death = _terms(model, F, t, eta, k, aux)
            for acc, s in zip(integrals, birth_scales):
                acc.append((s * birth + death) * dt)
        if i < len(tr):
            pid = int(tr.ids[i])
            if tr.kinds[i] == 0:
                eta.insert(pid, tr.coords[i].tolist())
            else:
                eta.remove(pid)
            t = t_next
    fT = F(eta)
    return [fT - f0 - math.fsum(acc) for acc in integrals]


def dynkin_residual(model: RateModel, F: CylindricalFunctional, alpha: Configuration, T: float,
                    runs: int, seed: int, *, k: int = 8, workers: int = 1,
                    birth_scale: float = 1.0, backend: str | None = None) -> MCEstimate:
    """Mean Dynkin residual over independent runs; zero in expectation for a correct simulator.

    ``birth_scale != 1`` corrupts the compensator's birth term (mutation test).
    """
    res = dynkin_residuals(model, F, alpha, T, runs, seed, k=k, workers=workers,
                           birth_scales=(birth_scale,), backend=backend)
    return res[0]


def dynkin_residuals(model, F, alpha, T, runs, seed, *, k=8, workers=1, birth_scales=(1.0,),
                     backend=None) -> list[MCEstimate]:
    """Like :func:`dynkin_residual` for several compensators on the same trajectories."""

    def one(i, stream):
        aux = Stream(substream(seed, i, 1))
        return dynkin_residual_run(model, F, alpha, T, stream, aux, k=k, birth_scales=birth_scales,
                                   backend=backend)

    rows = np.array(map_runs(one, runs, seed, workers), dtype=np.float64).reshape(runs, len(birth_scales))
    out = []
    for j, s in enumerate(birth_scales):
        est = estimate(rows[:, j], birth_scale=s)
        est.extra["z"] = est.z_score(0.0) if est.se_defined else math.nan
        out.append(est)
    return out


def detection_power(z: float, threshold: float = 3.0) -> float:
    """P(|Z + z| > threshold) for standard normal Z: power of the |mean| > 3 SE test."""
    def cdf(x):
        return 0.5 * (1.0 + erf(x / sqrt(2.0)))

    return cdf(-threshold - z) + 1.0 - cdf(threshold - z)
