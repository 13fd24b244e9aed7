"""Closed forms and Monte Carlo estimators for the aggregation model.

The population of the aggregation model inside the region is bounded below
by the birth-death chain on Z+ that steps up with probability
c / (c + a^-i) and down with a^-i / (c + a^-i) from state i >= 1, with 0
absorbing.  Everything here is about that chain and about the comparison
model whose region population it is exactly.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chains import SeriesResult, birth_death_kernel, series_extinction
from .config import Configuration, Region, RateModel, restrict_count
from .engine import Trajectory, simulate
from .mc import MCEstimate, estimate, map_runs
from .rng import Stream


@dataclass(frozen=True)
class ChainParams:
    c: float
    a: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"c must be positive (got {self.c})")
        if not self.a > 1:
            raise ValueError(f"a must exceed 1 (got {self.a})")


def chain_transition(i: int, params: ChainParams) -> tuple[float, float]:
    """(p_up, p_down) from state i >= 1."""
    if i < 1:
        raise ValueError("state 0 is absorbing; transitions are defined for i >= 1")
    d = params.a ** (-i)
    den = params.c + d
    return params.c / den, d / den


def log_rho(j: int, params: ChainParams, s: int = 0) -> float:
    """log rho_j(s) = -(j - s) log c - (j - s)(j + s + 1)/2 log a."""
    k = j - s
    return -k * math.log(params.c) - 0.5 * k * (j + s + 1) * math.log(params.a)


def rho(j: int, params: ChainParams) -> float:
    if j < 1:
        raise ValueError("rho is defined for j >= 1")
    # direct powers keep exact values such as 2^-6; fall back to logs on over/underflow
    try:
        r = params.c ** (-j) * params.a ** (-0.5 * j * (j + 1))
    except OverflowError:
        r = math.inf
    if math.isfinite(r) and r >= sys.float_info.min:
        return r
    return math.exp(log_rho(j, params))


def _hitting_series(q: int, s: int, params: ChainParams) -> SeriesResult:
    if not q > s >= 0:
        raise ValueError(f"need q > s >= 0 (got q={q}, s={s})")
    return series_extinction(lambda j: log_rho(j, params, s), q, start=s + 1)


def log_hitting_probability(q: int, s: int, params: ChainParams) -> float:
    return _hitting_series(q, s, params).log_p


def hitting_probability(q: int, s: int, params: ChainParams) -> float:
    """Probability that the chain started at q ever visits s < q."""
    return _hitting_series(q, s, params).p


def log_extinction_probability(q: int, params: ChainParams) -> float:
    return log_hitting_probability(q, 0, params)


def extinction_probability(q: int, params: ChainParams) -> float:
    """p_q = sum_{j>=q} rho_j / (1 + sum_{j>=1} rho_j): the chain from q hits 0."""
    if q < 1:
        raise ValueError("q must be >= 1")
    return hitting_probability(q, 0, params)


@dataclass
class DecayThreshold:
    base: float
    m0_bound: int | None      # from the tail bound sum_{j>=m} rho_j <= rho_m / (1 - r_m)
    m0_observed: int | None   # smallest m with log p_k <= -k log base for all k in [m, m_max]
    m_max: int
    margins: list             # -k log base - log p_k for k = 1..m_max


def decay_threshold(params: ChainParams, base: float = 2.0, m_max: int = 50) -> DecayThreshold:
    """Find m0 with p_m <= base^-m for every m >= m0.

    ``m0_bound`` is analytic: for m >= m0_bound the geometric tail bound on
    the numerator already lies below base^-m and keeps doing so (the gap is
    quadratic in m).  ``m0_observed`` uses the exact series up to ``m_max``.
    """
    if base <= 1:
        raise ValueError("base must exceed 1")
    lb = math.log(base)
    la = math.log(params.a)
    lc = math.log(params.c)
    m0_bound = None
    for m in range(1, 10_000):
        r = math.exp(-lc - (m + 1) * la)
        if r >= 1:
            continue
        # g(m) = log rho_m - log(1 - r_m) + m log base, increments decrease past the vertex
        g = log_rho(m, params) - math.log1p(-r) + m * lb
        vertex = (lb - lc) / la - 1.0
        if g <= 0 and m >= vertex:
            m0_bound = m
            break
    margins = []
    for k in range(1, m_max + 1):
        margins.append(-k * lb - log_extinction_probability(k, params))
    m0_observed = None
    for m in range(m_max, 0, -1):
        if margins[m - 1] >= 0:
            m0_observed = m
        else:
            break
    return DecayThreshold(base, m0_bound, m0_observed, m_max, margins)


def chain_kernel(params: ChainParams, n_states: int):
    """Truncated comparison chain on 0..n_states-1 as a FiniteKernel."""
    return birth_death_kernel(lambda i: chain_transition(i, params)[0], n_states)


# --------------------------------------------------------------------------
# Monte Carlo


def _stop_for_bias(params: ChainParams, bias_tol: float) -> int:
    k = 1
    while log_extinction_probability(k, params) > math.log(bias_tol):
        k += 1
    return k


def estimate_extinction_mc(model: RateModel, alpha: Configuration, region: Region, runs: int,
                           T: float, seed: int, *, workers: int = 1, stop_count: int | None = None,
                           bias_tol: float = 1e-6, backend: str | None = None) -> MCEstimate:
    """Fraction of runs with an empty configuration at some time <= T.

    When the model supplies comparison-chain parameters, runs are cut short
    once |eta cap region| reaches ``stop_count`` (by default the smallest k
    with p_k <= ``bias_tol``).  ``extra["bias_bound"]`` bounds
    P(extinct eventually) - P(counted extinct): the mean over non-extinct
    runs of p_{|eta cap region|} at the end of the run.
    """
    params = model.chain_params()
    if stop_count is None and params is not None:
        stop_count = _stop_for_bias(params, bias_tol)
    if len(alpha) == 0:
        return estimate([1.0] * runs, bernoulli=True, bias_bound=0.0, stopped=0,
                        stop_count=stop_count)

    def one(i, stream):
        tr = simulate(model, alpha, T, stream, stop_count=stop_count, stop_region=region,
                      backend=backend)
        n_end = int(tr.counts()[-1]) if len(tr) else len(alpha)
        if n_end == 0:
            return 1.0, 0.0, 0.0
        bias = 0.0
        if params is not None:
            n_in = tr.count_at(tr.t_end, region) if len(tr) else restrict_count(alpha, region)
            bias = 1.0 if n_in == 0 else extinction_probability(n_in, params)
        return 0.0, bias, 1.0 if tr.status == "stopped" else 0.0

    res = np.array(map_runs(one, runs, seed, workers), dtype=np.float64).reshape(runs, 3)
    bias = float(np.sum(res[:, 1]) / runs)
    out = estimate(res[:, 0], bernoulli=True, bias_bound=bias, stopped=int(np.sum(res[:, 2])),
                   stop_count=stop_count)
    return out


def simulate_chain_hitting(params: ChainParams, q: int, s: int, runs: int, seed: int, *,
                           cap: int | None = None, bias_tol: float = 1e-12) -> MCEstimate:
    """Estimate c_{q,s} by running the embedded chain from q until it hits s.

    All runs advance together as a vector.  A run that reaches ``cap``
    (default: smallest k with c_{k,s} <= ``bias_tol``) counts as a miss;
    ``extra["bias_bound"]`` is c_{cap,s} times the fraction capped.
    """
    if not q > s >= 0:
        raise ValueError("need q > s >= 0")
    if cap is None:
        cap = q + 1
        while log_hitting_probability(cap, s, params) > math.log(bias_tol):
            cap += 1
    if cap <= q:
        raise ValueError("cap must exceed q")
    up = np.array([0.0] + [chain_transition(i, params)[0] for i in range(1, cap + 1)])
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0xC4A1])))
    state = np.full(runs, q, dtype=np.int64)
    active = np.ones(runs, dtype=bool)
    steps = 0
    while np.any(active):
        idx = np.flatnonzero(active)
        u = rng.random(len(idx))
        st = state[idx]
        st = np.where(u < up[st], st + 1, st - 1)
        state[idx] = st
        active[idx] = (st > s) & (st < cap)
        steps += len(idx)
    hit = (state == s).astype(np.float64)
    capped = float(np.count_nonzero(state >= cap)) / runs
    return estimate(hit, bernoulli=True, bias_bound=capped * hitting_probability(cap, s, params),
                    cap=cap, steps=steps)


def growth_statistic(traj: Trajectory, region: Region, c: float, t_min: float) -> float:
    """min of log(max(|eta_t cap region|, 1)) - c t over t_min, the event times in (t_min, T], and T."""
    if not traj.horizon > t_min:
        raise ValueError("trajectory horizon must exceed t_min")
    n = traj.counts(region) if len(traj) else np.zeros(0, dtype=np.int64)
    vals = [math.log(max(traj.count_at(t_min, region), 1)) - c * t_min]
    sel = (traj.times > t_min) & (traj.times <= traj.horizon)
    if np.any(sel):
        vals.append(float(np.min(np.log(np.maximum(n[sel], 1)) - c * traj.times[sel])))
    vals.append(math.log(max(traj.count_at(traj.horizon, region), 1)) - c * traj.horizon)
    return min(vals)


def death_count(traj: Trajectory, region: Region) -> int:
    """Number of deaths whose point lies in the region."""
    deaths = traj.kinds == 1
    if not np.any(deaths):
        return 0
    return int(np.count_nonzero(deaths & traj.in_region(region)))


def deaths_after_reaching(traj: Trajectory, region: Region, level: int) -> int:
    """Deaths in the region after |eta cap region| first reaches ``level`` (0 if never)."""
    if len(traj) == 0:
        return 0
    n = traj.counts(region)
    hit = np.flatnonzero(n >= level)
    if restrict_count(traj.initial, region) >= level:
        start = 0
    elif len(hit):
        start = int(hit[0]) + 1
    else:
        return 0
    tail = slice(start, None)
    return int(np.count_nonzero((traj.kinds[tail] == 1) & traj.in_region(region)[tail]))


def late_death_bound(params: ChainParams, level: int) -> float:
    """Bound on the expected number of down-steps after the chain first reaches ``level``.

    From state i the chain returns to i with probability at most
    p_down(i) + p_up(i) c_{i+1,i}, so it makes at most 1 / (1 - that) visits
    on average, each a down-step with probability p_down(i).
    """
    total = 0.0
    i = level
    while True:
        up, down = chain_transition(i, params)
        ret = down + up * hitting_probability(i + 1, i, params)
        term = down / (1.0 - ret)
        total += term
        if term < 1e-18 * total or term == 0.0:
            return total
        i += 1


@dataclass
class GrowthRun:
    survived: bool
    n_final: int          # |eta_T cap region| (0 if extinct)
    log_rate: float       # log(n_final) / T, NaN if extinct
    late_deaths: int      # deaths in the region after first reaching ``late_level``
    fast_forwarded: bool


def growth_run(model: RateModel, alpha: Configuration, region: Region, T: float, stream: Stream, *,
               switch_at: int = 64, late_level: int = 20, backend: str | None = None) -> GrowthRun:
    """One run of the growth experiment on a comparison-dominated model.

    The spatial process is simulated exactly until |eta cap region| reaches
    ``switch_at``.  From there the count is advanced to T as a Yule process
    with the model's per-particle birth rate c: given n particles at time s the count at T is
    n + NegBin(n, exp(-c (T - s))).  The error of ignoring later deaths is at
    most ``late_death_bound(params, switch_at)`` per run, about
    sum_{i >= switch_at} a^-i / (c + a^-i).
    """
    params = model.chain_params()
    if params is None:
        raise ValueError("growth_run needs a model with comparison-chain parameters")
    tr = simulate(model, alpha, T, stream, stop_count=switch_at, stop_region=region, backend=backend)
    late = deaths_after_reaching(tr, region, late_level)
    n = tr.count_at(tr.t_end, region) if len(tr) else restrict_count(alpha, region)
    total = int(tr.counts()[-1]) if len(tr) else len(alpha)
    if tr.status != "stopped":
        survived = total > 0 and n > 0
        return GrowthRun(survived, n, math.log(n) / T if n > 0 else math.nan, late, False)
    rate = getattr(model, "birth_rate", params.c)
    p = math.exp(-rate * (T - tr.t_end))
    n_T = n + int(stream.generator.negative_binomial(n, p))
    return GrowthRun(True, n_T, math.log(n_T) / T, late, True)
