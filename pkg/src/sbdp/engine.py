"""Exact event-driven simulation of a single trajectory.

Three paths share one contract (same inputs and seed give the same
trajectory):

* the compiled family kernel, used automatically for models that expose
  :meth:`~sbdp.config.RateModel.kernel_params`;
* :func:`next_event_homogeneous`, the embedded-chain step for
  time-homogeneous models;
* :func:`next_event_inhomogeneous`, thinning against the envelope
  ``birth_sup_mass + sum of death bounds`` for time-dependent rates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import kernels
from .config import Box, Configuration, ModelError, RateModel, Region
from .rng import Stream

BIRTH = "B"
DEATH = "D"
DEFAULT_MAX_EVENTS = 10**7
ENVELOPE_TOL = 1e-9
MAX_REJECTIONS = 10**7

STATUS_NAMES = {
    kernels.HORIZON: "horizon",
    kernels.ABSORBED: "absorbed",
    kernels.STOPPED: "stopped",
    kernels.BREAKER: "breaker",
}


class CircuitBreakerError(RuntimeError):
    """Too many events; the model probably grows faster than linearly."""


class _Absorbed:
    def __repr__(self):
        return "Absorbed"

    def __bool__(self):
        return False


Absorbed = _Absorbed()


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    point: tuple
    particle_id: int


@dataclass
class SimState:
    t: float
    eta: Configuration
    stream: Stream

    def apply(self, ev: Event) -> None:
        if ev.kind == BIRTH:
            self.eta.insert(ev.particle_id, ev.point)
        else:
            self.eta.remove(ev.particle_id)
        self.t = ev.time


class Trajectory:
    """Initial configuration plus a time-ordered event log, stored as arrays."""

    def __init__(self, initial: Configuration, times, kinds, ids, coords, horizon: float,
                 status: str = "horizon", t_end: float | None = None):
        self.initial = initial
        self.times = np.asarray(times, dtype=np.float64)
        self.kinds = np.asarray(kinds, dtype=np.int8)  # 0 birth, 1 death
        self.ids = np.asarray(ids, dtype=np.int64)
        self.coords = np.asarray(coords, dtype=np.float64).reshape(len(self.times), initial.dim)
        self.horizon = float(horizon)
        self.status = status
        self.t_end = self.horizon if t_end is None else float(t_end)

    @classmethod
    def from_events(cls, initial, events, horizon, status="horizon", t_end=None):
        dim = initial.dim
        times = [e.time for e in events]
        kinds = [0 if e.kind == BIRTH else 1 for e in events]
        ids = [e.particle_id for e in events]
        coords = np.array([e.point for e in events], dtype=np.float64).reshape(len(events), dim)
        return cls(initial, times, kinds, ids, coords, horizon, status, t_end)

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self.times)):
            yield Event(float(self.times[i]), BIRTH if self.kinds[i] == 0 else DEATH,
                        tuple(self.coords[i].tolist()), int(self.ids[i]))

    @property
    def events(self) -> list[Event]:
        return list(self)

    @property
    def n_births(self) -> int:
        return int(np.count_nonzero(self.kinds == 0))

    @property
    def n_deaths(self) -> int:
        return int(np.count_nonzero(self.kinds == 1))

    def in_region(self, region: Region) -> np.ndarray:
        """Membership of each event's point in ``region``."""
        if isinstance(region, Box):
            lo = np.array(region.lo)
            hi = np.array(region.hi)
            return np.all((self.coords >= lo) & (self.coords <= hi), axis=1)
        return np.array([region.contains(p) for p in self.coords.tolist()], dtype=bool)

    def counts(self, region: Region | None = None) -> np.ndarray:
        """Population after each event (restricted to ``region`` when given)."""
        step = np.where(self.kinds == 0, 1, -1).astype(np.int64)
        if region is None:
            n0 = len(self.initial)
        else:
            n0 = sum(1 for p in self.initial.points() if region.contains(p))
            step = step * self.in_region(region)
        return n0 + np.cumsum(step)

    def count_at(self, t: float, region: Region | None = None) -> int:
        """Population at time t (state after the last event at or before t)."""
        k = int(np.searchsorted(self.times, t, side="right"))
        if k == 0:
            if region is None:
                return len(self.initial)
            return sum(1 for p in self.initial.points() if region.contains(p))
        return int(self.counts(region)[k - 1])

    def replay(self) -> Configuration:
        """Validate the log event by event and return the final configuration."""
        eta = self.initial.copy()
        last = -math.inf
        for i in range(len(self.times)):
            t = float(self.times[i])
            if t < last:
                raise ValueError(f"event {i} at time {t} precedes {last}")
            if t > self.horizon:
                raise ValueError(f"event {i} at time {t} is beyond the horizon {self.horizon}")
            last = t
            pid = int(self.ids[i])
            if self.kinds[i] == 0:
                if pid < eta.next_id:
                    raise ValueError(f"birth event {i} reuses id {pid}")
                eta.insert(pid, self.coords[i].tolist())
            else:
                if pid not in eta:
                    raise ValueError(f"death event {i} references dead id {pid}")
                eta.remove(pid)
        return eta

    def final(self) -> Configuration:
        return self.replay()


# --------------------------------------------------------------------------
# single steps


def _check_rate(value, what):
    if not (math.isfinite(value) and value >= 0.0):
        raise ModelError(f"{what} returned {value!r}")
    return value


def next_event_homogeneous(model: RateModel, state: SimState):
    """Next event of a time-homogeneous process, or ``Absorbed``.

    Waiting time is exponential with rate (B + D)(eta); the event is a birth
    with probability B / (B + D), otherwise the death of particle x with
    probability d(x, eta) / (B + D).
    """
    eta = state.eta
    stream = state.stream
    B = _check_rate(model.birth_mass(state.t, eta), "birth_mass")
    ids = eta.ids()
    rates = [_check_rate(model.death_rate(pid, state.t, eta), f"death_rate({pid})") for pid in ids]
    D = math.fsum(rates)
    R = B + D
    if not R > 0.0:
        return Absorbed
    t = state.t - math.log1p(-stream.uniform()) / R
    w = stream.uniform() * R
    if w < B:
        x = model.sample_birth(state.t, eta, stream)
        return Event(t, BIRTH, tuple(x), eta.next_id)
    pid = _pick(ids, rates, w - B)
    return Event(t, DEATH, eta[pid], pid)


def _pick(ids, weights, target):
    acc = 0.0
    chosen = None
    for pid, wi in zip(ids, weights):
        if wi > 0.0:
            acc += wi
            chosen = pid
            if target < acc:
                break
    if chosen is None:
        raise ModelError("death proposal with no positive weight")
    return chosen


def next_event_inhomogeneous(model: RateModel, state: SimState, horizon: float = math.inf):
    """Next accepted event by thinning, ``Absorbed``, or None past ``horizon``.

    Candidates arrive at the constant envelope rate
    ``birth_sup_mass(eta) + sum_x death_bound(x, eta)`` (the state is
    frozen between events).  A birth candidate at (x, s) is kept with
    probability b(x, s, eta) / bbar(x, eta), a death candidate of particle x
    with probability d(x, s, eta) / dbar(x, eta).
    """
    eta = state.eta
    stream = state.stream
    Bsup = _check_rate(model.birth_sup_mass(eta), "birth_sup_mass")
    ids = eta.ids()
    bounds = [_check_rate(model.death_bound(pid, eta), f"death_bound({pid})") for pid in ids]
    R = Bsup + math.fsum(bounds)
    if not R > 0.0:
        return Absorbed
    t = state.t
    for _ in range(MAX_REJECTIONS):
        t = t - math.log1p(-stream.uniform()) / R
        if t > horizon:
            return None
        w = stream.uniform() * R
        if w < Bsup:
            x = tuple(model.sample_birth_sup(eta, stream))
            bbar = model.birth_sup_density(x, eta)
            b = _check_rate(model.birth_density(x, t, eta), "birth_density")
            if b > bbar * (1.0 + ENVELOPE_TOL):
                raise ModelError(f"birth envelope violated: b({x}, {t}) = {b!r} > bbar = {bbar!r}")
            if stream.uniform() * bbar < b:
                return Event(t, BIRTH, x, eta.next_id)
        else:
            pid = _pick(ids, bounds, w - Bsup)
            m = model.death_bound(pid, eta)
            d = _check_rate(model.death_rate(pid, t, eta), f"death_rate({pid})")
            if d > m * (1.0 + ENVELOPE_TOL):
                raise ModelError(f"death envelope violated: d({pid}, {t}) = {d!r} > bound {m!r}")
            if stream.uniform() * m < d:
                return Event(t, DEATH, eta[pid], pid)
    raise CircuitBreakerError(f"{MAX_REJECTIONS} consecutive rejected candidates after t={state.t}")


# --------------------------------------------------------------------------
# whole trajectories


def _stop_region(model, stop_region):
    if stop_region is not None:
        return stop_region
    return getattr(model, "region", None)


def simulate(model: RateModel, alpha: Configuration, horizon: float, seed=0, *,
             max_events: int = DEFAULT_MAX_EVENTS, stop_count: int | None = None,
             stop_region: Region | None = None, engine: str = "auto",
             backend: str | None = None) -> Trajectory:
    """Simulate one trajectory on [0, horizon].

    ``seed`` may be an int, a numpy Generator or a :class:`Stream`.  With
    ``stop_count`` the run also stops once |eta cap stop_region| reaches it
    (default region: the model's own).  ``engine`` is one of "auto",
    "kernel", "homogeneous" or "thinning".
    """
    if not math.isfinite(horizon) or horizon < 0:
        raise ValueError("horizon must be finite and nonnegative")
    stream = Stream.coerce(seed)
    fp = model.kernel_params() if engine in ("auto", "kernel") else None
    if engine == "kernel" and fp is None:
        raise ValueError("model has no compiled kernel representation")
    region = _stop_region(model, stop_region)
    if fp is not None and stop_count is not None and stop_region is not None:
        if not (isinstance(stop_region, Box) and (stop_region.lo, stop_region.hi) == (fp.lo, fp.hi)):
            fp = None
    if fp is not None:
        return _simulate_kernel(fp, alpha, horizon, stream, max_events, stop_count, backend)
    if engine == "auto":
        engine = "homogeneous" if model.time_homogeneous else "thinning"
    if engine == "homogeneous" and not model.time_homogeneous:
        raise ValueError("homogeneous engine needs a time-homogeneous model")

    state = SimState(0.0, alpha.copy(), stream)
    events: list[Event] = []
    status = "horizon"
    n_in = None
    if stop_count is not None:
        if region is None:
            raise ValueError("stop_count needs a region")
        n_in = sum(1 for p in alpha.points() if region.contains(p))
    while True:
        if n_in is not None and n_in >= stop_count:
            status = "stopped"
            break
        if engine == "homogeneous":
            ev = next_event_homogeneous(model, state)
        else:
            ev = next_event_inhomogeneous(model, state, horizon)
        if ev is Absorbed:
            status = "absorbed"
            break
        if ev is None or ev.time > horizon:
            break
        state.apply(ev)
        events.append(ev)
        if n_in is not None and region.contains(ev.point):
            n_in += 1 if ev.kind == BIRTH else -1
        if len(events) >= max_events:
            _breaker(max_events, state.t)
    t_end = horizon if status == "horizon" else state.t
    return Trajectory.from_events(alpha.copy(), events, horizon, status, t_end)


def _breaker(max_events, t):
    raise CircuitBreakerError(
        f"{max_events} events by t={t:.6g}; the birth rate probably violates the sublinear "
        "growth bound c1|eta| + c2 (raise max_events if the run is legitimate)")


def _simulate_kernel(fp, alpha, horizon, stream, max_events, stop_count, backend):
    ids0, coords0 = alpha.to_arrays()
    out = kernels.run_single(fp.as_array(), fp.lo, fp.hi, ids0, coords0, alpha.next_id, horizon,
                             max_events, -1 if stop_count is None else stop_count, stream,
                             backend=backend)
    status = STATUS_NAMES[out["status"]]
    if status == "breaker":
        _breaker(max_events, out["t_end"])
    t_end = horizon if status == "horizon" else (float(out["times"][-1]) if len(out["times"]) else 0.0)
    return Trajectory(alpha.copy(), out["times"], out["kinds"], out["ids"], out["coords"], horizon,
                      status, t_end)


def simulate_with_majorant(model: RateModel, alpha: Configuration, horizon: float, seed=0, *,
                           max_events: int = DEFAULT_MAX_EVENTS) -> tuple[Trajectory, Trajectory]:
    """Simulate the process together with its pure-birth majorant.

    The majorant births at intensity bbar(., majorant).  Each of its births
    at (x, s) also enters the true process with probability
    b(x, s, eta) / bbar(x, majorant); true deaths are thinned from the death
    bounds.  Returns ``(true, majorant)``; the true process is contained in
    the majorant at every time.
    """
    stream = Stream.coerce(seed)
    eta = alpha.copy()
    bar = alpha.copy()
    ev_true: list[Event] = []
    ev_bar: list[Event] = []
    t = 0.0
    status = "horizon"
    while True:
        Bbar = _check_rate(model.birth_sup_mass(bar), "birth_sup_mass")
        ids = eta.ids()
        bounds = [_check_rate(model.death_bound(pid, eta), "death_bound") for pid in ids]
        R = Bbar + math.fsum(bounds)
        if not R > 0.0:
            status = "absorbed"
            break
        t = t - math.log1p(-stream.uniform()) / R
        if t > horizon:
            break
        w = stream.uniform() * R
        if w < Bbar:
            x = tuple(model.sample_birth_sup(bar, stream))
            bbar = model.birth_sup_density(x, bar)
            b = _check_rate(model.birth_density(x, t, eta), "birth_density")
            if b > bbar * (1.0 + ENVELOPE_TOL):
                raise ModelError(
                    f"majorant envelope violated at t={t}: b = {b!r} > bbar = {bbar!r}; "
                    "is birth_sup_density monotone under inclusion?")
            pid = bar.next_id
            bar.insert(pid, x)
            ev_bar.append(Event(t, BIRTH, x, pid))
            if stream.uniform() * bbar < b:
                eta.insert(pid, x)
                ev_true.append(Event(t, BIRTH, x, pid))
        else:
            pid = _pick(ids, bounds, w - Bbar)
            m = model.death_bound(pid, eta)
            d = _check_rate(model.death_rate(pid, t, eta), "death_rate")
            if d > m * (1.0 + ENVELOPE_TOL):
                raise ModelError(f"death envelope violated: d = {d!r} > bound {m!r}")
            if stream.uniform() * m < d:
                ev_true.append(Event(t, DEATH, eta.remove(pid), pid))
        if len(ev_bar) + len(ev_true) >= max_events:
            _breaker(max_events, t)
    t_end = horizon if status == "horizon" else t
    return (Trajectory.from_events(alpha.copy(), ev_true, horizon, status, t_end),
            Trajectory.from_events(alpha.copy(), ev_bar, horizon, status, t_end))


def yule_mean(z0: int, lam: float, t: float) -> float:
    """Mean of a Yule process with per-individual rate lam at time t."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    return z0 * math.exp(lam * t)


def lifetimes(traj: Trajectory) -> dict[int, tuple[float, float]]:
    """Map id -> (birth time, death time) with -inf for initial particles, inf if alive."""
    out = {pid: (-math.inf, math.inf) for pid in traj.initial}
    for i in range(len(traj.times)):
        pid = int(traj.ids[i])
        t = float(traj.times[i])
        if traj.kinds[i] == 0:
            out[pid] = (t, math.inf)
        else:
            out[pid] = (out[pid][0], t)
    return out


def inclusion_violations(inner: Trajectory, outer: Trajectory) -> int:
    """Number of particles whose lifetime in ``inner`` is not inside their lifetime in ``outer``.

    Ids are never reused, so inner_t subset of outer_t at every t is
    equivalent to zero violations.
    """
    li = _lifetime_arrays(inner)
    lo = _lifetime_arrays(outer)
    ids_i, b_i, d_i = li
    ids_o, b_o, d_o = lo
    pos = np.searchsorted(ids_o, ids_i)
    pos_c = np.minimum(pos, max(len(ids_o) - 1, 0))
    if len(ids_o) == 0:
        return int(len(ids_i))
    present = ids_o[pos_c] == ids_i
    ok = present & (b_o[pos_c] <= b_i) & (d_o[pos_c] >= d_i)
    return int(np.count_nonzero(~ok))


def _lifetime_arrays(traj: Trajectory):
    init_ids = np.array(traj.initial.ids(), dtype=np.int64)
    births = traj.kinds == 0
    ids = np.concatenate([init_ids, traj.ids[births]])
    born = np.concatenate([np.full(len(init_ids), -np.inf), traj.times[births]])
    order = np.argsort(ids, kind="stable")
    ids = ids[order]
    born = born[order]
    died = np.full(len(ids), np.inf)
    deaths = ~births
    if np.any(deaths):
        idx = np.searchsorted(ids, traj.ids[deaths])
        died[idx] = traj.times[deaths]
    return ids, born, died
