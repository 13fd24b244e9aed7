"""Monotone coupling of two processes on shared randomness.

Process 2 is the larger one.  Every proposal is drawn once:

* a birth candidate from process 2's birth envelope, with one uniform u;
  it enters process k iff u * envelope < b_k, so a birth in 1 is always the
  same birth in 2;
* a death mark for one particle with level v uniform on [0, M], where M
  bounds the particle's death rate in process 1 when it is alive there and
  in process 2 otherwise; the particle dies in process k iff v < d_k, so a
  death in 2 of a particle alive in 1 is also a death in 1.

Superposing the per-particle mark clocks gives one exponential clock with
rate sum of M plus the birth envelope; each marginal is the law of
:func:`~sbdp.engine.simulate` under its own model.  The inclusion
eta1 subset eta2 is checked at every event, and again after the run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import Configuration, ModelError, RateModel, Region
from .engine import (BIRTH, DEATH, DEFAULT_MAX_EVENTS, ENVELOPE_TOL, STATUS_NAMES, CircuitBreakerError,
                     Event, Trajectory, _breaker, _pick, inclusion_violations)
from .rng import Stream


class MonotonicityError(ModelError):
    """The coupled models broke b1 <= b2 or d1 >= d2 on a visited pair of states."""


class InclusionError(RuntimeError):
    pass


def nested_initial(alpha2: Configuration, region: Region) -> Configuration:
    """alpha2 restricted to the region, keeping ids and the id counter."""
    items = [(pid, p) for pid, p in alpha2.items() if region.contains(p)]
    return Configuration.from_items(alpha2.dim, items, alpha2.next_id)


def _check_nested(alpha1: Configuration, alpha2: Configuration):
    for pid, p in alpha1.items():
        if pid not in alpha2 or alpha2[pid] != p:
            raise ValueError(f"alpha1 is not contained in alpha2 (particle {pid})")


def simulate_coupled(model1: RateModel, model2: RateModel, alpha1: Configuration,
                     alpha2: Configuration, T: float, seed=0, *,
                     max_events: int = DEFAULT_MAX_EVENTS, engine: str = "auto",
                     backend: str | None = None) -> tuple[Trajectory, Trajectory]:
    """Coupled trajectories (eta1, eta2) with eta1_t subset eta2_t for all t.

    Requires b1(x, eta1) <= b2(x, eta2) and d1(x, eta1) >= d2(x, eta2)
    whenever eta1 subset eta2; both are checked on every visited pair and a
    violation raises :class:`MonotonicityError`.
    """
    _check_nested(alpha1, alpha2)
    if not (model1.time_homogeneous and model2.time_homogeneous):
        raise ValueError("coupling is implemented for time-homogeneous models")
    stream = Stream.coerce(seed)
    fp1 = model1.kernel_params() if engine in ("auto", "kernel") else None
    fp2 = model2.kernel_params() if engine in ("auto", "kernel") else None
    same_box = fp1 is not None and fp2 is not None and (fp1.lo, fp1.hi) == (fp2.lo, fp2.hi)
    if engine == "kernel" and not same_box:
        raise ValueError("both models need compiled kernels on the same birth box")
    if same_box:
        return _coupled_kernel(fp1, fp2, alpha1, alpha2, T, stream, max_events, backend)
    return _coupled_generic(model1, model2, alpha1, alpha2, T, stream, max_events)


def _coupled_kernel(fp1, fp2, alpha1, alpha2, T, stream, max_events, backend):
    ids0, coords0 = alpha2.to_arrays()
    in1 = np.array([pid in alpha1 for pid in ids0.tolist()], dtype=np.uint8)
    try:
        out = kernels.run_coupled(fp1.as_array(), fp2.as_array(), fp1.lo, fp1.hi, ids0, coords0, in1,
                                  alpha2.next_id, T, max_events, stream, backend=backend)
    except kernels.KernelError as exc:
        if "monotonicity" in str(exc):
            raise MonotonicityError(str(exc)) from None
        if "inclusion" in str(exc):
            raise InclusionError(str(exc)) from None
        raise ModelError(str(exc)) from None
    status = STATUS_NAMES[out["status"]]
    if status == "breaker":
        _breaker(max_events, out["t_end"])
    t_end = T if status == "horizon" else float(out["t_end"])
    trajs = []
    for alpha, log in ((alpha1, out["log1"]), (alpha2, out["log2"])):
        trajs.append(Trajectory(alpha.copy(), *log, T, status, t_end))
    return trajs[0], trajs[1]


def _coupled_generic(model1, model2, alpha1, alpha2, T, stream, max_events):
    eta1 = alpha1.copy()
    eta2 = alpha2.copy()
    ev1: list[Event] = []
    ev2: list[Event] = []
    t = 0.0
    status = "horizon"
    nev = 0
    while True:
        Bsup = model2.birth_sup_mass(eta2)
        ids = eta2.ids()
        bounds = [model1.death_bound(pid, eta1) if pid in eta1 else model2.death_bound(pid, eta2)
                  for pid in ids]
        R = Bsup + math.fsum(bounds)
        if not R > 0.0:
            status = "absorbed"
            break
        t = t - math.log1p(-stream.uniform()) / R
        if t > T:
            break
        w = stream.uniform() * R
        if w < Bsup:
            x = tuple(model2.sample_birth_sup(eta2, stream))
            env = model2.birth_sup_density(x, eta2)
            b2 = model2.birth_density(x, t, eta2)
            b1 = model1.birth_density(x, t, eta1)
            if b1 > b2 * (1.0 + ENVELOPE_TOL):
                raise MonotonicityError(
                    f"b1 > b2 at x={x}, t={t!r}: {b1!r} > {b2!r} (|eta1|={len(eta1)}, |eta2|={len(eta2)})")
            if b2 > env * (1.0 + ENVELOPE_TOL):
                raise ModelError(f"birth envelope violated at x={x}: {b2!r} > {env!r}")
            u = stream.uniform() * env
            if u < b2:
                pid = eta2.next_id
                eta2.insert(pid, x)
                ev2.append(Event(t, BIRTH, x, pid))
                if u < b1:
                    eta1.insert(pid, x)
                    ev1.append(Event(t, BIRTH, x, pid))
                nev += 1
        else:
            pid = _pick(ids, bounds, w - Bsup)
            m = bounds[ids.index(pid)]
            v = stream.uniform() * m
            d2 = model2.death_rate(pid, t, eta2)
            if pid in eta1:
                d1 = model1.death_rate(pid, t, eta1)
                if d1 > m * (1.0 + ENVELOPE_TOL):
                    raise ModelError(f"death bound violated for particle {pid}: {d1!r} > {m!r}")
                if d2 > d1 * (1.0 + ENVELOPE_TOL):
                    raise MonotonicityError(
                        f"d1 < d2 for particle {pid} at t={t!r}: {d1!r} < {d2!r} "
                        f"(|eta1|={len(eta1)}, |eta2|={len(eta2)})")
                d2 = min(d2, d1)
                k1, k2 = v < d1, v < d2
                if k2 and not k1:
                    raise InclusionError(f"particle {pid} would leave process 2 but not 1 at t={t!r}")
            else:
                if d2 > m * (1.0 + ENVELOPE_TOL):
                    raise ModelError(f"death bound violated for particle {pid}: {d2!r} > {m!r}")
                k1, k2 = False, v < d2
            if k1:
                ev1.append(Event(t, DEATH, eta1.remove(pid), pid))
            if k2:
                ev2.append(Event(t, DEATH, eta2.remove(pid), pid))
            if k1 or k2:
                nev += 1
        if nev >= max_events:
            _breaker(max_events, t)
    t_end = T if status == "horizon" else t
    return (Trajectory.from_events(alpha1.copy(), ev1, T, status, t_end),
            Trajectory.from_events(alpha2.copy(), ev2, T, status, t_end))


@dataclass
class InclusionAudit:
    runs: int = 0
    events: int = 0
    violations: int = 0          # lifetimes in 1 not inside lifetimes in 2
    birth_mismatches: int = 0    # births in 1 without the same-time birth in 2
    failed_runs: list = field(default_factory=list)

    def add(self, run_index: int, traj1: Trajectory, traj2: Trajectory) -> None:
        v = inclusion_violations(traj1, traj2)
        b = birth_mismatches(traj1, traj2)
        self.runs += 1
        self.events += len(traj1) + len(traj2)
        self.violations += v
        self.birth_mismatches += b
        if v or b:
            self.failed_runs.append(run_index)

    def merge(self, other: "InclusionAudit") -> None:
        self.runs += other.runs
        self.events += other.events
        self.violations += other.violations
        self.birth_mismatches += other.birth_mismatches
        self.failed_runs.extend(other.failed_runs)

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.birth_mismatches == 0


def birth_mismatches(traj1: Trajectory, traj2: Trajectory) -> int:
    """Births of process 1 not matched by a birth of the same id at the same time in process 2."""
    b1 = traj1.kinds == 0
    b2 = traj2.kinds == 0
    ids2 = traj2.ids[b2]
    order = np.argsort(ids2, kind="stable")
    ids2 = ids2[order]
    t2 = traj2.times[b2][order]
    ids1 = traj1.ids[b1]
    if len(ids1) == 0:
        return 0
    if len(ids2) == 0:
        return int(len(ids1))
    pos = np.minimum(np.searchsorted(ids2, ids1), len(ids2) - 1)
    ok = (ids2[pos] == ids1) & (t2[pos] == traj1.times[b1])
    return int(np.count_nonzero(~ok))


def audit_pair(traj1: Trajectory, traj2: Trajectory) -> InclusionAudit:
    audit = InclusionAudit()
    audit.add(0, traj1, traj2)
    return audit
