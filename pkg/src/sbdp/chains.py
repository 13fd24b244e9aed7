"""Finite Markov kernels, lumpability, and birth-death extinction series."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

ROW_TOL = 1e-12


class NotLumpableError(ValueError):
    def __init__(self, witness, discrepancy):
        self.witness = witness
        self.discrepancy = discrepancy
        s, q = witness
        super().__init__(
            f"states {s} and {q} share a label but their pushforward rows differ by {discrepancy:.3e}")


class FiniteKernel:
    """Row-stochastic transition matrix on states 0..n-1."""

    def __init__(self, rows):
        m = np.array(rows, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValueError(f"kernel must be a nonempty square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)) or np.any(m < 0) or np.any(m > 1):
            raise ValueError("kernel entries must lie in [0, 1]")
        sums = np.array([math.fsum(r) for r in m])
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_TOL)
        if len(bad):
            i = int(bad[0])
            raise ValueError(f"row {i} sums to {sums[i]!r}, not 1")
        self.rows = m
        self.rows.setflags(write=False)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def __eq__(self, other):
        return isinstance(other, FiniteKernel) and np.array_equal(self.rows, other.rows)

    def __repr__(self):
        return f"FiniteKernel(n={self.n})"


class Lumping:
    """State -> label map with labels 0..L-1, every label used."""

    def __init__(self, labels: Sequence[int]):
        f = np.asarray(labels, dtype=np.int64)
        if f.ndim != 1 or len(f) == 0:
            raise ValueError("lumping needs one label per state")
        if f.min() < 0:
            raise ValueError("labels must be nonnegative")
        used = np.unique(f)
        if not np.array_equal(used, np.arange(len(used))):
            raise ValueError(f"labels must be contiguous from 0, got {used.tolist()}")
        self.f = f
        self.n_labels = len(used)

    @classmethod
    def identity(cls, n: int) -> "Lumping":
        return cls(range(n))

    def __len__(self):
        return len(self.f)

    def classes(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.f == y) for y in range(self.n_labels)]

    def push(self, mu) -> np.ndarray:
        """Pushforward of a distribution (or row vector) on states to labels."""
        mu = np.asarray(mu, dtype=np.float64)
        return np.array([math.fsum(mu[c]) for c in self.classes()])


def _check(Q: FiniteKernel, f: Lumping):
    if len(f) != Q.n:
        raise ValueError(f"lumping has {len(f)} states, kernel has {Q.n}")


def pushforward_rows(Q: FiniteKernel, f: Lumping) -> np.ndarray:
    """P[s, y] = Q(s, f^-1(y)), each entry a correctly rounded sum."""
    _check(Q, f)
    classes = f.classes()
    return np.array([[math.fsum(row[c]) for c in classes] for row in Q.rows])


@dataclass
class LumpabilityReport:
    lumpable: bool       # pushforward rows agree within tol on every class
    rows_equal: bool     # full rows agree within tol on every class
    discrepancy: float   # largest pushforward difference inside a class
    witness: tuple | None

    def __bool__(self):
        return self.lumpable


def is_lumpable(Q: FiniteKernel, f: Lumping, tol: float = 1e-12) -> LumpabilityReport:
    """Check that states sharing a label have the same pushforward row.

    Also reports the stronger condition that they have identical rows.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    P = pushforward_rows(Q, f)
    worst = 0.0
    witness = None
    rows_equal = True
    for c in f.classes():
        ref = c[0]
        for s in c[1:]:
            d = float(np.max(np.abs(P[s] - P[ref])))
            if d > worst:
                worst = d
                witness = (int(ref), int(s))
            if float(np.max(np.abs(Q.rows[s] - Q.rows[ref]))) > tol:
                rows_equal = False
    return LumpabilityReport(worst <= tol, rows_equal, worst, witness)


def lump(Q: FiniteKernel, f: Lumping, tol: float = 1e-12, representatives: Sequence[int] | None = None
         ) -> FiniteKernel:
    """Lumped kernel Qbar(y, B) = Q(x, f^-1(B)) for a representative x of y.

    ``representatives[y]`` picks the state used for label y (default: the
    smallest).  Raises :class:`NotLumpableError` naming a witness pair.
    """
    report = is_lumpable(Q, f, tol)
    if not report:
        raise NotLumpableError(report.witness, report.discrepancy)
    P = pushforward_rows(Q, f)
    classes = f.classes()
    if representatives is None:
        representatives = [int(c[0]) for c in classes]
    rows = []
    for y, x in enumerate(representatives):
        if f.f[x] != y:
            raise ValueError(f"state {x} does not carry label {y}")
        rows.append(P[x])
    return FiniteKernel(rows)


def _tv(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(p - q)))


def pushforward_equivalence(Q: FiniteKernel, f: Lumping, mu0, n_max: int) -> float:
    """Largest total-variation gap between f(X_n) and the lumped chain, n = 1..n_max."""
    Qbar = lump(Q, f)
    mu = np.asarray(mu0, dtype=np.float64)
    if mu.shape != (Q.n,):
        raise ValueError("mu0 must be a distribution on the kernel's states")
    nu = f.push(mu)
    worst = 0.0
    for _ in range(n_max):
        mu = mu @ Q.rows
        nu = nu @ Qbar.rows
        worst = max(worst, _tv(f.push(mu), nu))
    return worst


# --------------------------------------------------------------------------
# birth-death chains on Z+


def birth_death_kernel(p_up: Callable[[int], float], n_states: int) -> FiniteKernel:
    """Nearest-neighbour chain on 0..n_states-1 with 0 absorbing.

    The top state holds with probability p_up instead of stepping out.
    """
    if n_states < 2:
        raise ValueError("need at least two states")
    Q = np.zeros((n_states, n_states))
    Q[0, 0] = 1.0
    for i in range(1, n_states):
        up = p_up(i)
        down = 1.0 - up
        Q[i, i - 1] = down
        Q[i, min(i + 1, n_states - 1)] += up
    return FiniteKernel(Q)


def refined_birth_death_kernel(p_up: Callable[[int], float], n_states: int, labels: int = 2
                               ) -> tuple[FiniteKernel, Lumping]:
    """Lift of :func:`birth_death_kernel` that also tracks a spatial label.

    State (i, h) means i particles, the most recent birth landing in cell h
    of an equal partition of the birth region into ``labels`` cells
    (``labels`` a power of two, so each cell probability is exact in binary).
    Returns the kernel and the count projection, under which it lumps to
    the plain chain.
    """
    if labels < 1 or labels & (labels - 1):
        raise ValueError("labels must be a power of two")
    n = n_states * labels
    Q = np.zeros((n, n))

    def idx(i, h):
        return i * labels + h

    share = 1.0 / labels
    for i in range(n_states):
        for h in range(labels):
            s = idx(i, h)
            if i == 0:
                Q[s, s] = 1.0
                continue
            up = p_up(i)
            down = 1.0 - up
            Q[s, idx(i - 1, h)] += down
            top = min(i + 1, n_states - 1)
            for g in range(labels):
                Q[s, idx(top, g)] += up * share
    return FiniteKernel(Q), Lumping([i for i in range(n_states) for _ in range(labels)])


@dataclass
class SeriesResult:
    """p_q = sum_{j>=q} rho_j / (1 + sum_{j>=1} rho_j), kept in log form too."""

    p: float
    log_p: float
    status: str   # "finite", "certain" (divergent series) or "undetermined"
    terms: int

    @property
    def certain(self) -> bool:
        return self.status == "certain"


class _LogSum:
    __slots__ = ("m", "s")

    def __init__(self):
        self.m = -math.inf
        self.s = 0.0

    def add(self, lx: float) -> None:
        if lx == -math.inf:
            return
        if lx <= self.m:
            self.s += math.exp(lx - self.m)
        else:
            self.s = self.s * math.exp(self.m - lx) + 1.0
            self.m = lx

    def value(self) -> float:
        return self.m + math.log(self.s) if self.s > 0 else -math.inf


def series_extinction(log_rho: Callable[[int], float], q: int, start: int = 1, *,
                      rel_tol: float = 1e-16, diverge_at: float = 1e30,
                      max_terms: int = 100_000) -> SeriesResult:
    """Evaluate sum_{j>=q} rho_j / (1 + sum_{j>=start} rho_j) from log-terms.

    Summation stops once terms are non-increasing and below ``rel_tol`` of
    the partial tail sum.  A partial sum above ``diverge_at``, or terms that have
    not decayed after ``max_terms``, is reported as certain extinction.
    """
    if q < start:
        raise ValueError(f"q must be >= {start}")
    total = _LogSum()
    tail = _LogSum()
    log_tol = math.log(rel_tol)
    log_div = math.log(diverge_at)
    prev = math.inf
    peak = -math.inf
    j = start
    status = None
    while True:
        lt = log_rho(j)
        if math.isnan(lt):
            raise ValueError(f"log rho({j}) is NaN")
        total.add(lt)
        if j >= q:
            tail.add(lt)
        peak = max(peak, lt)
        lsum = total.value()
        if lsum > log_div:
            status = "certain"
            break
        # relative to the tail, so p_q is accurate even when it is tiny
        if j >= q and lt <= prev and lt - tail.value() < log_tol:
            status = "finite"
            break
        if j - start + 1 >= max_terms:
            status = "certain" if lt - peak > math.log(1e-3) else "undetermined"
            break
        prev = lt
        j += 1
    terms = j - start + 1
    if status != "finite":
        return SeriesResult(1.0 if status == "certain" else math.nan,
                            0.0 if status == "certain" else math.nan, status, terms)
    ls = total.value()
    log_den = math.log1p(math.exp(ls)) if ls < 700 else ls + math.log1p(math.exp(-ls))
    log_p = tail.value() - log_den
    return SeriesResult(math.exp(log_p), log_p, "finite", terms)
