"""Configurations, regions and birth/death rate models.

A configuration is a finite set of identified points in R^d.  Rate models
describe the birth intensity b(x, t, eta) and the per-particle death rate
d(x, t, eta); every simulator in the package consumes them through the
:class:`RateModel` interface.

Particles are addressed by integer ids.  Ids are handed out by a monotone
counter and never reused, so "the death of particle x" is unambiguous even
when two coordinates coincide in floating point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

Point = tuple  # tuple[float, ...]


class ModelError(ValueError):
    """A rate model returned an invalid value or violated its own bounds."""


def as_point(coords: Sequence[float]) -> Point:
    p = tuple(float(v) for v in coords)
    if not p:
        raise ValueError("points need at least one coordinate")
    if not all(math.isfinite(v) for v in p):
        raise ValueError(f"non-finite coordinate in {p!r}")
    return p


class Configuration:
    """Finite point configuration with stable particle ids."""

    __slots__ = ("dim", "_particles", "next_id")

    def __init__(self, dim: int, points: Sequence[Sequence[float]] = ()):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self._particles: dict[int, Point] = {}
        self.next_id = 0
        for p in points:
            self.add(p)

    @classmethod
    def from_items(cls, dim: int, items, next_id: int | None = None) -> "Configuration":
        conf = cls(dim)
        for pid, p in items:
            pid = int(pid)
            if pid in conf._particles:
                raise ValueError(f"duplicate particle id {pid}")
            conf._particles[pid] = as_point(p)
            conf.next_id = max(conf.next_id, pid + 1)
        if next_id is not None:
            if next_id < conf.next_id:
                raise ValueError("next_id must exceed every live id")
            conf.next_id = next_id
        return conf

    def add(self, point: Sequence[float]) -> int:
        p = as_point(point)
        if len(p) != self.dim:
            raise ValueError(f"expected a {self.dim}-d point, got {p!r}")
        pid = self.next_id
        self._particles[pid] = p
        self.next_id += 1
        return pid

    def insert(self, pid: int, point: Sequence[float]) -> None:
        """Insert a particle under an externally chosen fresh id."""
        if pid in self._particles or pid < 0:
            raise ValueError(f"id {pid} is live or invalid")
        self._particles[pid] = as_point(point)
        self.next_id = max(self.next_id, pid + 1)

    def remove(self, pid: int) -> Point:
        try:
            return self._particles.pop(pid)
        except KeyError:
            raise KeyError(f"particle {pid} is not live") from None

    def copy(self) -> "Configuration":
        new = Configuration.__new__(Configuration)
        new.dim = self.dim
        new._particles = dict(self._particles)
        new.next_id = self.next_id
        return new

    def __len__(self) -> int:
        return len(self._particles)

    def __contains__(self, pid) -> bool:
        return pid in self._particles

    def __iter__(self) -> Iterator[int]:
        return iter(self._particles)

    def __getitem__(self, pid: int) -> Point:
        return self._particles[pid]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.dim == other.dim and self._particles == other._particles

    def __repr__(self) -> str:
        return f"Configuration(dim={self.dim}, n={len(self)}, next_id={self.next_id})"

    def items(self):
        return self._particles.items()

    def ids(self) -> list[int]:
        return list(self._particles)

    def points(self) -> list[Point]:
        return list(self._particles.values())

    def id_set(self) -> frozenset:
        return frozenset(self._particles)

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        ids = np.fromiter(self._particles.keys(), dtype=np.int64, count=len(self))
        coords = np.array(list(self._particles.values()), dtype=np.float64).reshape(len(self), self.dim)
        return ids, coords


# --------------------------------------------------------------------------
# regions


class Region:
    """Measurable set used as a birth support; membership is closed."""

    dim: int
    volume: float

    def contains(self, x: Sequence[float]) -> bool:
        raise NotImplementedError

    def sample(self, stream) -> Point:
        raise NotImplementedError

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def diameter(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.sqrt(np.sum((hi - lo) ** 2)))

    def __contains__(self, x) -> bool:
        return self.contains(x)


@dataclass(frozen=True)
class Box(Region):
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("box corners must have the same positive dimension")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError("box needs lo <= hi on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return float(math.prod(h - l for l, h in zip(self.lo, self.hi)))

    def contains(self, x) -> bool:
        return all(l <= v <= h for v, l, h in zip(x, self.lo, self.hi))

    def sample(self, stream) -> Point:
        return tuple(l + stream.uniform() * (h - l) for l, h in zip(self.lo, self.hi))

    def bounding_box(self):
        return np.array(self.lo), np.array(self.hi)

    def diameter(self) -> float:
        return math.sqrt(sum((h - l) ** 2 for l, h in zip(self.lo, self.hi)))


@dataclass(frozen=True)
class Ball(Region):
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if self.radius < 0:
            raise ValueError("ball radius must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        d = self.dim
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius**d

    def contains(self, x) -> bool:
        return sum((v - c) ** 2 for v, c in zip(x, self.center)) <= self.radius**2

    def sample(self, stream) -> Point:
        # rejection from the bounding cube
        r = self.radius
        while True:
            p = tuple(c - r + 2 * r * stream.uniform() for c in self.center)
            if self.contains(p):
                return p

    def bounding_box(self):
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def diameter(self) -> float:
        return 2.0 * self.radius


@dataclass(frozen=True)
class CallbackRegion(Region):
    """User-supplied region: membership test, volume, sampler and box."""

    dim: int
    volume: float
    member: Callable
    sampler: Callable
    box: tuple

    def contains(self, x) -> bool:
        return bool(self.member(x))

    def sample(self, stream) -> Point:
        return as_point(self.sampler(stream))

    def bounding_box(self):
        lo, hi = self.box
        return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def restrict_count(eta: Configuration, region: Region) -> int:
    """Number of particles of ``eta`` lying in ``region``."""
    return sum(1 for p in eta.points() if region.contains(p))


# --------------------------------------------------------------------------
# rate models


@dataclass(frozen=True)
class FamilyParams:
    """Numeric description of a model the compiled kernels can run.

    Births are uniform on the box ``lo..hi`` with total mass
    ``birth_rate * count`` where count is |eta cap box| (or |eta| when
    ``birth_count_all``).  ``death_kind`` selects the death rate:
    0 constant ``d0``; 1 ``exp(-log_a * |eta|)`` inside the box and 0
    outside; 2 aggregation ``exp(-sum phi(x - y))`` with a radial step
    kernel.
    """

    dim: int
    lo: tuple
    hi: tuple
    birth_rate: float
    birth_count_all: bool = False
    death_kind: int = 0
    d0: float = 0.0
    log_a: float = 0.0
    phi_near: float = 0.0
    phi_far: float = 0.0
    phi_radius: float = 0.0
    include_self: bool = True
    phi_min_region: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.birth_rate,
                1.0 if self.birth_count_all else 0.0,
                float(self.death_kind),
                self.d0,
                self.log_a,
                self.phi_near,
                self.phi_far,
                self.phi_radius,
                1.0 if self.include_self else 0.0,
                self.phi_min_region,
            ],
            dtype=np.float64,
        )


class RateModel:
    """Birth and death rates of a spatial birth-and-death process.

    Subclasses provide the total birth mass B(t, eta), a sampler for the
    normalised birth density, pointwise densities (needed for thinning),
    and per-particle death rates.  ``death_rate`` receives the particle id,
    not its position, so that self-exclusion is unambiguous.

    Contract checked by the test-suite on sampled inputs::

        birth_mass(t, eta) <= birth_sup_mass(eta) <= c1 |eta| + c2
        0 <= death_rate(pid, t, eta) <= death_bound(pid, eta) <= death_sup
    """

    dim: int = 1
    death_sup: float = 0.0
    growth_constants: tuple = (0.0, 0.0)
    time_homogeneous: bool = True

    def birth_mass(self, t: float, eta: Configuration) -> float:
        raise NotImplementedError

    def sample_birth(self, t: float, eta: Configuration, stream) -> Point:
        raise NotImplementedError

    def birth_density(self, x, t: float, eta: Configuration) -> float:
        raise NotImplementedError

    def birth_sup_mass(self, eta: Configuration) -> float:
        return self.birth_mass(0.0, eta)

    def birth_sup_density(self, x, eta: Configuration) -> float:
        return self.birth_density(x, 0.0, eta)

    def sample_birth_sup(self, eta: Configuration, stream) -> Point:
        return self.sample_birth(0.0, eta, stream)

    def death_rate(self, pid: int, t: float, eta: Configuration) -> float:
        raise NotImplementedError

    def death_bound(self, pid: int, eta: Configuration) -> float:
        """Upper bound on death_rate(pid, s, eta) over all s; default death_sup."""
        return self.death_sup

    def kernel_params(self) -> FamilyParams | None:
        return None

    def chain_params(self):
        """ChainParams of the comparison chain bounding |eta cap region|, if any."""
        return None


def total_death_rate(model: RateModel, t: float, eta: Configuration) -> float:
    """Sum of death rates over the configuration (0 for the empty one)."""
    return math.fsum(model.death_rate(pid, t, eta) for pid in eta)


class _UniformBirth(RateModel):
    """Births uniform on a region with mass proportional to a count."""

    region: Region
    birth_rate: float
    birth_count_all: bool = False

    def _count(self, eta: Configuration) -> int:
        return len(eta) if self.birth_count_all else restrict_count(eta, self.region)

    def birth_mass(self, t, eta):
        return self.birth_rate * self._count(eta)

    def sample_birth(self, t, eta, stream):
        return self.region.sample(stream)

    def birth_density(self, x, t, eta):
        if not self.region.contains(x):
            return 0.0
        return self.birth_rate * self._count(eta) / self.region.volume

    def _box_arrays(self):
        if not isinstance(self.region, Box):
            return None
        return self.region.lo, self.region.hi


class ConstantRateModel(_UniformBirth):
    """Uniform births on a region at rate ``birth_rate`` per particle, constant deaths.

    ``immigration`` adds a constant birth mass, so B = birth_rate * count +
    immigration.  With ``birth_rate = 0`` this is the pure-death process,
    with ``death = 0`` a Yule-type pure-birth process.
    """

    def __init__(self, region: Region, birth_rate: float = 0.0, death: float = 0.0,
                 birth_count_all: bool = True, immigration: float = 0.0):
        if birth_rate < 0 or death < 0 or immigration < 0:
            raise ValueError("rates must be nonnegative")
        self.region = region
        self.dim = region.dim
        self.birth_rate = float(birth_rate)
        self.death = float(death)
        self.immigration = float(immigration)
        self.birth_count_all = birth_count_all
        self.death_sup = self.death
        self.growth_constants = (self.birth_rate, self.immigration)

    def birth_mass(self, t, eta):
        return self.birth_rate * self._count(eta) + self.immigration

    def birth_density(self, x, t, eta):
        if not self.region.contains(x):
            return 0.0
        return self.birth_mass(t, eta) / self.region.volume

    def death_rate(self, pid, t, eta):
        return self.death

    def kernel_params(self):
        box = self._box_arrays()
        if box is None or self.immigration > 0:
            return None
        return FamilyParams(dim=self.dim, lo=box[0], hi=box[1], birth_rate=self.birth_rate,
                            birth_count_all=self.birth_count_all, death_kind=0, d0=self.death)


class PureBirthModel(ConstantRateModel):
    """Pure-birth process with birth mass lambda * |eta|, births uniform on a region."""

    def __init__(self, region: Region, lam: float, immigration: float = 0.0):
        super().__init__(region, birth_rate=lam, death=0.0, birth_count_all=True,
                         immigration=immigration)
        self.lam = float(lam)


# --------------------------------------------------------------------------
# aggregation family


@dataclass(frozen=True)
class StepKernel:
    """Radial step interaction phi(z) = near if |z| <= radius else far."""

    near: float
    far: float = 0.0
    radius: float = math.inf

    def __post_init__(self):
        if self.near < 0 or self.far < 0:
            raise ValueError("phi must be nonnegative")

    def __call__(self, z) -> float:
        r2 = sum(v * v for v in z)
        return self.near if r2 <= self.radius * self.radius else self.far

    def min_over(self, region: Region) -> float:
        """Exact infimum of phi(x - y) over x, y in the region."""
        if self.radius >= region.diameter():
            return self.near
        return min(self.near, self.far)


@dataclass
class AggregationParams:
    phi: Callable
    a: float
    c: float
    region: Region
    include_self: bool = True
    c_birth: float | None = None

    def __post_init__(self):
        errors = self.violations()
        if errors:
            raise ValueError("; ".join(errors))

    def violations(self) -> list[str]:
        errs = []
        if not self.a > 1:
            errs.append(f"a must exceed 1 (got {self.a})")
        if not self.c > 0:
            errs.append(f"c must be positive (got {self.c})")
        if self.c_birth is not None and self.c_birth < self.c:
            errs.append(f"c_birth must be >= c (got {self.c_birth})")
        if self.region.volume <= 0:
            errs.append("region must have positive volume")
        if not errs and self.phi_min_region() < math.log(self.a) * (1 - 1e-12):
            errs.append("phi(x - y) must be >= log a for x, y in the region")
        return errs

    def phi_min_region(self, samples: int = 256) -> float:
        if isinstance(self.phi, StepKernel):
            return self.phi.min_over(self.region)
        # sampled check for user kernels
        from .rng import Stream

        stream = Stream.from_seed(0)
        lo = math.inf
        for _ in range(samples):
            x = self.region.sample(stream)
            y = self.region.sample(stream)
            lo = min(lo, self.phi(tuple(u - v for u, v in zip(x, y))), self.phi((0.0,) * len(x)))
        return lo

    @property
    def birth_rate(self) -> float:
        return self.c if self.c_birth is None else self.c_birth


def aggregation_death_rate(params: AggregationParams, pid: int, eta: Configuration) -> float:
    """exp(-sum phi(x - y)) over y in eta (or eta without x)."""
    if pid not in eta:
        raise KeyError(f"particle {pid} is not in the configuration")
    x = eta[pid]
    s = 0.0
    for qid, y in eta.items():
        if qid == pid and not params.include_self:
            continue
        s += params.phi(tuple(u - v for u, v in zip(x, y)))
    return math.exp(-s)


class AggregationModel(_UniformBirth):
    """Aggregation model: crowding suppresses death.

    Births are uniform on the region with mass ``c_birth * |eta cap region|``
    (monotone in eta, and at least c per particle in the region).
    """

    def __init__(self, params: AggregationParams):
        self.params = params
        self.region = params.region
        self.dim = params.region.dim
        self.birth_rate = params.birth_rate
        self.birth_count_all = False
        self._phi_min = params.phi_min_region()
        self._phi0 = params.phi((0.0,) * self.dim)
        self.death_sup = math.exp(-self._phi0) if params.include_self else 1.0
        self.growth_constants = (self.birth_rate, 0.0)

    def death_rate(self, pid, t, eta):
        return aggregation_death_rate(self.params, pid, eta)

    def death_bound(self, pid, eta):
        if not self.region.contains(eta[pid]):
            return self.death_sup
        n = restrict_count(eta, self.region) - (0 if self.params.include_self else 1)
        return math.exp(-self._phi_min * n)

    def kernel_params(self):
        box = self._box_arrays()
        if box is None or not isinstance(self.params.phi, StepKernel):
            return None
        phi = self.params.phi
        return FamilyParams(
            dim=self.dim, lo=box[0], hi=box[1], birth_rate=self.birth_rate, death_kind=2,
            phi_near=phi.near, phi_far=phi.far, phi_radius=phi.radius,
            include_self=self.params.include_self, phi_min_region=self._phi_min,
        )

    def chain_params(self):
        from .analytics import ChainParams

        return ChainParams(c=self.params.c, a=self.params.a)


class ComparisonModel(_UniformBirth):
    """Lower comparison process of the aggregation model.

    Births uniform on the region with mass c |eta cap region|; particles in
    the region die at rate a^-|eta|, particles outside never die.
    """

    def __init__(self, region: Region, a: float, c: float):
        if region.volume <= 0:
            raise ValueError("comparison model needs a region with positive volume")
        if not a > 1 or not c > 0:
            raise ValueError("need a > 1 and c > 0")
        self.region = region
        self.dim = region.dim
        self.a = float(a)
        self.c = float(c)
        self.birth_rate = self.c
        self.birth_count_all = False
        self._log_a = math.log(self.a)
        self.death_sup = 1.0 / self.a
        self.growth_constants = (self.c, 0.0)

    def death_rate(self, pid, t, eta):
        if not self.region.contains(eta[pid]):
            return 0.0
        return math.exp(-self._log_a * len(eta))

    def death_bound(self, pid, eta):
        return self.death_rate(pid, 0.0, eta)

    def kernel_params(self):
        box = self._box_arrays()
        if box is None:
            return None
        return FamilyParams(dim=self.dim, lo=box[0], hi=box[1], birth_rate=self.c,
                            death_kind=1, log_a=self._log_a)

    def chain_params(self):
        from .analytics import ChainParams

        return ChainParams(c=self.c, a=self.a)


def comparison_model(params: AggregationParams) -> ComparisonModel:
    return ComparisonModel(params.region, params.a, params.c)


class ContactModel(RateModel):
    """Contact process in continuum: b(x, eta) = lam sum_y k(x - y), d = 1.

    ``k`` is the uniform probability density on a ball of radius
    ``kernel_radius``, so the birth mass is lam |eta|.
    """

    def __init__(self, dim: int, lam: float, kernel_radius: float, death: float = 1.0):
        self.dim = dim
        self.lam = float(lam)
        self.kernel_radius = float(kernel_radius)
        self.death = float(death)
        self.death_sup = self.death
        self.growth_constants = (self.lam, 0.0)
        self._kernel_ball = Ball((0.0,) * dim, self.kernel_radius)

    def birth_mass(self, t, eta):
        return self.lam * len(eta)

    def sample_birth(self, t, eta, stream):
        ids = eta.ids()
        parent = eta[ids[min(int(stream.uniform() * len(ids)), len(ids) - 1)]]
        off = self._kernel_ball.sample(stream)
        return tuple(p + o for p, o in zip(parent, off))

    def birth_density(self, x, t, eta):
        vol = self._kernel_ball.volume
        r2 = self.kernel_radius**2
        hits = sum(1 for y in eta.points() if sum((u - v) ** 2 for u, v in zip(x, y)) <= r2)
        return self.lam * hits / vol

    def death_rate(self, pid, t, eta):
        return self.death


class TimeModulatedModel(RateModel):
    """Scales the birth rate of a homogeneous model by g(t) with 0 <= g <= g_sup."""

    def __init__(self, base: RateModel, g: Callable[[float], float], g_sup: float):
        self.base = base
        self.g = g
        self.g_sup = float(g_sup)
        self.dim = base.dim
        self.death_sup = base.death_sup
        c1, c2 = base.growth_constants
        self.growth_constants = (c1 * self.g_sup, c2 * self.g_sup)
        self.time_homogeneous = False

    def birth_mass(self, t, eta):
        return self.g(t) * self.base.birth_mass(0.0, eta)

    def sample_birth(self, t, eta, stream):
        return self.base.sample_birth(0.0, eta, stream)

    def birth_density(self, x, t, eta):
        return self.g(t) * self.base.birth_density(x, 0.0, eta)

    def birth_sup_mass(self, eta):
        return self.g_sup * self.base.birth_sup_mass(eta)

    def birth_sup_density(self, x, eta):
        return self.g_sup * self.base.birth_sup_density(x, eta)

    def sample_birth_sup(self, eta, stream):
        return self.base.sample_birth_sup(eta, stream)

    def death_rate(self, pid, t, eta):
        return self.base.death_rate(pid, 0.0, eta)

    def death_bound(self, pid, eta):
        return self.base.death_bound(pid, eta)
