"""Domain types and inter-arrival dynamics of the two-class intersection PDMP.

Classes are labelled 1 and 2.  Every headway lookup is ``theta[leader, follower]``
with 1-based class labels, so ``HeadwayMatrix.at(1, 2)`` is the gap a class-2
vehicle keeps behind a class-1 leader.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CLASSES = (1, 2)


class ModelError(ValueError):
    """Raised when a parameter or state violates a model invariant."""


def other(k: int) -> int:
    """The opposing class: other(1) == 2 and other(2) == 1."""
    if k not in CLASSES:
        raise ModelError(f"unknown class {k!r}")
    return 3 - k


@dataclass(frozen=True)
class HeadwayMatrix:
    """Minimal crossing headways in seconds, indexed (leader, follower)."""

    theta: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        arr = np.asarray(self.theta, dtype=float)
        if arr.shape != (2, 2):
            raise ModelError("headway matrix must be 2x2")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ModelError("headways must be finite and nonnegative")
        for i in range(2):
            j = 1 - i
            if not arr[i, j] > arr[i, i]:
                raise ModelError(
                    f"theta[{i + 1},{j + 1}]={arr[i, j]} must exceed "
                    f"theta[{i + 1},{i + 1}]={arr[i, i]} (cross-class dominance)"
                )
        object.__setattr__(self, "theta", tuple(tuple(float(v) for v in row) for row in arr))

    @classmethod
    def of(cls, rows: Sequence[Sequence[float]]) -> "HeadwayMatrix":
        return cls(tuple(tuple(r) for r in rows))  # type: ignore[arg-type]

    def at(self, leader: int, follower: int) -> float:
        return self.theta[leader - 1][follower - 1]

    @property
    def array(self) -> np.ndarray:
        return np.array(self.theta, dtype=float)

    def scaled(self, c: float) -> "HeadwayMatrix":
        return HeadwayMatrix.of(self.array * c)


@dataclass(frozen=True)
class CrossingTimeDist:
    """Bounded crossing-time law.

    ``family`` is one of ``deterministic`` (params ``(r,)``), ``uniform``
    (``(a, b)``) or ``discrete`` (``(values, probs)``).
    """

    family: str
    params: tuple

    def __post_init__(self):
        if self.family == "deterministic":
            (r,) = self.params
            if not r > 0:
                raise ModelError("deterministic crossing time must be positive")
        elif self.family == "uniform":
            a, b = self.params
            if not 0 < a <= b < math.inf:
                raise ModelError("uniform crossing time needs 0 < a <= b < inf")
        elif self.family == "discrete":
            values, probs = self.params
            values = tuple(float(v) for v in values)
            probs = tuple(float(p) for p in probs)
            if len(values) != len(probs) or not values:
                raise ModelError("discrete law needs matching values and probs")
            if min(values) <= 0 or any(p < 0 for p in probs):
                raise ModelError("discrete law needs positive values, nonnegative probs")
            if not math.isclose(sum(probs), 1.0, abs_tol=1e-12):
                raise ModelError("discrete probabilities must sum to 1")
            object.__setattr__(self, "params", (values, probs))
        else:
            raise ModelError(f"unknown crossing-time family {self.family!r}")

    @classmethod
    def deterministic(cls, r: float) -> "CrossingTimeDist":
        return cls("deterministic", (float(r),))

    @classmethod
    def uniform(cls, a: float, b: float) -> "CrossingTimeDist":
        return cls("uniform", (float(a), float(b)))

    @classmethod
    def discrete(cls, values: Iterable[float], probs: Iterable[float]) -> "CrossingTimeDist":
        return cls("discrete", (tuple(values), tuple(probs)))

    @classmethod
    def two_point(cls, mean: float, var: float) -> "CrossingTimeDist":
        """Symmetric two-point law with the given mean and variance."""
        if var == 0:
            return cls.deterministic(mean)
        s = math.sqrt(var)
        if s >= mean:
            raise ModelError("two-point law would put mass at a nonpositive time")
        return cls.discrete((mean - s, mean + s), (0.5, 0.5))

    @property
    def mean(self) -> float:
        if self.family == "deterministic":
            return self.params[0]
        if self.family == "uniform":
            a, b = self.params
            return 0.5 * (a + b)
        values, probs = self.params
        return float(sum(v * p for v, p in zip(values, probs)))

    @property
    def var(self) -> float:
        if self.family == "deterministic":
            return 0.0
        if self.family == "uniform":
            a, b = self.params
            return (b - a) ** 2 / 12.0
        values, probs = self.params
        m = self.mean
        return float(sum(p * (v - m) ** 2 for v, p in zip(values, probs)))

    @property
    def second_moment(self) -> float:
        return self.var + self.mean**2

    @property
    def r_min(self) -> float:
        if self.family == "discrete":
            return min(v for v, p in zip(*self.params) if p > 0)
        return self.params[0]

    @property
    def r_max(self) -> float:
        if self.family == "deterministic":
            return self.params[0]
        if self.family == "uniform":
            return self.params[1]
        return max(v for v, p in zip(*self.params) if p > 0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family == "deterministic":
            return np.full(size, self.params[0])
        if self.family == "uniform":
            return rng.uniform(self.params[0], self.params[1], size)
        values, probs = self.params
        return rng.choice(np.asarray(values), size=size, p=np.asarray(probs))

    def scaled(self, c: float) -> "CrossingTimeDist":
        if self.family == "discrete":
            values, probs = self.params
            return CrossingTimeDist.discrete([v * c for v in values], probs)
        return CrossingTimeDist(self.family, tuple(v * c for v in self.params))


@dataclass(frozen=True)
class DemandProfile:
    """Poisson arrival rates per class [veh/sec]."""

    lam: tuple[float, float]

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lam)
        if len(lam) != 2 or any(v < 0 or not math.isfinite(v) for v in lam):
            raise ModelError("demand must be two finite nonnegative rates")
        object.__setattr__(self, "lam", lam)

    @property
    def total(self) -> float:
        return self.lam[0] + self.lam[1]

    @property
    def p(self) -> tuple[float, float]:
        total = self.total
        if total <= 0:
            raise ModelError("demand distribution undefined at zero demand")
        return (self.lam[0] / total, self.lam[1] / total)

    def scaled(self, c: float) -> "DemandProfile":
        return DemandProfile((self.lam[0] * c, self.lam[1] * c))


@dataclass(frozen=True)
class IntersectionSpec:
    headways: HeadwayMatrix
    crossing: CrossingTimeDist
    demand: DemandProfile


@dataclass(slots=True, eq=False)
class VehicleRecord:
    k: int
    n: int
    virtual_arrival: float
    crossing_time: float
    service_time: float = 0.0
    set_crossing_time: float | None = None
    departure: float | None = None

    @property
    def id(self) -> tuple[int, int]:
        return (self.k, self.n)


@dataclass
class HybridState:
    """Crossing sequence G plus residual service times.

    Only the head of the sequence is being served, so every queued vehicle's
    residual is its full service time and only ``head_residual`` is stored.
    ``x`` holds the per-class residual sums and is kept in sync by the
    mutators in this module and in :mod:`sigfree.policies`.
    """

    sequence: deque = field(default_factory=deque)
    head_residual: float = 0.0
    clock: float = 0.0
    last_class: int = 1
    x: list = field(default_factory=lambda: [0.0, 0.0])
    counts: list = field(default_factory=lambda: [0, 0])
    tail_run: int = 0

    def __len__(self) -> int:
        return len(self.sequence)

    @property
    def head(self) -> VehicleRecord | None:
        return self.sequence[0] if self.sequence else None

    @property
    def tail_class(self) -> int:
        """Class at the end of G, or of the last discharged vehicle when empty."""
        return self.sequence[-1].k if self.sequence else self.last_class

    @property
    def serving_class(self) -> int:
        return self.sequence[0].k if self.sequence else self.last_class

    def residual(self, index: int) -> float:
        return self.head_residual if index == 0 else self.sequence[index].service_time

    def residuals(self) -> dict[tuple[int, int], float]:
        return {v.id: self.residual(i) for i, v in enumerate(self.sequence)}

    def classes(self) -> list[int]:
        return [v.k for v in self.sequence]

    def check(self) -> None:
        """Validate invariants; raises ModelError on corruption."""
        sums = [0.0, 0.0]
        counts = [0, 0]
        for i, v in enumerate(self.sequence):
            r = self.residual(i)
            if not r > 0:
                raise ModelError(f"vehicle {v.id} has nonpositive residual {r}")
            if i > 0 and r != v.service_time:
                raise ModelError(f"queued vehicle {v.id} residual differs from service")
            sums[v.k - 1] += r
            counts[v.k - 1] += 1
        if counts != self.counts:
            raise ModelError("class counts out of sync")
        for k in range(2):
            if not math.isclose(sums[k], self.x[k], rel_tol=1e-9, abs_tol=1e-7):
                raise ModelError(f"aggregate X_{k + 1} out of sync: {self.x[k]} vs {sums[k]}")
        run = 0
        for v in reversed(self.sequence):
            if v.k != self.sequence[-1].k:
                break
            run += 1
        if run != self.tail_run:
            raise ModelError("tail run length out of sync")


def aggregate(state: HybridState) -> tuple[float, float]:
    """Per-class sum of residual service times (zero for empty classes)."""
    sums = [0.0, 0.0]
    for i, v in enumerate(state.sequence):
        sums[v.k - 1] += state.residual(i)
    return (sums[0], sums[1])


def workload(state: HybridState) -> float:
    return state.x[0] + state.x[1]


def pop_head(state: HybridState) -> VehicleRecord:
    v = state.sequence.popleft()
    k = v.k - 1
    state.counts[k] -= 1
    state.x[k] = state.x[k] - state.head_residual if state.counts[k] else 0.0
    if state.x[k] < 0:
        state.x[k] = 0.0
    if not state.sequence:
        state.tail_run = 0
    elif state.tail_run > len(state.sequence):
        state.tail_run -= 1
    state.last_class = v.k
    if state.sequence:
        state.head_residual = state.sequence[0].service_time
    else:
        state.head_residual = 0.0
    return v


def advance(state: HybridState, dt: float) -> list[VehicleRecord]:
    """Drain the head of G for ``dt`` seconds; return vehicles that departed.

    Departures are stamped with their exact departure time and returned in
    sequence order.
    """
    if dt < 0:
        raise ModelError(f"cannot advance by negative dt={dt}")
    departed = []
    seq = state.sequence
    while seq and state.head_residual <= dt:
        r = state.head_residual
        dt -= r
        state.clock += r
        v = pop_head(state)
        v.departure = state.clock
        departed.append(v)
    if seq:
        state.head_residual -= dt
        k = seq[0].k - 1
        state.x[k] -= dt
    state.clock += dt
    return departed


def per_vehicle_delay(record: VehicleRecord, departure_time: float | None = None) -> float:
    """Waiting plus headway spacing beyond the vehicle's own crossing time."""
    t = record.departure if departure_time is None else departure_time
    if t is None:
        raise ModelError(f"vehicle {record.id} has not departed")
    if t < record.virtual_arrival + record.crossing_time - 1e-9:
        raise ModelError(f"vehicle {record.id} departs before it could have crossed")
    return t - record.virtual_arrival - record.crossing_time


def sample_interarrival(rng: np.random.Generator, demand: DemandProfile) -> tuple[int, float] | None:
    """Draw (class, gap) for the superposed Poisson stream; None at zero demand."""
    total = demand.total
    if total <= 0:
        return None
    dt = rng.exponential(1.0 / total)
    k = 1 if rng.random() * total < demand.lam[0] else 2
    return k, float(dt)


class ArrivalStream:
    """Seeded, block-buffered arrival generator.

    Gaps are unit exponentials divided by the total rate, classes come from
    uniforms compared to ``p1`` and crossing times from the crossing law, each
    on its own child stream.  Scaling demand along a fixed ``p`` therefore
    keeps the same underlying draws (coupled streams).
    """

    BLOCK = 4096

    def __init__(self, demand: DemandProfile, crossing: CrossingTimeDist, seed):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        gap_ss, cls_ss, r_ss = ss.spawn(3)
        self._gap_rng = np.random.default_rng(gap_ss)
        self._cls_rng = np.random.default_rng(cls_ss)
        self._r_rng = np.random.default_rng(r_ss)
        self.total = demand.total
        self.p1 = demand.lam[0] / self.total if self.total > 0 else 0.0
        self.crossing = crossing
        self._i = self.BLOCK
        self._gaps = self._cls = self._rs = None

    def _refill(self):
        n = self.BLOCK
        self._gaps = (self._gap_rng.standard_exponential(n) / self.total).tolist()
        self._cls = np.where(self._cls_rng.random(n) < self.p1, 1, 2).tolist()
        self._rs = self.crossing.sample(self._r_rng, n).tolist()
        self._i = 0

    def next(self) -> tuple[float, int, float]:
        """Return (gap, class, crossing_time)."""
        if self._i >= self.BLOCK:
            self._refill()
        i = self._i
        self._i = i + 1
        return self._gaps[i], self._cls[i], self._rs[i]
