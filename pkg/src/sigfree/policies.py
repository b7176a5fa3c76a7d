"""FIFO, min-switchover and longer-queue-first arrival rules.

Each rule inserts a freshly arrived vehicle into the crossing sequence G and
fixes its service time (headway behind its in-sequence predecessor plus its
crossing time).  The vehicle currently crossing (head of G) is never moved.

``mode="exact"`` charges the headway each vehicle physically needs behind its
actual predecessor.  ``mode="aggregate"`` reproduces the textbook jump laws for
X verbatim (MS charges theta_kk whenever the system is busy; LQF charges the
switchover headway to every shorter-class arrival); event logs produced in
that mode may under-charge headways and are meant for drift experiments only.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .core import HeadwayMatrix, HybridState, ModelError, VehicleRecord, other

MODES = ("exact", "aggregate")


class TieRule(str, Enum):
    MAINTAIN = "maintain-serving-class"
    PREFER_1 = "prefer-class-1"


@dataclass
class FifoState:
    y: int = 1


@dataclass
class MsState:
    z: int = 1


@dataclass
class LqfState:
    beta: float = 1.0
    tie_rule: TieRule = TieRule.MAINTAIN

    def __post_init__(self):
        if not self.beta > 0:
            raise ModelError("LQF comparator beta must be positive")
        self.tie_rule = TieRule(self.tie_rule)


def _insert(state: HybridState, index: int, v: VehicleRecord) -> None:
    """Place ``v`` at ``index`` (>= 1 unless G is empty) and keep bookkeeping in sync."""
    seq = state.sequence
    n = len(seq)
    if n == 0:
        seq.append(v)
        state.head_residual = v.service_time
        state.tail_run = 1
    elif index >= n:
        run = state.tail_run + 1 if seq[-1].k == v.k else 1
        seq.append(v)
        state.tail_run = run
    else:
        if index < 1:
            raise ModelError("the crossing vehicle cannot be displaced")
        run = state.tail_run
        if v.k == seq[-1].k and index >= n - run:
            run += 1
        elif index > n - run:
            run = n - index
        seq.insert(index, v)
        state.tail_run = run
    state.x[v.k - 1] += v.service_time
    state.counts[v.k - 1] += 1


def _reprice(state: HybridState, index: int, service: float) -> None:
    """Set the service time of a queued (non-head) vehicle."""
    v = state.sequence[index]
    state.x[v.k - 1] += service - v.service_time
    v.service_time = service


def _predecessor_class(state: HybridState, index: int) -> int:
    return state.sequence[index - 1].k if index > 0 else state.last_class


def _place_exact(state: HybridState, index: int, v: VehicleRecord, theta: HeadwayMatrix) -> None:
    index = min(index, len(state.sequence))
    if not state.sequence:
        index = 0
    v.service_time = theta.at(_predecessor_class(state, index), v.k) + v.crossing_time
    _insert(state, index, v)
    nxt = index + 1
    if nxt < len(state.sequence):
        w = state.sequence[nxt]
        _reprice(state, nxt, theta.at(v.k, w.k) + w.crossing_time)


def fifo_arrival(state: HybridState, aux: FifoState, v: VehicleRecord, theta: HeadwayMatrix) -> None:
    """Append at the tail of G with service theta[y, k] + R."""
    y = state.tail_class
    v.service_time = theta.at(y, v.k) + v.crossing_time
    _insert(state, len(state.sequence), v)
    aux.y = v.k


def _after_last_of_class(state: HybridState, k: int) -> int | None:
    """Index just after the last class-k vehicle in G, or None if there is none."""
    if not state.counts[k - 1]:
        return None
    n = len(state.sequence)
    if state.sequence[-1].k == k:
        return n
    return n - state.tail_run


def ms_arrival(
    state: HybridState, aux: MsState, v: VehicleRecord, theta: HeadwayMatrix, mode: str = "exact"
) -> None:
    """Join the run of the arrival's own class (tail of G if it has none)."""
    busy = bool(state.sequence)
    idx = _after_last_of_class(state, v.k)
    if idx is None:
        idx = len(state.sequence)
    if mode == "exact":
        _place_exact(state, idx, v, theta)
    elif mode == "aggregate":
        k = v.k
        v.service_time = (theta.at(k, k) if busy else theta.at(other(k), k)) + v.crossing_time
        _insert(state, idx, v)
    else:
        raise ModelError(f"unknown mode {mode!r}")
    aux.z = state.serving_class


def ms_sync(state: HybridState, aux: MsState) -> None:
    """Refresh Z after departures: it follows the class being discharged."""
    aux.z = state.serving_class


def lqf_longer(state: HybridState, aux: LqfState) -> int:
    """Q: 1 if X1 > beta X2, 2 if X1 < beta X2, 0 on a tie."""
    x1, x2 = state.x
    bx2 = aux.beta * x2
    if x1 > bx2:
        return 1
    if x1 < bx2:
        return 2
    return 0


def lqf_arrival(
    state: HybridState, aux: LqfState, v: VehicleRecord, theta: HeadwayMatrix, mode: str = "exact"
) -> None:
    """Append if the arrival's class is the longer queue, otherwise interleave.

    A shorter-class arrival is slotted behind the first opposing vehicle that
    follows the last vehicle of its own class (behind the head when it has
    none), so it follows and precedes opposing vehicles; exactly one opposing
    vehicle is pushed back.
    """
    k = v.k
    q = lqf_longer(state, aux)
    seq = state.sequence
    n = len(seq)
    if q == 0 and mode == "exact" and n:
        q = state.serving_class if aux.tie_rule is TieRule.MAINTAIN else 1
    shorter = q == other(k)
    if not shorter or n == 0:
        idx = n
    elif seq[-1].k == k:
        idx = n
    else:
        idx = n + 1 - state.tail_run
    if mode == "exact":
        _place_exact(state, idx, v, theta)
        return
    if mode != "aggregate":
        raise ModelError(f"unknown mode {mode!r}")
    # literal jump law on X
    j = other(k)
    if not shorter:
        v.service_time = theta.at(k, k) + v.crossing_time
        _insert(state, idx, v)
        return
    v.service_time = theta.at(j, k) + v.crossing_time
    idx = min(idx, n)
    _insert(state, idx, v)
    bump = theta.at(j, k) - theta.at(j, j)
    target = None
    if idx + 1 < len(seq) and seq[idx + 1].k == j:
        target = idx + 1
    else:
        for i in range(len(seq) - 1, -1, -1):
            if seq[i].k == j:
                target = i
                break
    if target is None:
        raise ModelError("LQF shorter-class arrival with no opposing vehicle")
    if target == 0:
        state.head_residual += bump
        seq[0].service_time += bump
        state.x[j - 1] += bump
    else:
        _reprice(state, target, seq[target].service_time + bump)


def switchover_count(classes) -> int:
    """Number of consecutive departures whose classes differ."""
    classes = list(classes)
    return sum(1 for a, b in zip(classes, classes[1:]) if a != b)


class Policy:
    """Bundles an arrival rule with its auxiliary state."""

    name = "?"

    def __init__(self, theta: HeadwayMatrix, mode: str = "exact"):
        if mode not in MODES:
            raise ModelError(f"unknown mode {mode!r}")
        self.theta = theta
        self.mode = mode

    def on_arrival(self, state: HybridState, v: VehicleRecord) -> None:
        raise NotImplementedError


class Fifo(Policy):
    name = "FIFO"

    def __init__(self, theta, mode="exact"):
        super().__init__(theta, mode)
        self.aux = FifoState()

    def on_arrival(self, state, v):
        fifo_arrival(state, self.aux, v, self.theta)


class MinSwitch(Policy):
    name = "MS"

    def __init__(self, theta, mode="exact"):
        super().__init__(theta, mode)
        self.aux = MsState()

    def on_arrival(self, state, v):
        ms_arrival(state, self.aux, v, self.theta, self.mode)


class LongerQueueFirst(Policy):
    name = "LQF"

    def __init__(self, theta, beta=1.0, tie_rule=TieRule.MAINTAIN, mode="exact"):
        super().__init__(theta, mode)
        self.aux = LqfState(beta, TieRule(tie_rule))

    def on_arrival(self, state, v):
        lqf_arrival(state, self.aux, v, self.theta, self.mode)


def make_policy(name: str, theta: HeadwayMatrix, beta: float = 1.0,
                tie_rule: str = TieRule.MAINTAIN, mode: str = "exact") -> Policy:
    key = name.upper()
    if key == "FIFO":
        return Fifo(theta, mode)
    if key == "MS":
        return MinSwitch(theta, mode)
    if key == "LQF":
        return LongerQueueFirst(theta, beta, tie_rule, mode)
    raise ModelError(f"unknown policy {name!r}")
