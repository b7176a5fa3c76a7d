"""Crossing-time windows and kinematic approach-zone micro-simulation.

A sequencing policy orders vehicles; set crossing times follow from

    t_set[0] = t_ms[0]
    t_set[i] = max(t_ms[i], t_set[i-1] + theta[leader, follower] + R_mean)

with the headway indexed (leader class, follower class).  Vehicles then
absorb their delay over the approach zone with a bang-bang speed rule.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import HeadwayMatrix, ModelError
from .policies import TieRule


@dataclass(frozen=True)
class ApproachSpec:
    L: float = 150.0
    v_max: float = 15.0
    a_plus: float = 2.0
    a_minus: float = -2.0
    dt: float = 0.1
    safety_gap: float = 5.0

    def __post_init__(self):
        for name in ("L", "v_max", "a_plus", "dt", "safety_gap"):
            if not getattr(self, name) > 0:
                raise ModelError(f"approach parameter {name} must be positive")
        if not self.a_minus < 0:
            raise ModelError("a_minus must be negative")

    @property
    def free_flow_time(self) -> float:
        return self.L / self.v_max


@dataclass
class ScheduleEntry:
    k: int
    n: int
    t_e: float
    t_ms: float
    t_set: float = math.nan
    earliest: float = math.nan  # t_ms, or a later reachable time once slowed down

    @property
    def vehicle(self) -> tuple[int, int]:
        return (self.k, self.n)

    def __post_init__(self):
        if math.isnan(self.earliest):
            self.earliest = self.t_ms


def minimal_set_time(t_e: float, approach: ApproachSpec) -> float:
    return approach.L / approach.v_max + t_e


def apply_set_times(schedule: list[ScheduleEntry], theta: HeadwayMatrix, r_mean: float,
                    start: int = 0) -> None:
    """Recompute t_set from position ``start`` onward (entries before stay put)."""
    for i in range(start, len(schedule)):
        e = schedule[i]
        if i == 0:
            e.t_set = e.earliest
        else:
            lead = schedule[i - 1]
            e.t_set = max(e.earliest, lead.t_set + theta.at(lead.k, e.k) + r_mean)


def schedule_violations(schedule, theta: HeadwayMatrix, r_mean: float, tol: float = 1e-9) -> int:
    bad = 0
    for lead, fol in zip(schedule, schedule[1:]):
        if fol.t_set - lead.t_set < theta.at(lead.k, fol.k) + r_mean - tol:
            bad += 1
        if fol.t_set < fol.t_ms - tol:
            bad += 1
    return bad


def fifo_schedule(arrivals, theta: HeadwayMatrix, r_mean: float, approach: ApproachSpec) -> list[ScheduleEntry]:
    """Arrival order; arrivals are (t_e, k) pairs sorted by t_e."""
    out: list[ScheduleEntry] = []
    counts = [0, 0]
    for t_e, k in arrivals:
        counts[k - 1] += 1
        e = ScheduleEntry(k, counts[k - 1], t_e, minimal_set_time(t_e, approach))
        out.append(e)
        apply_set_times(out, theta, r_mean, len(out) - 1)
    return out


def ms_insert_position(schedule: list[ScheduleEntry], new: ScheduleEntry, theta: HeadwayMatrix,
                       r_mean: float, committed: int = 0) -> int:
    """Slot for a min-switchover arrival.

    Behind the last same-class vehicle if the newcomer can join its platoon;
    otherwise in the first later gap wide enough for two switchovers; else at
    the tail.  The headways are indexed by the classes actually involved.  Positions before ``committed`` are never used.
    """
    k = new.k
    f = None
    for i in range(len(schedule) - 1, -1, -1):
        if schedule[i].k == k:
            f = i
            break
    if f is None:
        return len(schedule)
    gf = schedule[f]
    if new.t_ms <= gf.t_set + theta.at(k, k) + r_mean:
        return max(f + 1, committed)
    j = f
    while j + 1 < len(schedule):
        gj, gn = schedule[j], schedule[j + 1]
        cross = theta.at(k, gn.k) + r_mean
        # the slack keeps room for two switchovers (factor 2 as published)
        if new.t_ms <= gn.t_set + cross and 2 * cross <= gn.t_set - gj.t_set and j + 1 >= committed:
            return j + 1
        j += 1
    return len(schedule)


def ms_schedule_insert(schedule: list[ScheduleEntry], new: ScheduleEntry, theta: HeadwayMatrix,
                       r_mean: float, committed: int = 0) -> list[ScheduleEntry]:
    pos = ms_insert_position(schedule, new, theta, r_mean, committed)
    schedule.insert(pos, new)
    apply_set_times(schedule, theta, r_mean, pos)
    return schedule


def lqf_order(pending: list[ScheduleEntry], theta: HeadwayMatrix, r_mean: float, beta: float,
              tie_rule=TieRule.MAINTAIN, current: int = 1) -> list[ScheduleEntry]:
    """Order uncommitted vehicles by repeatedly discharging the longer temporal queue.

    Each class keeps its arrival order; a class-k vehicle weighs theta_kk + R_mean.
    """
    tie_rule = TieRule(tie_rule)
    queues = {1: [e for e in pending if e.k == 1], 2: [e for e in pending if e.k == 2]}
    for q in queues.values():
        q.sort(key=lambda e: (e.t_e, e.n))
    size = {k: len(queues[k]) * (theta.at(k, k) + r_mean) for k in (1, 2)}
    heads = {1: 0, 2: 0}
    out = []
    c = current
    while heads[1] < len(queues[1]) or heads[2] < len(queues[2]):
        if heads[1] == len(queues[1]):
            c = 2
        elif heads[2] == len(queues[2]):
            c = 1
        else:
            x1, bx2 = size[1], beta * size[2]
            if x1 > bx2:
                c = 1
            elif x1 < bx2:
                c = 2
            elif tie_rule is TieRule.PREFER_1:
                c = 1
        e = queues[c][heads[c]]
        heads[c] += 1
        size[c] -= theta.at(c, c) + r_mean
        out.append(e)
    return out


def lqf_schedule_rebuild(schedule: list[ScheduleEntry], theta: HeadwayMatrix, r_mean: float,
                         beta: float = 1.0, tie_rule=TieRule.MAINTAIN, committed: int = 0,
                         last_class: int = 1) -> list[ScheduleEntry]:
    """Keep the first ``committed`` entries, re-sequence the rest by LQF."""
    fixed = schedule[:committed]
    current = fixed[-1].k if fixed else last_class
    rest = lqf_order(schedule[committed:], theta, r_mean, beta, tie_rule, current)
    out = fixed + rest
    apply_set_times(out, theta, r_mean, committed)
    return out


def online_schedule(policy: str, arrivals, theta: HeadwayMatrix, r_mean: float,
                    approach: ApproachSpec, beta: float = 1.0,
                    tie_rule=TieRule.MAINTAIN) -> list[ScheduleEntry]:
    """Process arrivals one at a time without kinematics; return entries in crossing order.

    At each arrival the vehicles already past their set time leave, and
    those due within the full-speed stopping time keep their slots.
    """
    policy = policy.upper()
    if policy not in ("FIFO", "MS", "LQF"):
        raise ModelError(f"unknown policy {policy!r}")
    horizon = approach.v_max / -approach.a_minus + approach.dt
    done: list[ScheduleEntry] = []
    live: list[ScheduleEntry] = []
    counts = [0, 0]
    for t_e, k in arrivals:
        while live and live[0].t_set <= t_e:
            done.append(live.pop(0))
        counts[k - 1] += 1
        e = ScheduleEntry(k, counts[k - 1], t_e, minimal_set_time(t_e, approach))
        committed = 0
        while committed < len(live) and live[committed].t_set <= t_e + horizon:
            committed += 1
        if not live and done:
            # first vehicle of a new busy period still respects the last crossing
            live.append(e)
            lead = done[-1]
            e.t_set = max(e.earliest, lead.t_set + theta.at(lead.k, e.k) + r_mean)
            continue
        if policy == "FIFO":
            live.append(e)
            start = len(live) - 1
        elif policy == "MS":
            pos = ms_insert_position(live, e, theta, r_mean, committed)
            live.insert(pos, e)
            start = pos
        else:
            live.append(e)
            last = live[committed - 1].k if committed else (done[-1].k if done else 1)
            live[committed:] = lqf_order(live[committed:], theta, r_mean, beta, tie_rule, last)
            start = committed
        _set_from(live, done, theta, r_mean, start)
    return done + live


def _set_from(live, done, theta, r_mean, start):
    for i in range(start, len(live)):
        e = live[i]
        lead = live[i - 1] if i > 0 else (done[-1] if done else None)
        e.t_set = e.earliest if lead is None else max(e.earliest, lead.t_set + theta.at(lead.k, e.k) + r_mean)


# --- trajectory planning -----------------------------------------------------------

def time_to_go(d: float, v: float, approach: ApproachSpec) -> float:
    """Minimal time to cover ``d`` metres from speed ``v`` (accelerate, then cruise)."""
    a, vm = approach.a_plus, approach.v_max
    ramp = (vm * vm - v * v) / (2 * a)
    if ramp > d:
        return (-v + math.sqrt(v * v + 2 * a * d)) / a
    return (vm - v) / a + (d - ramp) / vm


def plan_trajectory(d: float, v: float, t: float, t_set: float, approach: ApproachSpec) -> tuple[float, float]:
    """Return (acceleration command, T_min) for a vehicle ``d`` metres from the line.

    Accelerate when the earliest arrival is not before the set time and the
    vehicle is below v_max; brake when it would arrive early; otherwise hold.
    """
    if v < -1e-9 or v > approach.v_max + 1e-9:
        raise ModelError(f"speed {v} outside [0, v_max]")
    if d < -1e-9 or d > approach.L + 1e-9:
        raise ModelError(f"distance {d} outside [0, L]")
    t_min = t + time_to_go(max(d, 0.0), v, approach)
    if v < approach.v_max and t_min >= t_set:
        return approach.a_plus, t_min
    if v > 0 and t_min < t_set:
        return approach.a_minus, t_min
    return 0.0, t_min


def _step(d: float, v: float, a: float, dt: float, vm: float) -> tuple[float, float]:
    """Exact constant-acceleration step with speed clipped to [0, vm]; returns (distance, v)."""
    if a > 0:
        tc = (vm - v) / a
        if tc < dt:
            return v * tc + 0.5 * a * tc * tc + vm * (dt - tc), vm
    elif a < 0:
        tc = v / -a
        if tc < dt:
            return v * tc + 0.5 * a * tc * tc, 0.0
    return v * dt + 0.5 * a * dt * dt, v + a * dt


def _lookahead_command(d: float, v: float, t: float, t_set: float, ap: ApproachSpec) -> float:
    """Trajectory rule, except a brake (or hold) step is skipped when it would push
    the earliest arrival past the set time; keeps arrivals within one step."""
    a, t_min = plan_trajectory(d, v, t, t_set, ap)
    if a >= 0:
        return a
    for cand in (ap.a_minus, 0.0):
        dd, vv = _step(d, v, cand, ap.dt, ap.v_max)
        if dd >= d:
            continue
        if t + ap.dt + time_to_go(d - dd, vv, ap) <= t_set:
            return cand
    return ap.a_plus if v < ap.v_max else 0.0


# --- micro-simulation --------------------------------------------------------------

@dataclass(eq=False)
class _Car:
    entry: ScheduleEntry
    pos: float = 0.0
    v: float = 0.0
    a: float = 0.0
    crossed: float | None = None


@dataclass
class MicroResult:
    delays: list[tuple]  # (vehicle_id, class, entry_time, crossing_time, delay)
    trajectory: list[tuple] | None
    crossings: list[tuple]  # (crossing_time, t_set, class, n)
    schedule_gaps_ok: bool
    max_set_error: float
    safety_violations: int
    min_spacing: float

    @property
    def mean_delay(self) -> float:
        return float(np.mean([d[4] for d in self.delays])) if self.delays else 0.0

    def write_delays(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vehicle_id", "class", "entry_time", "crossing_time", "delay"])
            for row in self.delays:
                w.writerow([row[0], row[1]] + [f"{x:.9g}" for x in row[2:]])

    def write_trajectory(self, path) -> None:
        if self.trajectory is None:
            raise ModelError("trajectory was not recorded")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "vehicle_id", "class", "position", "speed", "accel"])
            for t, vid, k, x, v, a in self.trajectory:
                w.writerow([f"{t:.9g}", vid, k, f"{x:.9g}", f"{v:.9g}", f"{a:.9g}"])


def bernoulli_arrivals(lam, approach: ApproachSpec, horizon: float, seed, min_gap: float) -> list[tuple[float, int]]:
    """Per-lane Bernoulli entries with success probability lam_k * dt per step.

    A success closer than ``min_gap`` seconds to the lane's previous entry is
    deferred (not dropped), so the entry rate stays lam_k.  Returns
    (entry_time, class) sorted by time then class.
    """
    rng = np.random.default_rng(seed)
    dt = approach.dt
    steps = int(round(horizon / dt))
    spacing = math.ceil(min_gap / dt - 1e-9)
    out = []
    for k in (1, 2):
        p = lam[k - 1] * dt
        if p <= 0:
            continue
        hits = np.flatnonzero(rng.random(steps) < p)
        nxt = -spacing
        for s in hits:
            s = max(int(s), nxt)
            out.append((round(s * dt, 10), k))
            nxt = s + spacing
    out.sort()
    return out


def micro_sim(policy: str, theta: HeadwayMatrix, r_mean: float, approach: ApproachSpec,
              arrivals: list[tuple[float, int]], beta: float = 1.0,
              tie_rule=TieRule.MAINTAIN, record_trajectory: bool = False,
              lookahead: bool = True, strict_safety: bool = True) -> MicroResult:
    """Step the approach zone until every listed arrival has crossed.

    Vehicles enter at speed v_max; each step every vehicle follows the
    trajectory rule toward its set time, and a follower brakes if its next
    position would come within the safety gap of its lane leader.
    """
    policy = policy.upper()
    if policy not in ("FIFO", "MS", "LQF"):
        raise ModelError(f"unknown policy {policy!r}")
    tie_rule = TieRule(tie_rule)
    ap = approach
    dt, L, vm = ap.dt, ap.L, ap.v_max
    brake2 = 2 * -ap.a_minus
    commit_dist = vm * vm / brake2 + vm * dt
    commit_time = vm / -ap.a_minus + dt
    command = _lookahead_command if lookahead else (lambda d, v, t, ts, a: plan_trajectory(d, v, t, ts, a)[0])

    schedule: list[ScheduleEntry] = []
    cars: dict[int, _Car] = {}
    lanes: dict[int, list[_Car]] = {1: [], 2: []}
    counts = [0, 0]
    last_class = 1
    delays, crossings, traj = [], [], [] if record_trajectory else None
    violations = 0
    min_spacing = math.inf
    max_err = 0.0
    gaps_ok = True
    i_arr = 0
    n_arr = len(arrivals)
    step = 0

    def committed_prefix() -> int:
        # vehicles inside the full-speed stopping distance keep their slot
        last = 0
        for i, e in enumerate(schedule):
            car = cars[id(e)]
            if L - car.pos <= commit_dist or e.t_set <= t + commit_time or i == 0:
                last = i + 1
        return last

    def refresh_earliest(t):
        for e in schedule:
            car = cars[id(e)]
            e.earliest = max(e.t_ms, t + time_to_go(L - car.pos, car.v, ap))

    waiting = {1: deque(), 2: deque()}

    while i_arr < n_arr or schedule or waiting[1] or waiting[2]:
        t = round(step * dt, 10)
        # vehicles are scheduled when they arrive; a blocked lane only delays
        # physical entry, so the schedule keeps arrival order
        changed = False
        while i_arr < n_arr and arrivals[i_arr][0] <= t + 1e-9:
            t_e, k = arrivals[i_arr]
            i_arr += 1
            counts[k - 1] += 1
            e = ScheduleEntry(k, counts[k - 1], t_e, minimal_set_time(t_e, ap))
            e.earliest = max(e.t_ms, t + time_to_go(L, vm, ap))
            car = _Car(e, 0.0, vm)
            cars[id(e)] = car
            waiting[k].append(car)
            if policy == "FIFO":
                schedule.append(e)
                apply_set_times(schedule, theta, r_mean, len(schedule) - 1)
            elif policy == "MS":
                ms_schedule_insert(schedule, e, theta, r_mean, committed_prefix())
            else:
                changed = True
                schedule.append(e)
                apply_set_times(schedule, theta, r_mean, len(schedule) - 1)
        # the lane head enters once there is stopping room behind the last car
        for k in (1, 2):
            if not waiting[k]:
                continue
            v0 = vm
            if lanes[k]:
                last = lanes[k][-1]
                room = last.pos - ap.safety_gap - vm * dt
                if room <= 0:
                    continue
                v0 = min(vm, math.sqrt(last.v * last.v + brake2 * room))
            car = waiting[k].popleft()
            car.v = v0
            lanes[k].append(car)
        if changed:
            refresh_earliest(t)
            schedule[:] = lqf_schedule_rebuild(schedule, theta, r_mean, beta, tie_rule,
                                               committed_prefix(), last_class)

        # plan and move
        relax_from = None
        for idx, e in enumerate(schedule):
            car = cars[id(e)]
            d = L - car.pos
            tmin = t + time_to_go(d, car.v, ap)
            if tmin > e.t_set + 1e-9:
                e.t_set = tmin
                e.earliest = tmin
                if relax_from is None:
                    relax_from = idx + 1
        if relax_from is not None:
            apply_set_times(schedule, theta, r_mean, relax_from)

        for k in (1, 2):
            leader = None
            for car in lanes[k]:
                d = L - car.pos
                a = command(d, car.v, t, car.entry.t_set, ap)
                dd, vv = _step(d, car.v, a, dt, vm)
                if leader is not None:
                    lx, lv = leader._next
                    # keep enough room to stop behind a leader that brakes hard
                    room = lx - ap.safety_gap - (car.pos + dd)
                    if room < (vv * vv - lv * lv) / brake2 and a != ap.a_minus:
                        a = ap.a_minus
                        dd, vv = _step(d, car.v, a, dt, vm)
                    spacing = lx - (car.pos + dd)
                    min_spacing = min(min_spacing, spacing)
                    if spacing < ap.safety_gap - 1e-9:
                        violations += 1
                car.a = a
                car._next = (car.pos + dd, vv)
                leader = car
            for car in lanes[k]:
                car.prev_pos, car.prev_v = car.pos, car.v
                car.pos, car.v = car._next
                if record_trajectory:
                    traj.append((t + dt, f"{car.entry.k}-{car.entry.n}", car.entry.k, car.pos, car.v, car.a))

        # crossings within this step
        crossed = []
        for k in (1, 2):
            lane = lanes[k]
            while lane and lane[0].pos >= L - 1e-9:
                car = lane.pop(0)
                # exact instant the line is reached within the step
                x0, v0, a = car.prev_pos, car.prev_v, car.a
                tau = _time_to_reach(L - x0, v0, a, dt, vm)
                car.crossed = t + tau
                crossed.append(car)
        for car in sorted(crossed, key=lambda c: c.crossed):
            e = car.entry
            schedule.remove(e)
            del cars[id(e)]
            err = abs(car.crossed - e.t_set)
            max_err = max(max_err, err)
            if crossings:
                lt, ls, lk, ln = crossings[-1]
                if e.t_set - ls < theta.at(lk, e.k) + r_mean - 1e-9:
                    gaps_ok = False
            crossings.append((car.crossed, e.t_set, e.k, e.n))
            delays.append((f"{e.k}-{e.n}", e.k, e.t_e, car.crossed, car.crossed - e.t_e - L / vm))
            last_class = e.k
        if crossed and policy == "LQF" and schedule:
            refresh_earliest(t + dt)
            schedule[:] = lqf_schedule_rebuild(schedule, theta, r_mean, beta, tie_rule,
                                               committed_prefix(), last_class)
        step += 1
        if strict_safety and violations:
            raise ModelError(f"safety gap violated at t={t:.1f}")
    return MicroResult(delays, traj, crossings, gaps_ok, max_err, violations, min_spacing)


def _time_to_reach(dist: float, v: float, a: float, dt: float, vm: float) -> float:
    """Time within a step at which ``dist`` metres are covered (clipped to [0, dt])."""
    if dist <= 0:
        return 0.0
    if a == 0:
        return min(dist / v, dt) if v > 0 else dt
    if a > 0:
        tc = min((vm - v) / a, dt)
        ramp = v * tc + 0.5 * a * tc * tc
        if ramp >= dist:
            return (-v + math.sqrt(v * v + 2 * a * dist)) / a
        return min(tc + (dist - ramp) / vm, dt)
    disc = v * v + 2 * a * dist
    if disc < 0:
        return dt
    return min((-v + math.sqrt(disc)) / a, dt)


def run_micro(policy: str, theta: HeadwayMatrix, r_mean: float, approach: ApproachSpec, lam,
              horizon: float, seed, **kw) -> MicroResult:
    """Bernoulli arrivals over ``horizon`` seconds, then :func:`micro_sim`."""
    arrivals = bernoulli_arrivals(lam, approach, horizon, seed, r_mean)
    return micro_sim(policy, theta, r_mean, approach, arrivals, **kw)
