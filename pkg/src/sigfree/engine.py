"""Event-driven simulation of the intersection PDMP.

Time advances exactly from one arrival to the next; between arrivals the
workload drains at unit rate, so the integral of ||X(t)||_1 is accumulated in
closed form (no sampling grid).
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import analytics
from .core import (
    ArrivalStream,
    CrossingTimeDist,
    DemandProfile,
    HeadwayMatrix,
    HybridState,
    IntersectionSpec,
    ModelError,
    VehicleRecord,
    advance,
    other,
)
from .policies import make_policy, switchover_count

N_WINDOWS = 10
CONGESTION_DELAY = 10.0  # sec/veh


@dataclass(frozen=True)
class SimConfig:
    spec: IntersectionSpec
    policy: str = "FIFO"
    horizon: float = 1e4
    warmup: float | None = None  # defaults to 10% of horizon
    seed: int = 0
    replications: int = 1
    beta: float = 1.0
    tie_rule: str = "maintain-serving-class"
    mode: str = "exact"
    record_events: bool = False

    def __post_init__(self):
        if self.warmup is None:
            object.__setattr__(self, "warmup", 0.1 * self.horizon)
        if not self.horizon > self.warmup >= 0:
            raise ModelError("need horizon > warmup >= 0")
        if self.replications < 1:
            raise ModelError("need at least one replication")
        if self.policy.upper() not in analytics.POLICIES:
            raise ModelError(f"unknown policy {self.policy!r}")

    def with_demand(self, lam) -> "SimConfig":
        spec = replace(self.spec, demand=DemandProfile(tuple(lam)))
        return replace(self, spec=spec)


@dataclass(frozen=True)
class DepartureEvent:
    time: float
    k: int
    n: int
    arrival: float
    crossing_time: float
    service_time: float


@dataclass
class SimResult:
    time_avg_workload: float
    per_vehicle_delay_mean: float
    throughput: float
    switchovers: int
    max_workload: float
    stability_verdict: str
    window_means: list[float]
    mean_number_in_system: float = 0.0
    mean_system_time: float = 0.0
    departures: int = 0
    events: list[DepartureEvent] | None = None

    @property
    def bounded(self) -> bool:
        return self.stability_verdict == "bounded"


def stability_verdict(window_means) -> str:
    """Finite-horizon heuristic: 'growing' if the last five windowed workload
    means increase strictly and the last exceeds three times the first."""
    m = list(window_means)
    tail = m[-5:]
    rising = all(b > a for a, b in zip(tail, tail[1:]))
    if rising and m[-1] > 3 * m[0]:
        return "growing"
    return "bounded"


def _ramp_integral(w: float, s0: float, s1: float) -> float:
    """Integral over [s0, s1] of max(w - s, 0)."""
    if w <= s0:
        return 0.0
    e = s1 if s1 < w else w
    return w * (e - s0) - 0.5 * (e * e - s0 * s0)


def replication_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Replication r uses SeedSequence(seed).spawn(n)[r]."""
    return np.random.SeedSequence(seed).spawn(n)


def simulate(config: SimConfig, seed=None) -> SimResult:
    """One replication."""
    spec = config.spec
    theta = spec.headways
    policy = make_policy(config.policy, theta, config.beta, config.tie_rule, config.mode)
    horizon = float(config.horizon)
    warmup = float(config.warmup)
    width = (horizon - warmup) / N_WINDOWS
    edges = [warmup + i * width for i in range(N_WINDOWS)] + [horizon]
    win_area = [0.0] * N_WINDOWS
    record = config.record_events
    events: list[DepartureEvent] = []

    state = HybridState(last_class=1)
    counts = [0, 0]
    area_n = 0.0
    delay_sum = 0.0
    systime_sum = 0.0
    n_done = 0
    switches = 0
    last_dep_class = None
    max_w = 0.0

    def account(departed, t_lo):
        nonlocal delay_sum, systime_sum, n_done, switches, last_dep_class
        for v in departed:
            if v.departure >= warmup:
                delay_sum += v.departure - v.virtual_arrival - v.crossing_time
                systime_sum += v.departure - v.virtual_arrival
                n_done += 1
                if last_dep_class is not None and v.k != last_dep_class:
                    switches += 1
                last_dep_class = v.k
            if record:
                events.append(DepartureEvent(v.departure, v.k, v.n, v.virtual_arrival,
                                             v.crossing_time, v.service_time))

    def run_until(t_end):
        """Drain to t_end, integrating workload and vehicle count."""
        nonlocal area_n
        t0 = state.clock
        dt = t_end - t0
        if dt <= 0:
            return
        w = state.x[0] + state.x[1]
        # workload integral, split over measurement windows
        if t_end > warmup and w > 0:
            lo = t0 if t0 > warmup else warmup
            idx = min(int((lo - warmup) / width), N_WINDOWS - 1)
            while True:
                hi = min(edges[idx + 1], t_end)
                win_area[idx] += _ramp_integral(w, lo - t0, hi - t0)
                if hi >= t_end or idx == N_WINDOWS - 1 or lo - t0 >= w:
                    break
                lo = hi
                idx += 1
        n0 = len(state.sequence)
        departed = advance(state, dt)
        if t_end > warmup:
            lo = t0 if t0 > warmup else warmup
            a = n0 * (t_end - lo)
            for v in departed:
                a -= t_end - max(v.departure, lo)
            area_n += a
        if departed:
            account(departed, t0)

    if spec.demand.total > 0:
        stream = ArrivalStream(spec.demand, spec.crossing, seed if seed is not None else config.seed)
        t = 0.0
        while True:
            gap, k, r = stream.next()
            t += gap
            if t >= horizon:
                break
            run_until(t)
            counts[k - 1] += 1
            v = VehicleRecord(k, counts[k - 1], t, r)
            policy.on_arrival(state, v)
            w = state.x[0] + state.x[1]
            if w > max_w and t >= warmup:
                max_w = w
    run_until(horizon)

    span = horizon - warmup
    window_means = [a / width for a in win_area]
    return SimResult(
        time_avg_workload=sum(win_area) / span,
        per_vehicle_delay_mean=delay_sum / n_done if n_done else 0.0,
        throughput=n_done / span,
        switchovers=switches,
        max_workload=max_w,
        stability_verdict=stability_verdict(window_means),
        window_means=window_means,
        mean_number_in_system=area_n / span,
        mean_system_time=systime_sum / n_done if n_done else 0.0,
        departures=n_done,
        events=events if record else None,
    )


@dataclass
class ReplicatedResult:
    runs: list[SimResult]

    def _vals(self, attr):
        return np.array([getattr(r, attr) for r in self.runs], dtype=float)

    def mean(self, attr: str = "time_avg_workload") -> float:
        return float(self._vals(attr).mean())

    def half_width(self, attr: str = "time_avg_workload", z: float = 1.96) -> float:
        vals = self._vals(attr)
        if len(vals) < 2:
            return math.inf
        return float(z * vals.std(ddof=1) / math.sqrt(len(vals)))

    @property
    def verdict(self) -> str:
        growing = sum(r.stability_verdict == "growing" for r in self.runs)
        return "growing" if 2 * growing > len(self.runs) else "bounded"


def run(config: SimConfig) -> ReplicatedResult:
    """Run ``config.replications`` independent replications."""
    seeds = replication_seeds(config.seed, config.replications)
    return ReplicatedResult([simulate(config, s) for s in seeds])


def run_to_precision(config: SimConfig, rel: float = 0.03, min_reps: int = 4, max_reps: int = 64,
                     attr: str = "time_avg_workload") -> ReplicatedResult:
    """Add replications until the 95% CI half-width is within ``rel`` of the mean."""
    seeds = replication_seeds(config.seed, max_reps)
    runs = [simulate(config, s) for s in seeds[:min_reps]]
    res = ReplicatedResult(runs)
    while len(runs) < max_reps and res.half_width(attr) > rel * abs(res.mean(attr)):
        runs.append(simulate(config, seeds[len(runs)]))
        res = ReplicatedResult(runs)
    return res


# --- delay surface ----------------------------------------------------------------

@dataclass(frozen=True)
class SurfaceRow:
    lam1: float
    lam2: float
    policy: str
    mean_delay: float
    time_avg_workload: float
    congested: bool
    verdict: str


def _surface_point(args) -> SurfaceRow:
    config, lam, idx = args
    cfg = replace(config.with_demand(lam), seed=int(np.random.SeedSequence(config.seed, spawn_key=(idx,))
                                                     .generate_state(1)[0]))
    res = run(cfg)
    delay = res.mean("per_vehicle_delay_mean")
    return SurfaceRow(float(lam[0]), float(lam[1]), cfg.policy.upper(), delay,
                      res.mean("time_avg_workload"), delay >= CONGESTION_DELAY, res.verdict)


def estimate_delay_surface(grid, config: SimConfig, policies=None, jobs: int = 1,
                           progress=None) -> list[SurfaceRow]:
    """One row per (grid point, policy), in grid order then policy order.

    Grid point i is simulated with a seed derived from (config.seed, i), so all
    policies see the same arrival sample at a given point.
    """
    policies = [p.upper() for p in (policies or [config.policy])]
    tasks = []
    for i, lam in enumerate(grid):
        for pol in policies:
            tasks.append((replace(config, policy=pol), tuple(float(v) for v in lam), i))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_surface_point, tasks))
    else:
        rows = []
        for n, t in enumerate(tasks):
            rows.append(_surface_point(t))
            if progress:
                progress(n + 1, len(tasks))
    return rows


# --- FIFO drift probe ---------------------------------------------------------------

@dataclass(frozen=True)
class DriftEstimate:
    closed_form: float
    monte_carlo: float
    std_error: float
    c1: float
    d1: float

    @property
    def z(self) -> float:
        return (self.monte_carlo - self.closed_form) / self.std_error if self.std_error > 0 else 0.0


def lyapunov_fifo(x_norm: float, y: int, a: np.ndarray) -> float:
    """V1 = ||x||^2 / 2 + a_y ||x||."""
    return 0.5 * x_norm * x_norm + a[y - 1, 0] * x_norm


def drift_closed_form(x, y: int, spec: IntersectionSpec, literal: bool = False) -> float:
    """Mean drift of V1 under FIFO at a busy state (x != 0) with tail class y.

    The drift of the quadratic part and of a_y||x|| between jumps, plus the
    expected jump in V1.  After a class-k arrival the balancing weight becomes
    a_k, which contributes sum_k lam_k a_k E[theta_yk + R]; ``literal=True``
    drops that term to match the published expression.
    """
    x_norm = float(np.sum(x))
    if x_norm <= 0:
        raise ModelError("drift formula holds for busy states only")
    lam = np.asarray(spec.demand.lam)
    theta = spec.headways.array
    rm, rv = spec.crossing.mean, spec.crossing.var
    a = analytics.a_coefficients(lam, spec.headways)[:, 0]
    yi = y - 1
    j = 1 - yi
    s_mean = theta[yi] + rm
    coeff = -1 + lam @ s_mean + lam[j] * (a[j] - a[yi])
    const = 0.5 * lam @ (s_mean**2 + rv) - a[yi]
    if not literal:
        const += float(lam @ (a * s_mean))
    return float(coeff * x_norm + const)


def drift_probe(x, y: int, spec: IntersectionSpec, policy: str = "FIFO", samples: int = 100_000,
                seed: int = 0) -> DriftEstimate:
    """Closed-form FIFO drift of V1 and its Monte Carlo estimate.

    The Monte Carlo side samples one arrival (class and crossing time) per
    draw and averages the exact change in V1, then adds the deterministic
    drain-rate term -(||x|| + a_y).
    """
    if policy.upper() != "FIFO":
        raise ModelError("the quadratic drift probe is defined for FIFO only")
    lam = np.asarray(spec.demand.lam)
    total = lam.sum()
    x_norm = float(np.sum(x))
    a = analytics.a_coefficients(lam, spec.headways)
    theta = spec.headways.array
    rng = np.random.default_rng(seed)
    ks = np.where(rng.random(samples) * total < lam[0], 1, 2)
    rs = spec.crossing.sample(rng, samples)
    jump = theta[y - 1, ks - 1] + rs
    after = 0.5 * (x_norm + jump) ** 2 + a[ks - 1, 0] * (x_norm + jump)
    dv = after - lyapunov_fifo(x_norm, y, a)
    flow = -(x_norm + a[y - 1, 0])
    mc = flow + total * float(dv.mean())
    se = total * float(dv.std(ddof=1)) / math.sqrt(samples)
    c1 = analytics.drift_c1(lam, spec.headways, spec.crossing.mean)
    d1 = analytics.drift_d1(lam, spec.headways, spec.crossing.mean, spec.crossing.var)
    return DriftEstimate(drift_closed_form(x, y, spec), mc, se, c1, d1)


def reference_spec(lam=(0.2, 0.2), r_var: float = 0.1) -> IntersectionSpec:
    """Two-class example: theta = [[0.5, 1], [1, 0.5]], mean crossing 0.5 s."""
    crossing = CrossingTimeDist.two_point(0.5, r_var)
    return IntersectionSpec(HeadwayMatrix.of([[0.5, 1.0], [1.0, 0.5]]), crossing, DemandProfile(tuple(lam)))


def headway_violations(events, theta: HeadwayMatrix, tol: float = 1e-9) -> int:
    """Count consecutive departures (i, j) whose gap is below theta[i, j] + R_j.

    A follower's departure marks the end of its own crossing, so the gap
    to the leader's departure must cover the headway plus the follower's
    crossing time whenever the follower was already waiting.
    """
    bad = 0
    for lead, fol in zip(events, events[1:]):
        need = theta.at(lead.k, fol.k) + fol.crossing_time
        gap = fol.time - lead.time
        # an idle server makes the gap larger, never smaller
        if gap < need - tol:
            bad += 1
    return bad


def departure_switchovers(events) -> int:
    return switchover_count(e.k for e in events)


__all__ = [
    "SimConfig", "SimResult", "simulate", "run", "run_to_precision", "estimate_delay_surface",
    "drift_probe", "drift_closed_form", "reference_spec", "headway_violations", "other",
]
