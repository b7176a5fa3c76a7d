"""Closed-form capacity, stability and delay-bound evaluation.

All functions take the demand vector ``lam`` (2 rates, veh/sec), a
:class:`~sigfree.core.HeadwayMatrix` and crossing-time moments.  Stability
predicates use strict inequalities, so points on a boundary are unstable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import CrossingTimeDist, HeadwayMatrix, ModelError

POLICIES = ("FIFO", "MS", "LQF")


class BoundUndefined(ModelError):
    """A delay bound was requested where its stability premise fails."""


def _lam(lam) -> np.ndarray:
    arr = np.asarray(lam, dtype=float)
    if arr.shape != (2,) or np.any(arr < 0):
        raise ModelError("lam must be two nonnegative rates")
    return arr


def a_coefficients(lam, theta: HeadwayMatrix) -> np.ndarray:
    """The 2x2 matrix A(lam); row y repeats the balancing weight a_y."""
    lam = _lam(lam)
    t = theta.array
    total = lam.sum()
    if total <= 0:
        return np.zeros((2, 2))
    a1 = (lam[0] * (t[0, 0] - t[1, 0]) + lam[1] * (t[0, 1] - t[1, 1])) / (2 * total)
    a2 = (lam[0] * (t[1, 0] - t[0, 0]) + lam[1] * (t[1, 1] - t[0, 1])) / (2 * total)
    return np.array([[a1, a1], [a2, a2]])


def b_matrix(lam, theta: HeadwayMatrix, r_mean: float, r_max: float, literal: bool = False) -> np.ndarray:
    """B(lam) for the LQF criterion.

    The published display carries lam_1 in both diagonal entries; by class
    exchange symmetry the second one should carry lam_2, which is the default.
    ``literal=True`` evaluates the printed form.
    """
    l1, l2 = _lam(lam)
    t = theta.array
    diag = t[0, 1] + t[1, 0] + r_mean + r_max
    b11 = diag * l1
    b22 = diag * (l1 if literal else l2)
    b12 = (t[0, 0] + r_mean) * l1 + (t[1, 0] - t[0, 0]) * l2 - 1.0
    b21 = (t[0, 1] - t[1, 1]) * l1 + (t[1, 1] + r_mean) * l2 - 1.0
    return np.array([[b11, b12], [b21, b22]])


def fifo_lhs(lam, theta: HeadwayMatrix, r_mean: float) -> float:
    lam = _lam(lam)
    total = lam.sum()
    if total <= 0:
        return 0.0
    return float((lam / total) @ theta.array @ lam + r_mean * total)


def ms_lhs(lam, theta: HeadwayMatrix, r_mean: float) -> float:
    lam = _lam(lam)
    return float((np.diag(theta.array) + r_mean) @ lam)


def fifo_predicate(lam, theta: HeadwayMatrix, r_mean: float) -> tuple[bool, float]:
    """(stable, margin) with margin = LHS - 1 of the FIFO criterion."""
    margin = fifo_lhs(lam, theta, r_mean) - 1.0
    return margin < 0, margin


def ms_predicate(lam, theta: HeadwayMatrix, r_mean: float) -> tuple[bool, float]:
    margin = ms_lhs(lam, theta, r_mean) - 1.0
    return margin < 0, margin


def beta_window(b: np.ndarray) -> tuple[float, float] | None:
    """Open interval of admissible LQF comparators, or None if empty."""
    b11, b12 = b[0]
    b21, b22 = b[1]
    if b21 >= 0 or b12 >= 0:
        return None
    lo = b11 / -b21
    hi = -b12 / b22 if b22 > 0 else math.inf
    return (lo, hi) if lo < hi else None


def lqf_predicate(lam, theta: HeadwayMatrix, r_mean: float, r_max: float,
                  literal: bool = False) -> tuple[bool, tuple[float, float] | None]:
    """(stable, beta window): det B < 0 and a nonempty window."""
    b = b_matrix(lam, theta, r_mean, r_max, literal)
    det = float(np.linalg.det(b))
    window = beta_window(b)
    return bool(det < 0 and window is not None), window


def _phi_moments(lam, theta: HeadwayMatrix):
    lam = _lam(lam)
    p = lam / lam.sum()
    d = np.diag(theta.array)
    return p, float(d @ p), float((d * d) @ p)


def bound_w0(lam, theta: HeadwayMatrix, r_mean: float, r_var: float) -> float:
    """The published lower-bound display, evaluated as printed.

    Note that this is not the Pollaczek-Khinchin workload of the optimistic
    M/G/1 queue (see :func:`mg1_workload`); on the test parameters it even
    exceeds the MS upper bound, so it is not used for sandwich checks.
    """
    lam = _lam(lam)
    total = lam.sum()
    if total <= 0:
        return 0.0
    p, m1, m2 = _phi_moments(lam, theta)
    mean_service = m1 + r_mean
    denom = 2.0 / total - 2.0 * total * mean_service
    if denom <= 0:
        raise BoundUndefined("W0 denominator is nonpositive")
    return mean_service + (m2 + m1 * r_mean + r_mean**2 + r_var) / denom


def mg1_workload(lam, theta: HeadwayMatrix, r_mean: float, r_var: float) -> float:
    """Time-average workload of the optimistic M/G/1 queue.

    Service is theta_kk + R for a class-k arrival, which under-charges every
    switchover, so this bounds the time-average workload of any policy from
    below.
    """
    lam = _lam(lam)
    total = lam.sum()
    if total <= 0:
        return 0.0
    p, m1, m2 = _phi_moments(lam, theta)
    es = m1 + r_mean
    es2 = m2 + 2 * m1 * r_mean + r_mean**2 + r_var
    rho = total * es
    if rho >= 1:
        raise BoundUndefined("optimistic M/G/1 queue is saturated")
    return total * es2 / (2 * (1 - rho))


def drift_d1(lam, theta: HeadwayMatrix, r_mean: float, r_var: float) -> float:
    """Constant of the FIFO drift inequality (numerator of W1)."""
    lam = _lam(lam)
    m = theta.array + r_mean
    a = a_coefficients(lam, theta)
    rows = (m * (0.5 * m + a) + 0.5 * r_var) @ lam
    return float(np.max(np.abs(rows)))


def drift_d1_diag(lam, theta: HeadwayMatrix, r_mean: float, r_var: float) -> float:
    """The diagonal-only constant printed alongside c1 (does not bound the drift)."""
    lam = _lam(lam)
    d = np.diag(theta.array) + r_mean
    return float(0.5 * ((d * d + r_var) @ lam))


def drift_c1(lam, theta: HeadwayMatrix, r_mean: float) -> float:
    return 1.0 - fifo_lhs(lam, theta, r_mean)


def bound_w1(lam, theta: HeadwayMatrix, r_mean: float, r_var: float) -> float:
    stable, margin = fifo_predicate(lam, theta, r_mean)
    if not stable:
        raise BoundUndefined("FIFO criterion violated")
    if _lam(lam).sum() <= 0:
        return 0.0
    return drift_d1(lam, theta, r_mean, r_var) / -margin


def bound_w2(lam, theta: HeadwayMatrix, r_mean: float, r_var: float) -> float:
    lam = _lam(lam)
    stable, margin = ms_predicate(lam, theta, r_mean)
    if not stable:
        raise BoundUndefined("MS criterion violated")
    total = lam.sum()
    if total <= 0:
        return 0.0
    t = theta.array
    m = t + r_mean
    first = np.max(np.abs((m * m + r_var) @ lam)) / (2 - 2 * ms_lhs(lam, theta, r_mean))
    switch = lam[0] * lam[1] / total * ((t[1, 0] - t[0, 0]) + (t[0, 1] - t[1, 1]))
    return float(first + switch)


def bound_w3(lam, theta: HeadwayMatrix, r_mean: float, r_var: float, r_max: float,
             beta: float, literal: bool = False) -> float:
    lam = _lam(lam)
    b = b_matrix(lam, theta, r_mean, r_max, literal)
    stable, window = lqf_predicate(lam, theta, r_mean, r_max, literal)
    if not stable:
        raise BoundUndefined("LQF criterion violated")
    if not window[0] < beta < window[1]:
        raise BoundUndefined(f"beta={beta} outside admissible window {window}")
    num = max(b[0, 0] ** 2 + (b[0, 1] + 1) ** 2, b[1, 1] ** 2 + (b[1, 0] + 1) ** 2)
    num += r_var * lam.sum()
    if literal:
        den = -max(b[0, 0] + beta * b[0, 1], b[1, 1] + beta * b[1, 0])
    else:
        # (1, beta) B, the same combination that defines the beta window
        den = -max(b[0, 0] + beta * b[1, 0], b[0, 1] + beta * b[1, 1])
    if den <= 0:
        raise BoundUndefined("W3 denominator is nonpositive")
    return float(math.sqrt((1 + beta * beta) / 2) * num / den)


# --- capacities -----------------------------------------------------------------

def is_stable(policy: str, lam, theta: HeadwayMatrix, r_mean: float, r_max: float,
              literal: bool = False) -> bool:
    policy = policy.upper()
    if policy == "FIFO":
        return fifo_predicate(lam, theta, r_mean)[0]
    if policy == "MS":
        return ms_predicate(lam, theta, r_mean)[0]
    if policy == "LQF":
        return lqf_predicate(lam, theta, r_mean, r_max, literal)[0]
    raise ModelError(f"unknown policy {policy!r}")


def _lqf_capacity(p, theta, r_mean, r_max, tol, literal):
    p = np.asarray(p, dtype=float)
    ok = lambda s: lqf_predicate(s * p, theta, r_mean, r_max, literal)[0]
    # every LQF-stable point is MS-stable, so the MS capacity brackets the search
    hi = 1.0 / float((np.diag(theta.array) + r_mean) @ p)
    # scan for the first failure so bisection starts on a sign change
    grid = np.linspace(0.0, hi, 257)[1:]
    lo = 0.0
    for s in grid:
        if not ok(s):
            hi = s
            break
        lo = s
    else:
        return float(hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def scalar_capacity(p, policy: str, theta: HeadwayMatrix, r_mean: float, r_max: float | None = None,
                    tol: float = 1e-10, literal: bool = False) -> float:
    """Largest total demand along the ray p that the policy stabilizes."""
    p = np.asarray(p, dtype=float)
    if p.shape != (2,) or np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-12):
        raise ModelError("p must be a probability 2-vector")
    policy = policy.upper()
    t = theta.array
    if policy == "FIFO":
        return float(1.0 / (p @ t @ p + r_mean))
    if policy == "MS":
        return float(1.0 / ((np.diag(t) + r_mean) @ p))
    if policy == "LQF":
        if r_max is None:
            raise ModelError("LQF capacity needs r_max")
        return _lqf_capacity(p, theta, r_mean, r_max, tol, literal)
    raise ModelError(f"unknown policy {policy!r}")


def ray_fan(n: int) -> np.ndarray:
    """n demand distributions from p=(0,1) to p=(1,0) inclusive."""
    if n < 2:
        raise ModelError("need at least two rays")
    p1 = np.linspace(0.0, 1.0, n)
    return np.column_stack([p1, 1.0 - p1])


def capacity_region(policy: str, n_rays: int, theta: HeadwayMatrix, r_mean: float,
                    r_max: float | None = None) -> list[tuple[tuple[float, float], tuple[float, float]]]:
    """Boundary polyline: [(p, lam_bar(p) * p), ...] over a fan of rays."""
    out = []
    for p in ray_fan(n_rays):
        cap = scalar_capacity(p, policy, theta, r_mean, r_max)
        out.append(((float(p[0]), float(p[1])), (float(cap * p[0]), float(cap * p[1]))))
    return out


# --- reports --------------------------------------------------------------------

@dataclass
class PolicyBounds:
    stable: bool
    margin: float
    w0: float | None = None
    w_upper: float | None = None
    beta_window: tuple[float, float] | None = None
    beta_in_window: bool | None = None
    notes: list[str] = field(default_factory=list)


@dataclass
class BoundsReport:
    lam: tuple[float, float]
    w0_display: float | None
    mg1_lower: float | None
    policies: dict[str, PolicyBounds]

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
            if isinstance(v, tuple):
                return [clean(x) for x in v]
            return v

        return {
            "lambda": list(self.lam),
            "w0_display": self.w0_display,
            "mg1_lower": self.mg1_lower,
            "policies": {
                name: {k: clean(v) for k, v in vars(pb).items()}
                for name, pb in self.policies.items()
            },
        }


def _try(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except BoundUndefined:
        return None


def bounds_report(lam, theta: HeadwayMatrix, crossing: CrossingTimeDist, beta: float = 1.0,
                  literal_b: bool = False) -> BoundsReport:
    lam = _lam(lam)
    rm, rv, rx = crossing.mean, crossing.var, crossing.r_max
    zero = lam.sum() <= 0
    w0_display = 0.0 if zero else _try(bound_w0, lam, theta, rm, rv)
    lower = 0.0 if zero else _try(mg1_workload, lam, theta, rm, rv)
    out = {}
    stable, margin = fifo_predicate(lam, theta, rm)
    out["FIFO"] = PolicyBounds(stable, margin, lower, _try(bound_w1, lam, theta, rm, rv) if stable else None)
    stable, margin = ms_predicate(lam, theta, rm)
    out["MS"] = PolicyBounds(stable, margin, lower, _try(bound_w2, lam, theta, rm, rv) if stable else None)
    b = b_matrix(lam, theta, rm, rx, literal_b)
    stable, window = lqf_predicate(lam, theta, rm, rx, literal_b)
    pb = PolicyBounds(stable, float(np.linalg.det(b)), lower, None, window,
                      bool(window and window[0] < beta < window[1]))
    pb.notes.append("margin is det(B)")
    if stable and pb.beta_in_window:
        pb.w_upper = _try(bound_w3, lam, theta, rm, rv, rx, beta, literal_b)
    out["LQF"] = pb
    return BoundsReport((float(lam[0]), float(lam[1])), w0_display, lower, out)


def upper_bound(policy: str, lam, theta: HeadwayMatrix, crossing: CrossingTimeDist, beta: float = 1.0) -> float:
    policy = policy.upper()
    rm, rv = crossing.mean, crossing.var
    if policy == "FIFO":
        return bound_w1(lam, theta, rm, rv)
    if policy == "MS":
        return bound_w2(lam, theta, rm, rv)
    if policy == "LQF":
        return bound_w3(lam, theta, rm, rv, crossing.r_max, beta)
    raise ModelError(f"unknown policy {policy!r}")


# --- four origin-destination pairs with turning -----------------------------------

FOUR_OD = ("WE", "WS", "NS", "NE")
_ORIGIN_BLOCKS = {"W": (0, 1), "N": (2, 3)}


def aggregate_four_od(lam4, theta4) -> tuple[np.ndarray, np.ndarray]:
    """Collapse four ODs (WE, WS, NS, NE) onto the two origins (W, N).

    Returns the origin demand vector and the demand-weighted headway matrix.
    An origin without traffic gets unweighted averages over its ODs.
    """
    lam4 = np.asarray(lam4, dtype=float)
    theta4 = np.asarray(theta4, dtype=float)
    if lam4.shape != (4,) or np.any(lam4 < 0):
        raise ModelError("lam4 must be four nonnegative rates")
    if theta4.shape != (4, 4):
        raise ModelError("theta4 must be 4x4")
    blocks = [_ORIGIN_BLOCKS["W"], _ORIGIN_BLOCKS["N"]]
    lam_bar = np.array([lam4[list(b)].sum() for b in blocks])
    weights = []
    for b, tot in zip(blocks, lam_bar):
        w = lam4[list(b)] / tot if tot > 0 else np.full(len(b), 1.0 / len(b))
        weights.append(w)
    theta_bar = np.empty((2, 2))
    for i, bi in enumerate(blocks):
        for j, bj in enumerate(blocks):
            theta_bar[i, j] = weights[i] @ theta4[np.ix_(bi, bj)] @ weights[j]
    return lam_bar, theta_bar


def mixture_weights(lam4) -> list[np.ndarray]:
    """Per-block weight matrices of the headway mixture (each sums to 1)."""
    lam4 = np.asarray(lam4, dtype=float)
    out = []
    blocks = [_ORIGIN_BLOCKS["W"], _ORIGIN_BLOCKS["N"]]
    ws = []
    for b in blocks:
        tot = lam4[list(b)].sum()
        ws.append(lam4[list(b)] / tot if tot > 0 else np.full(len(b), 1.0 / len(b)))
    for wi in ws:
        for wj in ws:
            out.append(np.outer(wi, wj))
    return out
