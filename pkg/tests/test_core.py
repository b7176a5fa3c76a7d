import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sigfree.core import (
    ArrivalStream, CrossingTimeDist, DemandProfile, HeadwayMatrix, HybridState, ModelError,
    VehicleRecord, advance, aggregate, per_vehicle_delay, sample_interarrival, workload,
)
from sigfree.policies import Fifo


def test_headway_lookup_is_leader_follower(theta):
    h = HeadwayMatrix.of([[0.5, 1.0], [1.2, 0.6]])
    assert h.at(1, 2) == 1.0
    assert h.at(2, 1) == 1.2
    assert theta.array.shape == (2, 2)


@pytest.mark.parametrize("rows", [
    [[0.5, 0.5], [1.0, 0.5]],   # no cross-class dominance
    [[0.5, 1.0], [0.4, 0.5]],
    [[-0.1, 1.0], [1.0, 0.5]],
    [[0.5, 1.0, 2.0], [1.0, 0.5, 2.0]],
])
def test_headway_validation(rows):
    with pytest.raises(ModelError):
        HeadwayMatrix.of(rows)


def test_dominance_message_names_invariant():
    with pytest.raises(ModelError, match="cross-class dominance"):
        HeadwayMatrix.of([[0.5, 0.4], [1.0, 0.5]])


def test_crossing_moments():
    d = CrossingTimeDist.deterministic(0.5)
    assert (d.mean, d.var, d.r_min, d.r_max) == (0.5, 0.0, 0.5, 0.5)
    u = CrossingTimeDist.uniform(0.2, 0.8)
    assert math.isclose(u.mean, 0.5) and math.isclose(u.var, 0.36 / 12)
    tp = CrossingTimeDist.two_point(0.5, 0.1)
    assert math.isclose(tp.mean, 0.5) and math.isclose(tp.var, 0.1)
    assert math.isclose(tp.r_max, 0.5 + math.sqrt(0.1))
    assert CrossingTimeDist.two_point(0.5, 0.0).family == "deterministic"


@pytest.mark.parametrize("bad", [
    lambda: CrossingTimeDist.deterministic(0.0),
    lambda: CrossingTimeDist.uniform(0.5, 0.2),
    lambda: CrossingTimeDist.discrete([0.5, 1.0], [0.3, 0.3]),
    lambda: CrossingTimeDist.two_point(0.2, 0.1),
    lambda: CrossingTimeDist("gamma", (1.0,)),
])
def test_crossing_validation(bad):
    with pytest.raises(ModelError):
        bad()


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0.05, 2.0), w=st.floats(0.0, 2.0), seed=st.integers(0, 2**32 - 1))
def test_samples_stay_in_support(a, w, seed):
    rng = np.random.default_rng(seed)
    for law in (CrossingTimeDist.uniform(a, a + w), CrossingTimeDist.discrete([a, a + w], [0.3, 0.7])):
        s = law.sample(rng, 200)
        assert s.min() >= law.r_min - 1e-12 and s.max() <= law.r_max + 1e-12


def test_demand_profile():
    d = DemandProfile((0.3, 0.1))
    assert math.isclose(d.total, 0.4)
    assert np.allclose(d.p, (0.75, 0.25))
    with pytest.raises(ModelError):
        DemandProfile((0.0, 0.0)).p
    with pytest.raises(ModelError):
        DemandProfile((-0.1, 0.2))


def test_sample_interarrival_zero_demand():
    rng = np.random.default_rng(0)
    assert sample_interarrival(rng, DemandProfile((0.0, 0.0))) is None
    k, gap = sample_interarrival(rng, DemandProfile((0.0, 1.0)))
    assert k == 2 and gap > 0


def _loaded_state(theta):
    state = HybridState()
    pol = Fifo(theta)
    for i, (k, r) in enumerate([(1, 0.5), (2, 0.5), (2, 0.4)]):
        pol.on_arrival(state, VehicleRecord(k, i + 1, 0.0, r))
    return state


def test_advance_drains_head_and_stamps_departures(theta):
    state = _loaded_state(theta)
    # services: 0.5+0.5, 1.0+0.5, 0.5+0.4
    assert np.allclose(state.x, [1.0, 2.4])
    out = advance(state, 1.2)
    assert [v.id for v in out] == [(1, 1)]
    assert math.isclose(out[0].departure, 1.0)
    assert math.isclose(state.head_residual, 1.3)
    assert np.allclose(aggregate(state), state.x)
    state.check()
    out = advance(state, 10.0)
    assert [v.departure for v in out] == pytest.approx([2.5, 3.4])
    assert workload(state) == 0 and state.clock == pytest.approx(11.2)


def test_advance_rejects_negative_dt(theta):
    with pytest.raises(ModelError):
        advance(_loaded_state(theta), -0.1)


def test_per_vehicle_delay():
    v = VehicleRecord(1, 1, 2.0, 0.5, departure=4.0)
    assert per_vehicle_delay(v) == pytest.approx(1.5)
    with pytest.raises(ModelError):
        per_vehicle_delay(VehicleRecord(1, 1, 2.0, 0.5, departure=2.2))
    with pytest.raises(ModelError):
        per_vehicle_delay(VehicleRecord(1, 1, 2.0, 0.5))


def test_arrival_stream_reproducible_and_coupled(spec):
    a = ArrivalStream(DemandProfile((0.2, 0.2)), spec.crossing, 5)
    b = ArrivalStream(DemandProfile((0.2, 0.2)), spec.crossing, 5)
    c = ArrivalStream(DemandProfile((0.4, 0.4)), spec.crossing, 5)
    for _ in range(5000):
        ga, ka, ra = a.next()
        gb, kb, rb = b.next()
        gc, kc, rc = c.next()
        assert (ga, ka, ra) == (gb, kb, rb)
        assert kc == ka and rc == ra and gc == pytest.approx(ga / 2)
