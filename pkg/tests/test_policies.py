import itertools

import pytest
from hypothesis import given, settings, strategies as st

from sigfree.core import HeadwayMatrix, HybridState, ModelError, VehicleRecord, advance
from sigfree.policies import (
    LqfState, TieRule, _insert, lqf_longer, make_policy, switchover_count,
)

THETA = HeadwayMatrix.of([[0.5, 1.0], [1.0, 0.5]])
ASYM = HeadwayMatrix.of([[0.4, 1.1], [0.9, 0.6]])

ops = st.lists(
    st.one_of(
        st.tuples(st.just("arr"), st.sampled_from([1, 2]), st.floats(0.2, 0.9)),
        st.tuples(st.just("adv"), st.floats(0.0, 2.5), st.just(0.0)),
    ),
    min_size=1, max_size=60,
)


def play(policy, ops_list, check=None):
    state = HybridState()
    counts = [0, 0]
    t = 0.0
    for op in ops_list:
        if op[0] == "arr":
            _, k, r = op
            counts[k - 1] += 1
            head = state.head
            policy.on_arrival(state, VehicleRecord(k, counts[k - 1], t, r))
            if head is not None:
                assert state.head is head, "the crossing vehicle was displaced"
        else:
            advance(state, op[1])
            t += op[1]
        state.check()
        if check:
            check(state)
    return state


@settings(max_examples=80, deadline=None)
@given(ops=ops, name=st.sampled_from(["FIFO", "MS", "LQF"]), theta=st.sampled_from([THETA, ASYM]))
def test_exact_mode_invariants(ops, name, theta):
    pol = make_policy(name, theta)

    def check(state):
        seq = list(state.sequence)
        # per-class FIFO inside G
        for k in (1, 2):
            ns = [v.n for v in seq if v.k == k]
            assert ns == sorted(ns)
        # each queued vehicle is charged exactly its headway behind its predecessor
        for lead, fol in zip(seq, seq[1:]):
            assert fol.service_time == pytest.approx(theta.at(lead.k, fol.k) + fol.crossing_time)

    play(pol, ops, check)


@settings(max_examples=60, deadline=None)
@given(ops=ops)
def test_ms_keeps_at_most_two_runs(ops):
    def check(state):
        assert switchover_count(state.classes()) <= 1 + (state.head is not None)
        # after the head the queue holds one run per class at most
        assert switchover_count(state.classes()[1:]) <= 1

    play(make_policy("MS", THETA), ops, check)


@settings(max_examples=60, deadline=None)
@given(ops=ops, name=st.sampled_from(["MS", "LQF"]))
def test_aggregate_mode_keeps_bookkeeping(ops, name):
    play(make_policy(name, THETA, mode="aggregate"), ops)


def _mirror(ops_list):
    return [(o[0], 3 - o[1], o[2]) if o[0] == "arr" else o for o in ops_list]


@settings(max_examples=60, deadline=None)
@given(ops=ops)
def test_lqf_mirror_symmetry(ops):
    # the maintain tie rule and beta = 1 treat the classes alike
    s1 = play(make_policy("LQF", THETA, tie_rule=TieRule.MAINTAIN), ops)
    s2 = HybridState(last_class=2)
    pol = make_policy("LQF", THETA, tie_rule=TieRule.MAINTAIN)
    counts = [0, 0]
    for op in _mirror(ops):
        if op[0] == "arr":
            counts[op[1] - 1] += 1
            pol.on_arrival(s2, VehicleRecord(op[1], counts[op[1] - 1], 0.0, op[2]))
        else:
            advance(s2, op[1])
    assert [3 - k for k in s1.classes()] == s2.classes()
    assert s1.x[0] == pytest.approx(s2.x[1]) and s1.x[1] == pytest.approx(s2.x[0])


def _min_switch_brute(head_class, rest):
    """Fewest switchovers over all orders that keep each class in arrival order."""
    n1 = sum(1 for k in rest if k == 1)
    best = None
    for pos in itertools.combinations(range(len(rest)), n1):
        seq = [2] * len(rest)
        for p in pos:
            seq[p] = 1
        s = switchover_count([head_class] + seq)
        best = s if best is None else min(best, s)
    return best


@settings(max_examples=60, deadline=None)
@given(classes=st.lists(st.sampled_from([1, 2]), min_size=8, max_size=8))
def test_ms_matches_brute_force_switchovers_for_batch_of_8(classes):
    state = HybridState()
    pol = make_policy("MS", THETA)
    counts = [0, 0]
    for k in classes:
        counts[k - 1] += 1
        pol.on_arrival(state, VehicleRecord(k, counts[k - 1], 0.0, 0.5))
    assert switchover_count(state.classes()) == _min_switch_brute(classes[0], classes[1:])


def test_fifo_charges_tail_class_headway():
    state = HybridState()
    pol = make_policy("FIFO", THETA)
    pol.on_arrival(state, VehicleRecord(1, 1, 0.0, 0.5))
    pol.on_arrival(state, VehicleRecord(2, 1, 0.0, 0.5))
    pol.on_arrival(state, VehicleRecord(2, 2, 0.0, 0.5))
    assert [v.service_time for v in state.sequence] == pytest.approx([1.0, 1.5, 1.0])
    assert state.classes() == [1, 2, 2]


def test_ms_joins_own_platoon():
    state = HybridState()
    pol = make_policy("MS", THETA)
    for i, k in enumerate([1, 2, 1, 2, 1]):
        pol.on_arrival(state, VehicleRecord(k, i, 0.0, 0.5))
    assert state.classes() == [1, 1, 1, 2, 2]


def test_lqf_longer_and_ties():
    state = HybridState()
    state.x = [2.0, 1.0]
    assert lqf_longer(state, LqfState(1.0)) == 1
    assert lqf_longer(state, LqfState(3.0)) == 2
    assert lqf_longer(state, LqfState(2.0)) == 0
    with pytest.raises(ModelError):
        LqfState(0.0)


def test_lqf_shorter_class_interleaves():
    state = HybridState()
    pol = make_policy("LQF", THETA)
    for i in range(3):
        pol.on_arrival(state, VehicleRecord(1, i + 1, 0.0, 0.5))
    pol.on_arrival(state, VehicleRecord(2, 1, 0.0, 0.5))
    # class 2 is shorter: it goes right behind the crossing vehicle
    assert state.classes() == [1, 2, 1, 1]
    assert state.sequence[2].service_time == pytest.approx(1.5)


def test_lqf_aggregate_jump_law():
    state = HybridState()
    pol = make_policy("LQF", THETA, mode="aggregate")
    for i in range(3):
        pol.on_arrival(state, VehicleRecord(1, i + 1, 0.0, 0.5))
    x1 = state.x[0]
    pol.on_arrival(state, VehicleRecord(2, 1, 0.0, 0.5))
    # shorter-class arrival: theta_12 + R on its own class, theta_12 - theta_11 on the other
    assert state.x[1] == pytest.approx(1.5)
    assert state.x[0] - x1 == pytest.approx(0.5)


def test_ms_aggregate_charges_same_class_when_busy():
    state = HybridState()
    pol = make_policy("MS", THETA, mode="aggregate")
    pol.on_arrival(state, VehicleRecord(1, 1, 0.0, 0.5))
    assert state.x[0] == pytest.approx(1.5)  # idle system: cross-class charge
    pol.on_arrival(state, VehicleRecord(2, 1, 0.0, 0.5))
    assert state.x[1] == pytest.approx(1.0)


def test_head_cannot_be_displaced():
    state = HybridState()
    make_policy("FIFO", THETA).on_arrival(state, VehicleRecord(1, 1, 0.0, 0.5))
    with pytest.raises(ModelError):
        _insert(state, 0, VehicleRecord(2, 1, 0.0, 0.5))


def test_unknown_policy_and_mode():
    with pytest.raises(ModelError):
        make_policy("SJF", THETA)
    with pytest.raises(ModelError):
        make_policy("MS", THETA, mode="fuzzy")


def test_switchover_count():
    assert switchover_count([]) == 0
    assert switchover_count([1, 1, 2, 1, 1]) == 2
