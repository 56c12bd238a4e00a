import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isnc import allocation as AL
from isnc.allocation import (
    NeighborhoodSnapshot,
    allocate,
    check_constraints,
    enumerate_tuples,
    maximize_throughput,
    minimize_delay,
    wire_rates,
)
from isnc.errors import ConfigurationError, DomainError
from isnc.solver import solve_convex
from isnc.topology import type_universe


def n8_snapshot(mode):
    # n8 of the toy network with its neighbours already settled.
    return NeighborhoodSnapshot.make(
        "n8", 2, 30, (10, 10, 10), (60, 60, 60),
        [("n5", 30, 0.05, {1: 28.5, 4: 28.5})],
        [("n10", 60, 0.05, 2, 90, {1: 28.5, 2: 28.5, 3: 0}), ("n12", 60, 0.05, 0, 90, {2: 28.5, 4: 28.5})],
        mode,
    )


def test_n8_inter_uses_combined_type():
    r = allocate(n8_snapshot("inter"))
    assert r.combination == 0b101
    assert r.in_rates[("n5", 0b101)] == pytest.approx(28.5, abs=1e-6)
    assert check_constraints(n8_snapshot("inter"), r.in_rates, r.out_rates) == []


def test_n8_intra_splits_singletons():
    snap = n8_snapshot("intra")
    r = allocate(snap)
    assert r.combination == 0b100
    assert all(t in (1, 2, 4) for (_, t) in r.in_rates)
    assert check_constraints(snap, r.in_rates, r.out_rates) == []


def test_inter_never_worse_than_intra_on_n8():
    a = minimize_delay(n8_snapshot("inter")).average_delay
    b = minimize_delay(n8_snapshot("intra")).average_delay
    assert a < b


def test_enumerate_tuples():
    uni = type_universe(3, "inter")
    tups = enumerate_tuples(0, [1, 2], uni)
    assert len(tups) == 4 ** 3
    assert all(t[0] & 1 and t[1] & 2 and t[2] & 4 for t in tups)
    assert enumerate_tuples(0, [], type_universe(3, "intra")) == [(1,)]


def test_wire_rates():
    assert wire_rates({("a", 1): 19.0}, {"a": 0.05}) == {("a", 1): pytest.approx(20.0)}
    with pytest.raises(DomainError):
        wire_rates({("a", 1): 1.0}, {"a": 1.0})


def test_bad_mode():
    with pytest.raises(ConfigurationError):
        NeighborhoodSnapshot.make("x", 0, 1, (1,), (1,), [], mode="both")


def test_no_parents_is_starved():
    r = allocate(NeighborhoodSnapshot.make("x", 0, 10, (10,), (10,), []))
    assert r.starved and math.isinf(r.average_delay)


def test_check_constraints_flags_overuse():
    snap = n8_snapshot("inter")
    bad = check_constraints(snap, {("n5", 5): 70.0}, {})
    assert {b.split()[0] for b in bad} >= {"input-cap", "availability", "source-in"}
    bad = check_constraints(snap, {("n5", 1): 10.0}, {("n12", 1): 20.0})
    assert any(b.startswith("relay") for b in bad)


def test_throughput_fill_keeps_floor():
    snap = n8_snapshot("intra")
    floor = {("n5", 1): 5.0}
    out = maximize_throughput(snap, floor)
    assert out[("n5", 1)] >= 5.0
    assert sum(out.values()) == pytest.approx(28.5)


def test_cache_returns_independent_copies():
    snap = n8_snapshot("intra")
    a = minimize_delay(snap)
    a.in_rates.clear()
    assert minimize_delay(snap).in_rates


def _random_snapshot(draw_vals, mode):
    cap_p, av1, av2, av3, cap_c, side1, side3, sub_c, has_child = draw_vals
    children = [("c", cap_c, 0.0, sub_c, 100.0, {1: side1, 3: side3})] if has_child else []
    return NeighborhoodSnapshot.make(
        "x", 0, 100.0, (5, 8), (20.0, 20.0),
        [("p", cap_p, 0.0, {1: av1, 2: av2, 3: av3})], children, mode,
    )


snapshots = st.tuples(
    st.sampled_from([5.0, 10.0, 20.0]), st.sampled_from([0.0, 4.0, 12.0]), st.sampled_from([0.0, 6.0]),
    st.sampled_from([0.0, 8.0, 15.0]), st.sampled_from([5.0, 15.0]), st.sampled_from([0.0, 3.0]),
    st.sampled_from([0.0, 5.0]), st.sampled_from([0, 1]), st.booleans(),
)


@settings(max_examples=25)
@given(snapshots, st.sampled_from(["inter", "intra"]))
def test_branch_and_bound_matches_exhaustive_search(vals, mode):
    snap = _random_snapshot(vals, mode)
    AL.clear_cache()
    res = minimize_delay(snap)
    full = AL._Builder(snap)
    subs = [snap.subscription] + [c.subscription for c in snap.children]
    best = math.inf
    for tup in enumerate_tuples(snap.subscription, subs[1:], snap.universe):
        sp = full.subproblem(list(enumerate(tup)))
        best = min(best, solve_convex(sp).objective)
    if math.isinf(best):
        assert math.isinf(res.average_delay) or res.starved
        return
    assert res.average_delay == pytest.approx(best, rel=1e-5)
    assert check_constraints(snap, res.in_rates, res.out_rates) == []


@settings(max_examples=25)
@given(snapshots)
def test_inter_at_least_as_good_as_intra(vals):
    a = minimize_delay(_random_snapshot(vals, "inter")).average_delay
    b = minimize_delay(_random_snapshot(vals, "intra")).average_delay
    assert a <= b * (1 + 1e-6) or math.isinf(b)
