import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isnc.delay_model import (
    combination_delay,
    monte_carlo_expected_packets,
    node_delay,
    probabilities_from_rates,
    split_equivalent_flows,
)
from isnc.errors import ConfigurationError, DomainError
from isnc.topology import sessions_of, subtypes
from oracles import E_A, E_B, PROBLEM_A, PROBLEM_B, Q_A, Q_B, brute_force_split

BLOCKS = (10, 10, 10)


@pytest.mark.parametrize("p,q", [(PROBLEM_A, Q_A), (PROBLEM_B, Q_B)])
def test_reference_equivalent_rates(p, q):
    for (t, s), want in q.items():
        got = split_equivalent_flows(p, t, BLOCKS).q[s]
        assert got == pytest.approx(want, abs=1e-3)


def test_intra_combination_is_plain_probability():
    er = split_equivalent_flows(PROBLEM_A, 1, BLOCKS)
    assert er.q == {0: pytest.approx(0.1824)}
    assert er.gamma(0, 1, PROBLEM_A) == pytest.approx(1.0)


@pytest.mark.parametrize("p,e", [(PROBLEM_A, E_A), (PROBLEM_B, E_B)])
def test_expected_packets(p, e):
    est = node_delay(p, 0, BLOCKS, 1.0)
    for t, want in e.items():
        tol = 0.5 if (p is PROBLEM_A and t == 5) else 0.3
        assert est.expected_packets[t] == pytest.approx(want, abs=tol)
    assert est.best_combination == 7


def test_recomputed_s1s3_value():
    # The s1s3 entry of the first vector set follows from its equivalent rate 0.2649.
    _, e = combination_delay(split_equivalent_flows(PROBLEM_A, 5, BLOCKS), BLOCKS, 1.0)
    assert e == pytest.approx(37.75, abs=0.01)


def test_delay_scales_with_slot():
    d1, e1 = combination_delay(split_equivalent_flows(PROBLEM_B, 7, BLOCKS), BLOCKS, 1.0)
    d2, e2 = combination_delay(split_equivalent_flows(PROBLEM_B, 7, BLOCKS), BLOCKS, 0.02)
    assert e1 == e2 and d2 == pytest.approx(0.02 * d1)


def test_starved_combination_is_infinite():
    er = split_equivalent_flows({1: 0.3}, 3, (10, 10))
    assert combination_delay(er, (10, 10), 1.0) == (math.inf, math.inf)
    est = node_delay({2: 0.5}, 0, (10, 10), 1.0)
    assert est.delay == math.inf and est.best_combination is None


def test_universe_restriction_hides_combined_types():
    est = node_delay(PROBLEM_A, 0, BLOCKS, 1.0, universe=[1, 2, 4])
    assert list(est.per_combination) == [1]


def test_errors():
    with pytest.raises(DomainError):
        probabilities_from_rates({1: 1.0}, 0.0)
    with pytest.raises(DomainError):
        probabilities_from_rates({1: -1.0}, 5.0)
    with pytest.raises(DomainError):
        combination_delay(split_equivalent_flows(PROBLEM_A, 1, BLOCKS), BLOCKS, 0.0)
    with pytest.raises(DomainError):
        node_delay(PROBLEM_A, 5, BLOCKS, 1.0)
    with pytest.raises(ConfigurationError):
        monte_carlo_expected_packets(PROBLEM_A, 0, BLOCKS, 0, np.random.default_rng(0))
    with pytest.raises(DomainError):
        monte_carlo_expected_packets({1: 0.7, 2: 0.6}, 0, (2, 2), 5, np.random.default_rng(0))


def test_probabilities_from_rates():
    assert probabilities_from_rates({1: 15.0, 3: 0.0}, 60.0) == {1: 0.25, 3: 0.0}


prob_maps = st.dictionaries(st.integers(1, 7), st.floats(0, 0.3), min_size=1, max_size=7)


@given(prob_maps, st.sampled_from([1, 3, 5, 7, 6, 2]))
def test_split_conserves_mass(p, t):
    er = split_equivalent_flows(p, t, BLOCKS)
    for tp in subtypes(t):
        used = sum(er.x.get((s, tp), 0.0) for s in sessions_of(tp))
        assert used <= p.get(tp, 0.0) + 1e-7
        assert all(er.x.get((s, tp), 0.0) >= -1e-12 for s in sessions_of(tp))
    assert sum(er.q.values()) <= sum(p.get(tp, 0.0) for tp in subtypes(t)) + 1e-7


@given(prob_maps, st.sampled_from([3, 5, 6]), st.lists(st.integers(1, 20), min_size=3, max_size=3))
def test_two_session_split_is_max_min(p, t, blocks):
    er = split_equivalent_flows(p, t, blocks)
    level = min(er.q[s] / blocks[s] for s in sessions_of(t))
    assert level == pytest.approx(brute_force_split(p, t, blocks), abs=3e-4)


@given(prob_maps, st.integers(1, 7), st.floats(0.01, 0.2))
def test_more_probability_never_hurts(p, extra_type, extra):
    base = node_delay(p, 0, BLOCKS, 1.0).packets
    q = dict(p)
    q[extra_type] = q.get(extra_type, 0.0) + extra
    assert node_delay(q, 0, BLOCKS, 1.0).packets <= base * (1 + 1e-6)


def test_monte_carlo_single_session_matches_geometric_sum(rng):
    # Without coding losses the count is N / p plus a small GF(256) dependence term.
    est = monte_carlo_expected_packets({1: 0.5}, 0, (4,), 3000, rng)
    assert est == pytest.approx(4 / 0.5, rel=0.05)
    assert monte_carlo_expected_packets({2: 0.5}, 0, (4, 4), 10, rng) == math.inf
