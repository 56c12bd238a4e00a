import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from isnc.errors import ConfigurationError, DomainError, TopologyError
from isnc.topology import (
    Link,
    Session,
    Topology,
    all_types,
    parse_topology,
    parse_type_label,
    sessions_of,
    singleton_types,
    subtypes,
    subtypes_with_session,
    type_label,
    type_universe,
    types_with_session,
    validate_topology,
)

S1, S2, S3 = 1, 2, 4


def test_all_types_examples():
    assert all_types(1) == [S1]
    assert len(all_types(3)) == 7
    t4 = all_types(4)
    assert len(t4) == 15 and len(set(t4)) == 15


@pytest.mark.parametrize("n", [0, 17, -1, 2.0])
def test_all_types_range(n):
    with pytest.raises(ConfigurationError):
        all_types(n)


def test_subtypes_examples():
    assert subtypes(S1) == [S1]
    assert set(subtypes(S1 | S3)) == {S1, S3, S1 | S3}
    assert len(subtypes(S1 | S2 | S3)) == 7


def test_types_with_session_examples():
    assert set(types_with_session(0, all_types(3))) == {S1, S1 | S2, S1 | S3, S1 | S2 | S3}
    assert set(types_with_session(1, all_types(2))) == {S2, S1 | S2}
    for s in range(3):
        assert len(types_with_session(s, all_types(3))) == 4


def test_subtypes_with_session_examples():
    assert set(subtypes_with_session(7, 0)) == {S1, S1 | S2, S1 | S3, 7}
    assert subtypes_with_session(S1, 0) == [S1]
    assert set(subtypes_with_session(S1 | S3, 2)) == {S3, S1 | S3}
    with pytest.raises(DomainError):
        subtypes_with_session(S1 | S3, 1)


def test_labels_round_trip():
    for t in all_types(5):
        assert parse_type_label(type_label(t)) == t
    assert type_label(5) == "s1s3"
    with pytest.raises(DomainError):
        parse_type_label("x")


def test_universe_modes():
    assert type_universe(3, "intra") == singleton_types(3) == [1, 2, 4]
    assert type_universe(3, "inter") == all_types(3)
    with pytest.raises(ConfigurationError):
        type_universe(3, "mixed")


@given(st.integers(1, 10), st.data())
def test_family_partition_properties(n, data):
    t = data.draw(st.integers(1, (1 << n) - 1))
    union = set()
    for s in sessions_of(t):
        fam = subtypes_with_session(t, s)
        assert set(fam) <= set(subtypes(t))
        assert all(u >> s & 1 for u in fam)
        union |= set(fam)
    assert union == set(subtypes(t))


@given(st.integers(1, 12))
def test_all_types_is_bijection(n):
    ts = all_types(n)
    assert ts == sorted(ts)
    assert ts == list(range(1, 2**n))


@given(st.integers(1, 8), st.integers(0, 7))
def test_types_with_session_cardinality(n, s):
    s = s % n
    assert len(types_with_session(s, all_types(n))) == 2 ** (n - 1)


def test_toy_validates_and_capacity_exact(toy):
    assert validate_topology(toy) == []
    for nid, node in toy.nodes.items():
        assert node.input_capacity == math.fsum(toy.link(p, nid).capacity for p in node.parents)
        for p in node.parents:
            assert nid in toy.nodes[p].children
    assert toy.nodes["n8"].parents == ("n5",)
    assert toy.nodes["n5"].input_capacity == 60.0


def _tiny(links, sources={0: "a"}, subs=None):
    subs = subs or {"a": None, "b": 0}
    return Topology.build([Session(0, 10.0, 5)], list(subs.items()), links, sources)


def test_cycle_detected():
    topo = _tiny([Link("a", "b", 1.0, 0.0), Link("b", "c", 1.0, 0.0), Link("c", "b", 1.0, 0.0)],
                 subs={"a": None, "b": 0, "c": 0})
    diags = validate_topology(topo)
    assert any("cycle" in d for d in diags)


def test_orphan_and_missing_source():
    topo = _tiny([Link("a", "b", 1.0, 0.0)], subs={"a": None, "b": 0, "z": 0})
    assert any("orphan node z" in d for d in validate_topology(topo))
    topo = Topology.build([Session(0, 10.0, 5), Session(1, 10.0, 5)], [("a", None), ("b", 1)],
                          [Link("a", "b", 1.0, 0.0)], {0: "a"})
    assert any("missing source for session 1" in d for d in validate_topology(topo))


def test_bad_link_values():
    topo = _tiny([Link("a", "b", 0.0, 1.0), Link("b", "b", 1.0, 0.0)])
    d = validate_topology(topo)
    assert any("capacity" in x for x in d)
    assert any("loss" in x for x in d)
    assert any("self-loop" in x for x in d)


def test_parse_round_trip(toy):
    again = parse_topology(toy.to_text())
    assert again.to_text() == toy.to_text()
    assert again.blocks == (10, 10, 10)


def test_parse_delay_and_comments():
    text = """# comment
session 0 rate 12.5 block 4
node a
node b subscribes 0
source 0 at a
link a b capacity 3.5 loss 0.1 delay 0.02
"""
    topo = parse_topology(text)
    assert topo.link("a", "b").delay == 0.02
    assert topo.sessions[0].rate == 12.5


def test_parse_errors_are_collected():
    with pytest.raises(TopologyError) as exc:
        parse_topology("session 0 rate x block 3\nbogus line\nnode a\nnode a\n")
    assert len(exc.value.diagnostics) == 3


def test_with_link_capacity_and_blocks(toy):
    t2 = toy.with_link_capacity([("n4", "n7")], 45.0)
    assert t2.link("n4", "n7").capacity == 45.0
    assert t2.nodes["n7"].input_capacity == 45.0
    assert toy.link("n4", "n7").capacity == 30.0
    with pytest.raises(ConfigurationError):
        toy.with_link_capacity([("n1", "n12")], 5.0)
    assert toy.with_blocks(20).blocks == (20, 20, 20)


def test_topological_order(toy):
    order = toy.topological_order()
    pos = {n: i for i, n in enumerate(order)}
    for (u, v) in toy.links:
        assert pos[u] < pos[v]
