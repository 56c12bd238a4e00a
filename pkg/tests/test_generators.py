import numpy as np
import pytest

from isnc.errors import ConfigurationError, TopologyError
from isnc.generators import (
    ClusterSpec,
    bridge_links,
    cluster_members,
    generate_cluster_topology,
    kbps_to_pps,
    prune_and_shift,
    regular_layered_links,
)
from isnc.topology import validate_topology


def test_kbps_conversion():
    assert kbps_to_pps(759) == pytest.approx(63.25)
    assert kbps_to_pps(468) == pytest.approx(39.0)
    assert kbps_to_pps(12, packet_bytes=1000) == pytest.approx(1.5)


def test_regular_graph_shape():
    names = [["a1", "a2", "a3"], ["b1", "b2", "b3", "b4"]]
    edges = regular_layered_links(names, 3)
    assert len(edges) == 9
    assert ("a3", "b1") in edges and ("a3", "b3") in edges
    outdeg = {a: sum(1 for x, _ in edges if x == a) for a in names[0]}
    assert set(outdeg.values()) == {3}


def test_no_pruning_no_shifting_is_identity(rng):
    names = [["a1", "a2"], ["b1", "b2"], ["c1", "c2"]]
    edges = regular_layered_links(names, 2)
    assert prune_and_shift(names, edges, 0.0, 0.0, rng) == edges
    assert prune_and_shift(names, edges, 1.0, 0.0, rng) == []


def test_shifted_links_stay_forward(rng):
    names = [[f"l{k}_{j}" for j in range(4)] for k in range(3)]
    layer = {n: k for k, l in enumerate(names) for n in l}
    for a, b in prune_and_shift(names, regular_layered_links(names, 3), 0.2, 1.0, rng):
        assert a != b and layer[b] - layer[a] in (0, 1)


def test_default_cluster_topology_is_valid():
    topo = generate_cluster_topology(ClusterSpec(), np.random.default_rng(0))
    assert validate_topology(topo) == []
    assert [len(cluster_members(topo, c)) for c in (1, 2, 3)] == [9, 12, 9]
    assert len(bridge_links(topo)) == 8
    assert all(topo.links[l].capacity == pytest.approx(39.0) for l in bridge_links(topo))


def test_generator_is_seeded():
    a = generate_cluster_topology(ClusterSpec(), np.random.default_rng(5)).to_text()
    b = generate_cluster_topology(ClusterSpec(), np.random.default_rng(5)).to_text()
    assert a == b


def test_full_pruning_fails_with_diagnostics():
    spec = ClusterSpec(pruning=1.0, max_attempts=3)
    with pytest.raises(TopologyError) as err:
        generate_cluster_topology(spec, np.random.default_rng(0))
    assert "3 attempts" in str(err.value)


def test_parse():
    s = ClusterSpec.parse("sizes=6/6/6, pruning=0.1; bridge_capacity=240kbps, block=10")
    assert s.sizes == (6, 6, 6) and s.pruning == 0.1 and s.block == 10
    assert s.bridge_capacity == pytest.approx(20.0)


@pytest.mark.parametrize("text", ["pruning=1.5", "colour=red", "sizes=4/4", "layers", "block=x"])
def test_parse_errors(text):
    with pytest.raises(ConfigurationError):
        ClusterSpec.parse(text)
