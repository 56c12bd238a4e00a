"""Random clustered overlays: layered regular graphs, pruned and shifted.

Each cluster starts as a layered directed graph in which every node of layer
``k`` links to ``out_degree`` consecutive nodes of layer ``k + 1``.  Every
intra-cluster link is then dropped with the pruning probability, and each
survivor is re-pointed with the shifting probability to a random node of the
same or the next layer.  Servers feed the first layer of the outer clusters;
the middle cluster hangs off the last layers of the outer ones through bridge
links plus a few slow direct links from the servers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, TopologyError
from .topology import Link, Session, Topology, validate_topology


def kbps_to_pps(kbps: float, packet_bytes: int = 1500) -> float:
    """Link rate in packets per second for a given packet size."""
    return kbps * 1000.0 / (packet_bytes * 8)


@dataclass(frozen=True)
class ClusterSpec:
    sizes: tuple[int, ...] = (9, 12, 9)
    layers: int = 3
    out_degree: int = 3
    pruning: float = 0.4
    shifting: float = 0.2
    num_sessions: int = 3
    source_rate: float = kbps_to_pps(759)
    block: int = 20
    server_capacity: float = kbps_to_pps(759)
    bridge_capacity: float = kbps_to_pps(468)
    intra_capacity: float = kbps_to_pps(2600)
    direct_capacity: float = kbps_to_pps(468)
    direct_links: int = 2
    loss: float = 0.05
    max_attempts: int = 100

    def __post_init__(self):
        if len(self.sizes) != 3:
            raise ConfigurationError("the clustered overlay needs exactly three clusters")
        if self.layers < 1 or any(n < self.layers for n in self.sizes):
            raise ConfigurationError("every cluster needs at least one node per layer")
        if self.out_degree < 1:
            raise ConfigurationError("out_degree must be >= 1")
        for name in ("pruning", "shifting"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigurationError(f"{name} probability {v} outside [0, 1]")
        if min(self.server_capacity, self.bridge_capacity, self.intra_capacity, self.direct_capacity) <= 0:
            raise ConfigurationError("link capacities must be positive")
        if self.num_sessions < 1 or self.max_attempts < 1 or self.direct_links < 0:
            raise ConfigurationError("bad session count, attempt budget or direct-link count")

    @classmethod
    def parse(cls, text: str) -> "ClusterSpec":
        """Build from ``key=value`` pairs separated by commas or semicolons.

        ``sizes`` takes ``9/12/9``; capacities ending in ``kbps`` are converted
        to packets per second.
        """
        kwargs: dict = {}
        fields = cls.__dataclass_fields__
        for item in text.replace(";", ",").split(","):
            item = item.strip()
            if not item:
                continue
            if "=" not in item:
                raise ConfigurationError(f"cluster spec item {item!r} is not key=value")
            key, val = (x.strip() for x in item.split("=", 1))
            if key not in fields:
                raise ConfigurationError(f"unknown cluster spec key {key!r}")
            try:
                if key == "sizes":
                    kwargs[key] = tuple(int(v) for v in val.split("/"))
                elif val.endswith("kbps"):
                    kwargs[key] = kbps_to_pps(float(val[:-4]))
                elif fields[key].type in ("int", int):
                    kwargs[key] = int(val)
                else:
                    kwargs[key] = float(val)
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {key}: {val!r}") from exc
        return cls(**kwargs)


def _layer_sizes(n: int, layers: int) -> list[int]:
    base, extra = divmod(n, layers)
    return [base + (1 if k < extra else 0) for k in range(layers)]


def regular_layered_links(names: list[list[str]], out_degree: int) -> list[tuple[str, str]]:
    """Layer ``k`` node ``j`` links to nodes ``j, j+1, ...`` (mod size) of layer ``k+1``."""
    edges = []
    for k in range(len(names) - 1):
        nxt = names[k + 1]
        for j, a in enumerate(names[k]):
            for m in range(min(out_degree, len(nxt))):
                edges.append((a, nxt[(j + m) % len(nxt)]))
    return edges


def prune_and_shift(
    names: list[list[str]], edges: list[tuple[str, str]], pruning: float, shifting: float, rng: np.random.Generator
) -> list[tuple[str, str]]:
    layer_of = {n: k for k, layer in enumerate(names) for n in layer}
    out, seen = [], set()
    for a, b in edges:
        if rng.random() < pruning:
            continue
        if rng.random() < shifting:
            k = layer_of[a]
            pool = [n for n in names[k] if n != a]
            if k + 1 < len(names):
                pool += names[k + 1]
            b = pool[int(rng.integers(len(pool)))] if pool else b
        if (a, b) not in seen:
            seen.add((a, b))
            out.append((a, b))
    return out


def _reaches(topo: Topology) -> list[str]:
    """Clients whose subscribed session cannot flow to them."""
    bad = []
    for nid in topo.clients():
        g = topo.nodes[nid].subscription
        src = topo.sources.get(g)
        stack, seen = [nid], {nid}
        found = False
        while stack:
            v = stack.pop()
            if v == src:
                found = True
                break
            for p in topo.nodes[v].parents:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        if not found:
            bad.append(f"session {g} cannot reach {nid}")
    return bad


def generate_cluster_topology(spec: ClusterSpec, rng: np.random.Generator) -> Topology:
    """Sample a clustered overlay, resampling until it is a valid connected DAG."""
    diagnostics: list[str] = []
    for _ in range(spec.max_attempts):
        topo = _sample(spec, rng)
        diagnostics = validate_topology(topo) + _reaches(topo)
        if not diagnostics:
            return topo
    raise TopologyError([f"no valid clustered topology after {spec.max_attempts} attempts"] + diagnostics)


def cluster_members(topo: Topology, cluster: int) -> list[str]:
    """Client ids of cluster ``cluster`` (1-based), as named by the generator."""
    prefix = f"c{cluster}_"
    return [n for n in topo.clients() if n.startswith(prefix)]


def bridge_links(topo: Topology) -> list[tuple[str, str]]:
    """Links entering cluster 2 from clusters 1 and 3."""
    return [(a, b) for (a, b) in topo.links if b.startswith("c2_") and a[:3] in ("c1_", "c3_")]


def _sample(spec: ClusterSpec, rng: np.random.Generator) -> Topology:
    S = spec.num_sessions
    sessions = [Session(s, spec.source_rate, spec.block) for s in range(S)]
    servers = [f"srv{s + 1}" for s in range(S)]
    node_specs: list[tuple[str, int | None]] = [(s, None) for s in servers]
    links: list[Link] = []
    layered: list[list[list[str]]] = []
    for c, n in enumerate(spec.sizes, start=1):
        names, i = [], 0
        for k, size in enumerate(_layer_sizes(n, spec.layers)):
            names.append([f"c{c}_n{i + j + 1}" for j in range(size)])
            i += size
        layered.append(names)
        for layer in names:
            for nid in layer:
                node_specs.append((nid, int(rng.integers(S))))
        edges = prune_and_shift(names, regular_layered_links(names, spec.out_degree), spec.pruning, spec.shifting, rng)
        links += [Link(a, b, spec.intra_capacity, spec.loss) for a, b in edges]
    # outer clusters: every first-layer node hears every server
    for c in (0, 2):
        for nid in layered[c][0]:
            links += [Link(s, nid, spec.server_capacity, spec.loss) for s in servers]
    # middle cluster: bridges from the outer clusters' last layers
    entry = layered[1][0]
    for c in (0, 2):
        last = layered[c][-1]
        for j, nid in enumerate(entry):
            links.append(Link(last[j % len(last)], nid, spec.bridge_capacity, spec.loss))
    # a few slow direct links from random servers into the middle cluster
    for idx in rng.choice(len(entry), size=min(spec.direct_links, len(entry)), replace=False):
        s = servers[int(rng.integers(S))]
        links.append(Link(s, entry[int(idx)], spec.direct_capacity, spec.loss))
    return Topology.build(sessions, node_specs, links, {s: servers[s] for s in range(S)})
