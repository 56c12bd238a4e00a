"""Sessions, overlay nodes, lossy links and the packet-type algebra.

Packet types are plain ``int`` bitmasks over session ids: bit ``s`` is set when
session ``s`` takes part in the combination.  Labels use 1-based names, so the
mask ``0b101`` prints as ``"s1s3"``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import ConfigurationError, DomainError, TopologyError

MAX_SESSIONS = 16
DEFAULT_PROPAGATION_DELAY = 0.010


# ---------------------------------------------------------------------------
# packet-type algebra


def all_types(num_sessions: int) -> list[int]:
    """Every nonempty session combination, ascending by bitmask."""
    if not isinstance(num_sessions, int) or not 1 <= num_sessions <= MAX_SESSIONS:
        raise ConfigurationError(
            f"num_sessions must be an integer in [1, {MAX_SESSIONS}], got {num_sessions!r}"
        )
    return list(range(1, 1 << num_sessions))


def singleton_types(num_sessions: int) -> list[int]:
    all_types(num_sessions)  # range check
    return [1 << s for s in range(num_sessions)]


def type_universe(num_sessions: int, mode: str = "inter") -> list[int]:
    """Types usable in a run: all combinations for ``inter``, singletons for ``intra``."""
    if mode == "inter":
        return all_types(num_sessions)
    if mode == "intra":
        return singleton_types(num_sessions)
    raise ConfigurationError(f"unknown coding mode {mode!r} (expected 'inter' or 'intra')")


def _check_type(t: int) -> None:
    if not isinstance(t, int) or t <= 0 or t >= 1 << MAX_SESSIONS:
        raise DomainError(f"invalid packet type {t!r}")


def sessions_of(t: int) -> tuple[int, ...]:
    """Component sessions of ``t`` in ascending order."""
    _check_type(t)
    return tuple(s for s in range(t.bit_length()) if t >> s & 1)


def subtypes(t: int) -> list[int]:
    """All nonempty subsets of ``t`` (``t`` included), ascending."""
    _check_type(t)
    out = []
    sub = t
    while sub:
        out.append(sub)
        sub = (sub - 1) & t
    out.reverse()
    return out


def types_with_session(s: int, universe: Iterable[int]) -> list[int]:
    """Members of ``universe`` that contain session ``s``."""
    return [t for t in universe if t >> s & 1]


def subtypes_with_session(t: int, s: int) -> list[int]:
    """Subsets of ``t`` that still contain ``s``."""
    _check_type(t)
    if not t >> s & 1:
        raise DomainError(f"session {s} is not a component of {type_label(t)}")
    return [u for u in subtypes(t) if u >> s & 1]


def type_label(t: int) -> str:
    return "".join(f"s{s + 1}" for s in sessions_of(t))


def parse_type_label(label: str) -> int:
    parts = [p for p in label.strip().lower().split("s") if p]
    if not parts:
        raise DomainError(f"cannot parse packet type {label!r}")
    mask = 0
    for p in parts:
        if not p.isdigit() or int(p) < 1:
            raise DomainError(f"cannot parse packet type {label!r}")
        mask |= 1 << (int(p) - 1)
    return mask


# ---------------------------------------------------------------------------
# graph model


@dataclass(frozen=True)
class Session:
    id: int
    rate: float  # U_s, packets/sec
    block: int  # N_s, packets per generation

    @property
    def generation_duration(self) -> float:
        return self.block / self.rate


@dataclass(frozen=True)
class Link:
    src: str
    dst: str
    capacity: float  # b_ij, packets/sec
    loss: float  # pi_ij
    delay: float = DEFAULT_PROPAGATION_DELAY

    @property
    def goodput(self) -> float:
        """Innovative-rate ceiling ``b (1 - pi)``."""
        return self.capacity * (1.0 - self.loss)


@dataclass(frozen=True)
class Node:
    id: str
    subscription: int | None
    parents: tuple[str, ...]
    children: tuple[str, ...]
    input_capacity: float  # C_i^d = sum of parent link capacities
    hosted_sessions: tuple[int, ...] = ()

    @property
    def is_source(self) -> bool:
        return bool(self.hosted_sessions)


@dataclass
class Topology:
    """Immutable-after-construction overlay description.

    Build through :meth:`build` (or :func:`parse_topology`), which derives the
    parent/child relations and input capacities from the link list.
    """

    sessions: tuple[Session, ...]
    nodes: dict[str, Node]
    links: dict[tuple[str, str], Link]
    sources: dict[int, str]
    _order: tuple[str, ...] = field(default=(), repr=False)

    @classmethod
    def build(
        cls,
        sessions: Iterable[Session],
        node_specs: Iterable[tuple[str, int | None]],
        links: Iterable[Link],
        sources: dict[int, str],
    ) -> "Topology":
        sessions = tuple(sorted(sessions, key=lambda s: s.id))
        node_specs = list(node_specs)
        links = list(links)
        parents: dict[str, list[str]] = {nid: [] for nid, _ in node_specs}
        children: dict[str, list[str]] = {nid: [] for nid, _ in node_specs}
        link_map: dict[tuple[str, str], Link] = {}
        for ln in links:
            link_map[(ln.src, ln.dst)] = ln
            if ln.dst in parents:
                parents[ln.dst].append(ln.src)
            if ln.src in children:
                children[ln.src].append(ln.dst)
        hosted: dict[str, list[int]] = {}
        for s, nid in sources.items():
            hosted.setdefault(nid, []).append(s)
        nodes = {}
        for nid, sub in node_specs:
            cap = math.fsum(link_map[(p, nid)].capacity for p in parents[nid])
            nodes[nid] = Node(
                id=nid,
                subscription=sub,
                parents=tuple(parents[nid]),
                children=tuple(children[nid]),
                input_capacity=cap,
                hosted_sessions=tuple(sorted(hosted.get(nid, ()))),
            )
        topo = cls(sessions, nodes, link_map, dict(sources))
        topo._order = tuple(nid for nid, _ in node_specs)
        return topo

    # -- queries ---------------------------------------------------------

    @property
    def num_sessions(self) -> int:
        return len(self.sessions)

    @property
    def blocks(self) -> tuple[int, ...]:
        return tuple(s.block for s in self.sessions)

    def link(self, src: str, dst: str) -> Link:
        return self.links[(src, dst)]

    def clients(self) -> list[str]:
        """Non-source nodes in declaration order."""
        return [nid for nid in self._order if not self.nodes[nid].is_source]

    def topological_order(self) -> list[str]:
        order, cycle = _kahn(self)
        if cycle:
            raise TopologyError(["cycle through nodes " + ", ".join(sorted(cycle))])
        return order

    def with_link_capacity(self, pairs: Iterable[tuple[str, str]], capacity: float) -> "Topology":
        """Copy with the listed links re-rated (used by bandwidth sweeps)."""
        pairs = set(pairs)
        missing = pairs - set(self.links)
        if missing:
            raise ConfigurationError(f"unknown links {sorted(missing)}")
        links = [
            Link(ln.src, ln.dst, capacity, ln.loss, ln.delay) if key in pairs else ln
            for key, ln in self.links.items()
        ]
        specs = [(nid, self.nodes[nid].subscription) for nid in self._order]
        return Topology.build(self.sessions, specs, links, self.sources)

    def with_blocks(self, block: int) -> "Topology":
        """Copy in which every session uses generations of ``block`` packets."""
        if block < 1:
            raise ConfigurationError(f"block size must be >= 1, got {block}")
        sessions = [Session(s.id, s.rate, block) for s in self.sessions]
        specs = [(nid, self.nodes[nid].subscription) for nid in self._order]
        return Topology.build(sessions, specs, list(self.links.values()), self.sources)

    def validate(self) -> None:
        diags = validate_topology(self)
        if diags:
            raise TopologyError(diags)

    def to_text(self) -> str:
        lines = []
        for s in self.sessions:
            lines.append(f"session {s.id} rate {s.rate!r} block {s.block}")
        for nid in self._order:
            sub = self.nodes[nid].subscription
            lines.append(f"node {nid}" + (f" subscribes {sub}" if sub is not None else ""))
        for s, nid in sorted(self.sources.items()):
            lines.append(f"source {s} at {nid}")
        for ln in self.links.values():
            extra = "" if ln.delay == DEFAULT_PROPAGATION_DELAY else f" delay {ln.delay!r}"
            lines.append(
                f"link {ln.src} {ln.dst} capacity {ln.capacity!r} loss {ln.loss!r}{extra}"
            )
        return "\n".join(lines) + "\n"


def _kahn(topo: Topology) -> tuple[list[str], set[str]]:
    indeg = {nid: 0 for nid in topo.nodes}
    for (u, v) in topo.links:
        if u in indeg and v in indeg:
            indeg[v] += 1
    queue = deque(nid for nid in topo._order or topo.nodes if indeg[nid] == 0)
    order = []
    while queue:
        u = queue.popleft()
        order.append(u)
        for v in topo.nodes[u].children:
            if v in indeg:
                indeg[v] -= 1
                if indeg[v] == 0:
                    queue.append(v)
    leftover = {nid for nid, d in indeg.items() if d > 0}
    return order, leftover


def validate_topology(topo: Topology) -> list[str]:
    """Return diagnostics; an empty list means the topology is usable."""
    diags: list[str] = []
    ids = [s.id for s in topo.sessions]
    if not ids:
        diags.append("no sessions declared")
    if ids != list(range(len(ids))):
        diags.append(f"session ids must be 0..{len(ids) - 1} without gaps, got {ids}")
    if len(ids) > MAX_SESSIONS:
        diags.append(f"at most {MAX_SESSIONS} sessions are supported")
    for s in topo.sessions:
        if not s.rate > 0:
            diags.append(f"session {s.id}: rate must be > 0")
        if s.block < 1:
            diags.append(f"session {s.id}: block size must be >= 1")

    for (u, v), ln in topo.links.items():
        if u not in topo.nodes or v not in topo.nodes:
            diags.append(f"link {u}->{v}: unknown endpoint")
        if u == v:
            diags.append(f"link {u}->{v}: self-loop")
        if not ln.capacity > 0:
            diags.append(f"link {u}->{v}: capacity must be > 0")
        if not 0 <= ln.loss < 1:
            diags.append(f"link {u}->{v}: loss must be in [0, 1)")
        if ln.delay < 0:
            diags.append(f"link {u}->{v}: negative propagation delay")

    for s, nid in topo.sources.items():
        if s not in ids:
            diags.append(f"source for unknown session {s}")
        if nid not in topo.nodes:
            diags.append(f"source {s} placed at unknown node {nid}")
    for nid, node in topo.nodes.items():
        if node.is_source:
            if node.parents:
                diags.append(f"source node {nid} has parents")
            if node.subscription is not None:
                diags.append(f"source node {nid} also subscribes")
            continue
        if not node.parents:
            diags.append(f"orphan node {nid}: no parents and no source role")
        if node.subscription is None:
            diags.append(f"node {nid} subscribes to nothing")
        elif node.subscription not in ids:
            diags.append(f"node {nid} subscribes to unknown session {node.subscription}")
        elif node.subscription not in topo.sources:
            diags.append(f"missing source for session {node.subscription} (wanted by {nid})")

    _, cycle = _kahn(topo)
    if cycle:
        diags.append("cycle through nodes " + ", ".join(sorted(cycle)))
    return diags


# ---------------------------------------------------------------------------
# text format


def parse_topology(text: str) -> Topology:
    sessions: list[Session] = []
    specs: list[tuple[str, int | None]] = []
    links: list[Link] = []
    sources: dict[int, str] = {}
    errors: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            kind = tok[0]
            if kind == "session" and len(tok) == 6 and tok[2] == "rate" and tok[4] == "block":
                sessions.append(Session(int(tok[1]), float(tok[3]), int(tok[5])))
            elif kind == "node" and len(tok) == 2:
                specs.append((tok[1], None))
            elif kind == "node" and len(tok) == 4 and tok[2] == "subscribes":
                specs.append((tok[1], int(tok[3])))
            elif kind == "source" and len(tok) == 4 and tok[2] == "at":
                s = int(tok[1])
                if s in sources:
                    errors.append(f"line {lineno}: session {s} has two sources")
                sources[s] = tok[3]
            elif (
                kind == "link"
                and len(tok) in (7, 9)
                and tok[3] == "capacity"
                and tok[5] == "loss"
                and (len(tok) == 7 or tok[7] == "delay")
            ):
                delay = float(tok[8]) if len(tok) == 9 else DEFAULT_PROPAGATION_DELAY
                links.append(Link(tok[1], tok[2], float(tok[4]), float(tok[6]), delay))
            else:
                errors.append(f"line {lineno}: cannot parse {line!r}")
        except ValueError:
            errors.append(f"line {lineno}: bad number in {line!r}")
    seen = set()
    for nid, _ in specs:
        if nid in seen:
            errors.append(f"node {nid} declared twice")
        seen.add(nid)
    if errors:
        raise TopologyError(errors)
    return Topology.build(sessions, specs, links, sources)


def load_topology(path: str | Path) -> Topology:
    return parse_topology(Path(path).read_text(encoding="utf-8"))
