"""Control plane: neighbourhood reports and the round state machine.

A node's optimization round proceeds as

1. timer tick: ask every parent for its round counter (``ROUND_QUERY``);
2. once all replies are in and every parent is strictly ahead, ask parents and
   children for their reports (``REPORT_QUERY``);
3. once every report is in, allocate, send ``RATE_REQUEST`` to each parent and
   advance the round counter (or freeze it at infinity when converged).

If any parent is not ahead, the attempt is dropped and retried on the next
tick.  Sources sit at infinity from the start and only answer queries.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .allocation import AllocationResult, NeighborhoodSnapshot, allocate, check_constraints
from .errors import ConfigurationError
from .topology import Topology

INF = math.inf

ROUND_QUERY = "RoundQuery"
ROUND_REPLY = "RoundReply"
REPORT_QUERY = "ReportQuery"
PARENT_REPORT = "ParentReport"
CHILD_REPORT = "ChildReport"
RATE_REQUEST = "RateRequest"
GEN_ADVANCE = "GenerationAdvance"
GEN_FEEDBACK = "GenerationFeedback"


@dataclass(frozen=True)
class ControlMessage:
    kind: str
    sender: str
    receiver: str
    time: float
    payload: dict = field(default_factory=dict, compare=False)

    def summary(self) -> str:
        items = []
        for k, v in self.payload.items():
            if isinstance(v, dict):
                v = ",".join(f"{t}:{r:.4g}" for t, r in sorted(v.items()))
            items.append(f"{k}={v}")
        return " ".join(items)


@dataclass
class ProtocolParams:
    l_max: int = 30
    l_min: int = 3
    l_s: int = 3
    tol: float = 1e-3
    period: float = 0.5
    jitter: float = 0.1
    report_mode: str = "allocated"  # or "measured"

    def __post_init__(self):
        if not (self.l_max > self.l_min >= 0 and self.l_s >= 1):
            raise ConfigurationError("need l_max > l_min >= 0 and l_s >= 1")
        if self.tol <= 0 or self.period <= 0 or not 0 <= self.jitter < 1:
            raise ConfigurationError("tolerance and period must be positive, jitter in [0, 1)")
        if self.report_mode not in ("allocated", "measured"):
            raise ConfigurationError(f"unknown report mode {self.report_mode!r}")


def delay_unchanged(history: Sequence[float], l_s: int, tol: float) -> bool:
    """True iff the last ``l_s + 1`` delays agree pairwise within ``tol`` (relative)."""
    if len(history) < l_s + 1:
        return False
    last = list(history)[-(l_s + 1):]
    for a in last:
        for b in last:
            if math.isinf(a) or math.isinf(b):
                if a != b:
                    return False
                continue
            if abs(a - b) > tol * max(abs(a), abs(b), 1e-300):
                return False
    return True


@dataclass
class LogEntry:
    time: float
    node: str
    event: str
    round: float
    detail: dict = field(default_factory=dict)


class ProtocolNode:
    """Round state machine of one overlay node."""

    def __init__(
        self,
        topo: Topology,
        node_id: str,
        params: ProtocolParams,
        mode: str = "inter",
        log: list | None = None,
        audit: bool = False,
    ):
        self.topo = topo
        self.id = node_id
        self.node = topo.nodes[node_id]
        self.params = params
        self.mode = mode
        self.is_source = self.node.is_source
        self.l: float = INF if self.is_source else 0
        self.capped = False
        self.history: deque[float] = deque(maxlen=params.l_s + 1)
        self.allocation: AllocationResult | None = None
        self.in_rates: dict[tuple[str, int], float] = {}
        self.wire: dict[tuple[str, int], float] = {}
        self.child_requests: dict[str, dict[int, float]] = {c: {} for c in self.node.children}
        self.measured_input: dict[int, float] | None = None
        self.log = log if log is not None else []
        self.audit = audit
        self.violations: list[str] = []
        self.optimizations = 0
        self._phase = "idle"
        self._replies: dict[str, float] = {}
        self._parent_reports: dict[str, dict[int, float]] = {}
        self._child_reports: dict[str, dict] = {}
        self._round_token = 0

    # -- reports this node hands out ------------------------------------

    def input_by_type(self, exclude: str | None = None) -> dict[int, float]:
        out: dict[int, float] = {}
        for (k, t), r in self.in_rates.items():
            if k != exclude and r > 0:
                out[t] = out.get(t, 0.0) + r
        return out

    def parent_report(self) -> dict[int, float]:
        if self.is_source:
            return {1 << s: self.topo.sessions[s].rate for s in self.node.hosted_sessions}
        if self.params.report_mode == "measured" and self.measured_input is not None:
            return dict(self.measured_input)
        return self.input_by_type()

    def child_report(self, parent: str) -> dict:
        return {
            "side": self.input_by_type(exclude=parent),
            "g": self.node.subscription,
            "C": self.node.input_capacity,
        }

    # -- state machine ---------------------------------------------------

    def _msg(self, kind, to, now, **payload) -> ControlMessage:
        return ControlMessage(kind, self.id, to, now, payload)

    def on_tick(self, now: float) -> list[ControlMessage]:
        if self.is_source or self.l == INF or self._phase != "idle":
            return []
        self._phase = "rounds"
        self._round_token += 1
        self._replies = {}
        return [self._msg(ROUND_QUERY, k, now, token=self._round_token) for k in self.node.parents]

    def on_message(self, msg: ControlMessage, now: float) -> list[ControlMessage]:
        k = msg.kind
        if k == ROUND_QUERY:
            return [self._msg(ROUND_REPLY, msg.sender, now, l=self.l, token=msg.payload.get("token"))]
        if k == REPORT_QUERY:
            if msg.sender in self.node.parents:
                return [self._msg(CHILD_REPORT, msg.sender, now, token=msg.payload.get("token"), **self.child_report(msg.sender))]
            return [self._msg(PARENT_REPORT, msg.sender, now, token=msg.payload.get("token"), R=self.parent_report())]
        if k == RATE_REQUEST:
            self.child_requests[msg.sender] = dict(msg.payload["f"])
            return []
        if msg.payload.get("token") != self._round_token:
            return []  # stale reply from an abandoned attempt
        if k == ROUND_REPLY and self._phase == "rounds":
            self._replies[msg.sender] = msg.payload["l"]
            if len(self._replies) < len(self.node.parents):
                return []
            if not all(lk > self.l for lk in self._replies.values()):
                self._phase = "idle"
                self.log.append(LogEntry(now, self.id, "gate-wait", self.l, {"parents": dict(self._replies)}))
                return []
            self._phase = "reports"
            self._gate_rounds = dict(self._replies)
            self._parent_reports = {}
            self._child_reports = {}
            out = [self._msg(REPORT_QUERY, p, now, token=self._round_token) for p in self.node.parents]
            out += [self._msg(REPORT_QUERY, c, now, token=self._round_token) for c in self.node.children]
            return out
        if k == PARENT_REPORT and self._phase == "reports":
            self._parent_reports[msg.sender] = dict(msg.payload["R"])
        elif k == CHILD_REPORT and self._phase == "reports":
            self._child_reports[msg.sender] = dict(msg.payload)
        else:
            return []
        if len(self._parent_reports) == len(self.node.parents) and len(self._child_reports) == len(self.node.children):
            return self._optimize(now)
        return []

    def snapshot(self) -> NeighborhoodSnapshot:
        topo = self.topo
        parents = []
        for k in self.node.parents:
            ln = topo.link(k, self.id)
            parents.append((k, ln.capacity, ln.loss, self._parent_reports.get(k, {})))
        children = []
        for j in self.node.children:
            ln = topo.link(self.id, j)
            rep = self._child_reports.get(j, {"side": {}, "g": topo.nodes[j].subscription, "C": topo.nodes[j].input_capacity})
            children.append((j, ln.capacity, ln.loss, rep["g"], rep["C"], rep["side"]))
        return NeighborhoodSnapshot.make(
            self.id,
            self.node.subscription,
            self.node.input_capacity,
            topo.blocks,
            [s.rate for s in topo.sessions],
            parents,
            children,
            self.mode,
        )

    def _optimize(self, now: float) -> list[ControlMessage]:
        snap = self.snapshot()
        res = allocate(snap)
        self.optimizations += 1
        if self.audit and not res.starved:
            self.violations += [f"{self.id}@{now:.3f}: {v}" for v in check_constraints(snap, res.in_rates, res.out_rates)]
        self.log.append(
            LogEntry(now, self.id, "optimize", self.l, {
                "parents": dict(self._gate_rounds),
                "delay": res.own_delay,
                "avg_delay": res.average_delay,
                "starved": res.starved,
                "combination": res.combination,
            })
        )
        if not res.starved:
            self.allocation = res
            self.in_rates = dict(res.in_rates)
            self.wire = dict(res.wire)
        self.history.append(res.own_delay if not res.starved else INF)
        out = []
        for k in self.node.parents:
            f = {t: v for (kk, t), v in self.wire.items() if kk == k and v > 0}
            out.append(self._msg(RATE_REQUEST, k, now, f=f))
        parents_done = all(lk == INF for lk in self._gate_rounds.values())
        if parents_done and self.l > self.params.l_min and delay_unchanged(self.history, self.params.l_s, self.params.tol):
            self.l = INF
            self.log.append(LogEntry(now, self.id, "converged", INF))
        else:
            self.l += 1
            if self.l >= self.params.l_max:
                self.l = INF
                self.capped = True
                self.log.append(LogEntry(now, self.id, "capped", INF))
        self._phase = "idle"
        return out


def try_round(node: ProtocolNode, inbox: Sequence[ControlMessage], now: float) -> list[ControlMessage]:
    """Feed ``inbox`` to ``node`` and then fire its timer; return outgoing messages."""
    out: list[ControlMessage] = []
    for m in inbox:
        out += node.on_message(m, now)
    out += node.on_tick(now)
    return out


def audit_gate(log: Sequence[LogEntry]) -> list[str]:
    """Check from the log that every optimization saw all parents strictly ahead."""
    bad = []
    for e in log:
        if e.event == "optimize":
            for k, lk in e.detail["parents"].items():
                if not lk > e.round:
                    bad.append(f"{e.node} optimized at round {e.round} while parent {k} was at {lk}")
    return bad


def run_control_plane(
    topo: Topology,
    params: ProtocolParams | None = None,
    mode: str = "inter",
    seed: int = 0,
    latency: float | None = None,
    max_time: float = 120.0,
    audit: bool = False,
):
    """Drive the protocol alone (no data plane) until every node is frozen.

    Returns ``(nodes, log, end_time)``.  Used by tests and as the warm-up
    phase of the simulator.
    """
    import heapq

    import numpy as np

    params = params or ProtocolParams()
    log: list[LogEntry] = []
    nodes = {nid: ProtocolNode(topo, nid, params, mode, log, audit) for nid in topo.nodes}
    rng = np.random.default_rng(seed)
    heap: list = []
    seq = 0

    def push(t, kind, data):
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, data))
        seq += 1

    for nid in topo.nodes:
        if not nodes[nid].is_source:
            push(float(rng.uniform(0, params.period)), "tick", nid)

    def delay_of(m: ControlMessage) -> float:
        if latency is not None:
            return latency
        ln = topo.links.get((m.sender, m.receiver)) or topo.links.get((m.receiver, m.sender))
        return ln.delay if ln else 0.0

    now = 0.0
    while heap:
        now, _, kind, data = heapq.heappop(heap)
        if now > max_time:
            break
        if kind == "tick":
            node = nodes[data]
            out = node.on_tick(now)
            if node.l != INF:
                push(now + params.period * (1 + rng.uniform(-params.jitter, params.jitter)), "tick", data)
        else:
            out = nodes[data.receiver].on_message(data, now)
        for m in out:
            push(now + delay_of(m), "msg", m)
        if all(n.l == INF for n in nodes.values()) and kind == "msg" and not any(k == "msg" for _, _, k, _ in heap):
            break
    return nodes, log, now
