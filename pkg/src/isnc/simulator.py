"""Discrete-event simulation of the overlay: control plane plus coded data plane.

One heap of ``(time, seq, kind, data)`` drives everything.  The control plane
(round protocol) runs first; streaming starts once every node froze its round
counter (or at a fixed time when configured).  Each (link, type) pair with a
positive wire rate emits packets evenly spaced at ``1/f``; each packet is a
fresh random recombination of what the sender holds for the generation the
receiver asked for, dropped independently with the link's loss probability.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import protocol as P
from .coding import DecoderState, SourceEncoder
from .errors import ConfigurationError
from .protocol import ControlMessage, ProtocolNode, ProtocolParams
from .scheduler import DECODED, GenerationPlan, NodeScheduler
from .topology import Topology, type_universe

PURPOSES = {"coef": 0, "loss": 1, "jitter": 2, "tx": 3}


@dataclass
class SimConfig:
    duration: float = 40.0  # seconds of streaming
    playback_delay: float = 1.4  # seconds
    generation_interval: float | None = None  # default: max_s N_s / U_s
    alpha: float = 1.5
    skipping: bool = True
    stream_start: float | None = None  # None: as soon as the control plane froze
    protocol_timeout: float = 60.0
    departures: str = "even"  # or "poisson"
    payload_len: int = 4
    audit: bool = True
    trace: bool = False
    measure_window: float = 2.0
    measure_smoothing: float = 0.3
    protocol: ProtocolParams = field(default_factory=ProtocolParams)

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigurationError("duration must be positive")
        if self.playback_delay < 0:
            raise ConfigurationError("playback delay must be >= 0")
        if self.generation_interval is not None and not self.generation_interval > 0:
            raise ConfigurationError("generation interval must be positive")
        if self.departures not in ("even", "poisson"):
            raise ConfigurationError(f"unknown departure process {self.departures!r}")
        if not 0 <= self.payload_len < 65536:
            raise ConfigurationError("payload length must fit in 16 bits")


def synthetic_payload(session: int, generation: int, index: int, length: int) -> bytes:
    h = hashlib.blake2b(f"{session}:{generation}:{index}".encode(), digest_size=max(1, min(64, length)))
    raw = h.digest()
    return (raw * (length // len(raw) + 1))[:length]


@dataclass
class GenerationRow:
    node: str
    generation: int
    first_packet_time: float | None
    decode_time: float | None
    status: str

    @property
    def delay(self) -> float | None:
        if self.decode_time is None or self.first_packet_time is None:
            return None
        return self.decode_time - self.first_packet_time


@dataclass
class MetricsSink:
    mode: str
    seed: int
    rows: list[GenerationRow] = field(default_factory=list)
    allocations: dict[str, dict[tuple[str, int], float]] = field(default_factory=dict)
    predicted_delay: dict[str, float] = field(default_factory=dict)
    measured_rates: dict[str, dict[tuple[str, int], float]] = field(default_factory=dict)
    protocol_log: list = field(default_factory=list)
    scheduler_log: list[tuple[float, str, str, int]] = field(default_factory=list)
    trace: list[str] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    payload_errors: int = 0
    rounds: dict[str, float] = field(default_factory=dict)
    capped: list[str] = field(default_factory=list)
    stream_start: float = math.nan
    packets_sent: int = 0
    packets_lost: int = 0

    def decode_delays(self, nodes: Iterable[str] | None = None) -> list[float]:
        keep = None if nodes is None else set(nodes)
        return [
            r.delay for r in self.rows
            if r.status == DECODED and r.delay is not None and (keep is None or r.node in keep)
        ]

    def average_delay(self, nodes: Iterable[str] | None = None) -> float:
        d = self.decode_delays(nodes)
        return float(np.mean(d)) if d else math.inf

    def decoded_pct(self, nodes: Iterable[str] | None = None) -> float:
        """Mean over nodes of the percentage of generations decoded in time."""
        keep = None if nodes is None else set(nodes)
        per: dict[str, list[bool]] = {}
        for r in self.rows:
            if keep is None or r.node in keep:
                per.setdefault(r.node, []).append(r.status == DECODED)
        if not per:
            return math.nan
        return float(np.mean([100.0 * np.mean(v) for v in per.values()]))

    def input_share(self, node: str, parent: str, t: int) -> float:
        rates = {k: v for k, v in self.allocations.get(node, {}).items() if k[0] == parent}
        tot = sum(rates.values())
        return rates.get((parent, t), 0.0) / tot if tot > 0 else 0.0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "generation", "first_packet_time", "decode_time", "status"])
            for r in self.rows:
                w.writerow([
                    r.node,
                    r.generation,
                    "" if r.first_packet_time is None else repr(r.first_packet_time),
                    "" if r.decode_time is None else repr(r.decode_time),
                    r.status,
                ])


def read_metrics_csv(path: str | Path) -> list[GenerationRow]:
    """Parse a file written by :meth:`MetricsSink.write_csv`."""
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(GenerationRow(
                rec["node"],
                int(rec["generation"]),
                float(rec["first_packet_time"]) if rec["first_packet_time"] else None,
                float(rec["decode_time"]) if rec["decode_time"] else None,
                rec["status"],
            ))
    return out


def _rng(seed: int, index: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index, PURPOSES[purpose]]))


class _Runtime:
    __slots__ = (
        "id", "proto", "sched", "decoders", "encoders", "child_gen", "rates", "tx_version",
        "rng_coef", "rng_loss", "rng_jitter", "rng_tx", "innov", "smoothed", "gen_version",
        "decoded_gens", "innov_count",
    )


class Simulator:
    def __init__(self, topo: Topology, config: SimConfig | None = None, mode: str = "inter", seed: int = 0):
        topo.validate()
        if mode not in ("inter", "intra"):
            raise ConfigurationError(f"unknown mode {mode!r}")
        self.topo = topo
        self.cfg = config or SimConfig()
        self.mode = mode
        self.seed = int(seed)
        self.universe = type_universe(topo.num_sessions, mode)
        interval = self.cfg.generation_interval
        if interval is None:
            interval = max(s.generation_duration for s in topo.sessions)
        self.interval = interval
        self.metrics = MetricsSink(mode, self.seed)
        self.heap: list = []
        self.seq = 0
        self.now = 0.0
        self.streaming = False
        self.plan: GenerationPlan | None = None
        self.n_gen = 0
        self.end_time = math.inf
        self.log: list = self.metrics.protocol_log
        self.nodes: dict[str, _Runtime] = {}
        for idx, nid in enumerate(topo.nodes):
            rt = _Runtime()
            rt.id = nid
            rt.proto = ProtocolNode(topo, nid, self.cfg.protocol, mode, self.log, self.cfg.audit)
            rt.sched = None
            rt.decoders = {}
            rt.encoders = {}
            rt.child_gen = {c: -1 for c in topo.nodes[nid].children}
            rt.rates = {}
            rt.tx_version = {}
            rt.rng_coef = _rng(self.seed, idx, "coef")
            rt.rng_loss = _rng(self.seed, idx, "loss")
            rt.rng_jitter = _rng(self.seed, idx, "jitter")
            rt.rng_tx = _rng(self.seed, idx, "tx")
            rt.innov = deque()
            rt.smoothed = None
            rt.gen_version = 0
            rt.decoded_gens = set()
            rt.innov_count = {}
            self.nodes[nid] = rt

    # -- engine ----------------------------------------------------------

    def push(self, t: float, kind: str, data) -> None:
        if t < self.now - 1e-12:
            raise RuntimeError(f"event {kind} scheduled in the past ({t} < {self.now})")
        heapq.heappush(self.heap, (t, self.seq, kind, data))
        self.seq += 1

    def send(self, msgs: list[ControlMessage]) -> None:
        for m in msgs:
            ln = self.topo.links.get((m.sender, m.receiver)) or self.topo.links.get((m.receiver, m.sender))
            self.push(self.now + (ln.delay if ln else 0.0), "msg", m)

    def run(self) -> MetricsSink:
        cfg = self.cfg
        for nid, rt in self.nodes.items():
            if not rt.proto.is_source:
                self.push(float(rt.rng_jitter.uniform(0, cfg.protocol.period)), "tick", nid)
        if cfg.stream_start is not None:
            self.push(cfg.stream_start, "start", None)
        else:
            self.push(cfg.protocol_timeout, "start", "timeout")
        handlers = {
            "tick": self._on_tick,
            "msg": self._on_msg,
            "tx": self._on_tx,
            "arr": self._on_arrival,
            "gen": self._on_gen_timer,
            "start": self._on_start,
        }
        while self.heap:
            t, _, kind, data = heapq.heappop(self.heap)
            if t > self.end_time:
                break
            self.now = t
            handlers[kind](data)
        self._finalize()
        return self.metrics

    # -- control plane ---------------------------------------------------

    def _on_tick(self, nid: str) -> None:
        rt = self.nodes[nid]
        if self.cfg.protocol.report_mode == "measured":
            rt.proto.measured_input = self._measure(rt)
        self.send(rt.proto.on_tick(self.now))
        if rt.proto.l != math.inf:
            p = self.cfg.protocol
            self.push(self.now + p.period * (1 + rt.rng_jitter.uniform(-p.jitter, p.jitter)), "tick", nid)

    def _on_msg(self, m: ControlMessage) -> None:
        if self.cfg.trace:
            self.metrics.trace.append(f"{self.now:.6f} {m.kind} {m.sender} {m.receiver} {m.summary()}")
        rt = self.nodes[m.receiver]
        if m.kind == P.GEN_ADVANCE:
            rt.child_gen[m.sender] = m.payload["G"]
            self._prune(rt)
            return
        if m.kind == P.GEN_FEEDBACK:
            if rt.sched is not None:
                rt.sched.on_child_feedback(m.sender, m.payload["G"])
                self._try_early(rt)
            return
        before = rt.proto.optimizations
        out = rt.proto.on_message(m, self.now)
        self.send(out)
        if m.kind == P.RATE_REQUEST:
            self._reschedule_tx(rt, m.sender)
        if rt.proto.optimizations != before and not self.streaming and self.cfg.stream_start is None:
            if all(n.proto.l == math.inf for n in self.nodes.values()):
                self.push(self.now + 0.1, "start", "converged")

    # -- data plane ------------------------------------------------------

    def _on_start(self, why) -> None:
        if self.streaming:
            return
        self.streaming = True
        start = self.now
        self.metrics.stream_start = start
        self.plan = GenerationPlan(start, self.cfg.playback_delay, self.interval)
        self.n_gen = max(1, int(math.floor(self.cfg.duration / self.interval + 1e-9)))
        self.end_time = self.plan.deadline(self.n_gen - 1) + self.interval
        for nid, rt in self.nodes.items():
            node = self.topo.nodes[nid]
            if not node.is_source:
                rt.sched = NodeScheduler(self.plan, list(node.children), self.cfg.alpha, self.cfg.skipping)
                self.push(start, "gen", (nid, rt.gen_version))
        for rt in self.nodes.values():
            for child in self.topo.nodes[rt.id].children:
                self._reschedule_tx(self.nodes[child], rt.id, sender=rt)

    def _reschedule_tx(self, child_rt: _Runtime, parent: str, sender: _Runtime | None = None) -> None:
        """(Re)start departures on parent->child after a new rate request."""
        sender = sender or self.nodes[parent]
        child = child_rt.id
        reqs = sender.proto.child_requests.get(child, {})
        ver = sender.tx_version.get(child, 0) + 1
        sender.tx_version[child] = ver
        if not self.streaming:
            return
        for t in sorted(reqs):
            f = reqs[t]
            if f > 1e-9:
                first = self.now + float(sender.rng_tx.uniform(0, 1.0 / f))
                self.push(first, "tx", (parent, child, t, ver))

    def _on_tx(self, data) -> None:
        parent, child, t, ver = data
        rt = self.nodes[parent]
        if rt.tx_version.get(child) != ver:
            return
        f = rt.proto.child_requests.get(child, {}).get(t, 0.0)
        if f <= 1e-9:
            return
        gap = 1.0 / f if self.cfg.departures == "even" else float(rt.rng_tx.exponential(1.0 / f))
        self.push(self.now + gap, "tx", data)
        gen = rt.child_gen.get(child, -1)
        if gen < 0:
            return
        pkt = self._make_packet(rt, gen, t)
        if pkt is None:
            return
        self.metrics.packets_sent += 1
        ln = self.topo.links[(parent, child)]
        if rt.rng_loss.random() < ln.loss:
            self.metrics.packets_lost += 1
            return
        self.push(self.now + ln.delay, "arr", (parent, child, pkt))

    def _make_packet(self, rt: _Runtime, gen: int, t: int):
        node = self.topo.nodes[rt.id]
        if node.is_source:
            if self.now < self.plan.release(gen) - 1e-12:
                return None
            enc = rt.encoders.get(gen)
            if enc is None:
                payloads = {
                    s: np.array(
                        [np.frombuffer(synthetic_payload(s, gen, l, self.cfg.payload_len), np.uint8)
                         for l in range(self.topo.sessions[s].block)],
                        dtype=np.uint8,
                    ).reshape(self.topo.sessions[s].block, self.cfg.payload_len)
                    for s in node.hosted_sessions
                }
                enc = rt.encoders[gen] = SourceEncoder(gen, self.topo.blocks, payloads)
                for old in [g for g in rt.encoders if g < min(rt.child_gen.values(), default=gen)]:
                    del rt.encoders[old]
            if t & ~enc.hosted:
                return None
            return enc.encode(t, rt.rng_coef)
        dec = rt.decoders.get(gen)
        if dec is None:
            return None
        return dec.recode(t, rt.rng_coef)

    def _decoder(self, rt: _Runtime, gen: int) -> DecoderState | None:
        dec = rt.decoders.get(gen)
        if dec is None:
            if gen < self._watermark(rt):
                return None
            dec = rt.decoders[gen] = DecoderState(gen, self.topo.blocks, self.cfg.payload_len, self.universe)
        return dec

    def _watermark(self, rt: _Runtime) -> int:
        cur = rt.sched.current if rt.sched is not None else 0
        return min([cur, *rt.child_gen.values()]) if rt.child_gen else cur

    def _prune(self, rt: _Runtime) -> None:
        wm = self._watermark(rt)
        for g in [g for g in rt.decoders if g < wm]:
            del rt.decoders[g]

    def _on_arrival(self, data) -> None:
        parent, child, pkt = data
        rt = self.nodes[child]
        if rt.sched is None:
            return
        dec = self._decoder(rt, pkt.generation)
        if dec is None:
            return
        rt.sched.on_packet(pkt.generation, self.now)
        if dec.insert(pkt):
            rt.innov.append((self.now, parent, pkt.ptype))
            key = (parent, pkt.ptype)
            rt.innov_count[key] = rt.innov_count.get(key, 0) + 1
            g = self.topo.nodes[child].subscription
            gen = pkt.generation
            if gen not in rt.decoded_gens and dec.is_decodable(g):
                rt.decoded_gens.add(gen)
                self._check_payload(dec, g, gen)
                if rt.sched.on_decoded(gen, self.now):
                    self.send([ControlMessage(P.GEN_FEEDBACK, child, k, self.now, {"status": "decoded", "G": gen})
                               for k in self.topo.nodes[child].parents])
                    self._try_early(rt)

    def _check_payload(self, dec: DecoderState, s: int, gen: int) -> None:
        if self.cfg.payload_len == 0:
            return
        got = dec.extract(s)
        for l in range(got.shape[0]):
            if got[l].tobytes() != synthetic_payload(s, gen, l, self.cfg.payload_len):
                self.metrics.payload_errors += 1

    # -- generations -----------------------------------------------------

    def _on_gen_timer(self, data) -> None:
        nid, ver = data
        rt = self.nodes[nid]
        if ver != rt.gen_version:
            return
        self._advance(rt)

    def _advance(self, rt: _Runtime) -> None:
        dec = rt.sched.on_generation_boundary(self.now)
        parents = self.topo.nodes[rt.id].parents
        msgs = [ControlMessage(P.GEN_ADVANCE, rt.id, k, self.now, {"G": dec.generation}) for k in parents]
        if dec.skip:
            msgs += [ControlMessage(P.GEN_FEEDBACK, rt.id, k, self.now, {"status": "skipped", "G": dec.generation})
                     for k in parents]
        self.send(msgs)
        self._prune(rt)
        rt.gen_version += 1
        if dec.generation + 1 < self.n_gen:
            self.push(max(self.now, dec.next_request), "gen", (rt.id, rt.gen_version))
        self._try_early(rt)

    def _try_early(self, rt: _Runtime) -> None:
        s = rt.sched
        if s is None or s.current + 1 >= self.n_gen:
            return
        if self.now < s.next_request and s.ready_to_advance():
            self._advance(rt)

    # -- measurement -----------------------------------------------------

    def _measure(self, rt: _Runtime) -> dict[int, float]:
        w = self.cfg.measure_window
        while rt.innov and rt.innov[0][0] < self.now - w:
            rt.innov.popleft()
        raw: dict[int, float] = {}
        for _, _, t in rt.innov:
            raw[t] = raw.get(t, 0.0) + 1.0 / w
        a = self.cfg.measure_smoothing
        if rt.smoothed is None:
            rt.smoothed = raw
        else:
            keys = set(raw) | set(rt.smoothed)
            rt.smoothed = {t: a * raw.get(t, 0.0) + (1 - a) * rt.smoothed.get(t, 0.0) for t in keys}
        return dict(rt.smoothed)

    def measure_innovative_rate(self, node: str, parent: str, t: int, window: float) -> float:
        if not window > 0:
            raise ConfigurationError("window must be positive")
        rt = self.nodes[node]
        n = sum(1 for (tm, k, tt) in rt.innov if k == parent and tt == t and tm >= self.now - window)
        return n / window

    # -- wrap-up ---------------------------------------------------------

    def _finalize(self) -> None:
        m = self.metrics
        for nid, rt in self.nodes.items():
            m.rounds[nid] = rt.proto.l
            if rt.proto.capped:
                m.capped.append(nid)
            m.violations += rt.proto.violations
            if rt.proto.allocation is not None:
                m.allocations[nid] = dict(rt.proto.in_rates)
                m.predicted_delay[nid] = rt.proto.allocation.own_delay
            if rt.sched is None:
                continue
            for t, ev, g in rt.sched.log:
                m.scheduler_log.append((t, nid, ev, g))
            for i in range(self.n_gen):
                rec = rt.sched.records.get(i)
                m.rows.append(GenerationRow(
                    nid, i,
                    None if rec is None else rec.first_packet,
                    None if rec is None else rec.decode_time,
                    rt.sched.status(i),
                ))
            span = max(1e-9, self.now - m.stream_start)
            m.measured_rates[nid] = {k: c / span for k, c in rt.innov_count.items()}
        m.scheduler_log.sort()


def run(topo: Topology, config: SimConfig | None = None, mode: str = "inter", seed: int = 0) -> MetricsSink:
    return Simulator(topo, config, mode, seed).run()
