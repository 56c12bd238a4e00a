"""Multi-generation scheduling: deadlines, skip decisions, early advance.

Times are absolute simulation seconds.  Generation ``i`` has deadline
``T_i = start + D_pb + i * interval``.  At a request instant ``tau_i`` the node
asks its parents for ``G_i`` and plans the next request at ``T_i``; it may move
that request earlier once it and all its children are done with ``G_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigurationError

DECODED = "decoded"
SKIPPED = "skipped"
MISSED = "missed"


@dataclass
class DecodeTimeEstimator:
    alpha: float = 1.5
    mean: float = 0.0
    count: int = 0

    def __post_init__(self):
        if not self.alpha > 1:
            raise ConfigurationError(f"alpha must exceed 1, got {self.alpha}")

    def update(self, sample: float) -> None:
        if sample < 0:
            raise ConfigurationError(f"negative decoding-time sample {sample}")
        self.count += 1
        self.mean += (sample - self.mean) / self.count


@dataclass
class GenerationRecord:
    index: int
    request_time: float | None = None
    first_packet: float | None = None
    decode_time: float | None = None
    skipped: bool = False


@dataclass
class GenerationPlan:
    start: float
    playback_delay: float
    interval: float

    def __post_init__(self):
        if self.interval <= 0 or self.playback_delay < 0:
            raise ConfigurationError("generation interval must be > 0 and playback delay >= 0")

    def deadline(self, i: int) -> float:
        return self.start + self.playback_delay + i * self.interval

    def release(self, i: int) -> float:
        return self.start + i * self.interval


@dataclass
class BoundaryDecision:
    generation: int
    skip: bool
    next_request: float
    sample: float | None


class NodeScheduler:
    """Generation bookkeeping of one client node."""

    def __init__(self, plan: GenerationPlan, children: list[str], alpha: float = 1.5, skipping: bool = True):
        self.plan = plan
        self.children = list(children)
        self.estimator = DecodeTimeEstimator(alpha)
        self.skipping = skipping
        self.current = -1
        self.next_request = plan.start
        self.records: dict[int, GenerationRecord] = {}
        self.child_done: dict[int, set[str]] = {}
        self.log: list[tuple[float, str, int]] = []

    def record(self, i: int) -> GenerationRecord:
        rec = self.records.get(i)
        if rec is None:
            rec = self.records[i] = GenerationRecord(i)
        return rec

    # -- data-plane hooks ------------------------------------------------

    def on_packet(self, i: int, now: float) -> None:
        rec = self.record(i)
        if rec.first_packet is None:
            rec.first_packet = now

    def on_decoded(self, i: int, now: float) -> bool:
        """Record decoding of ``G_i``; returns True the first time only."""
        rec = self.record(i)
        if rec.decode_time is not None:
            return False
        rec.decode_time = now
        self.log.append((now, "decode", i))
        return True

    def on_child_feedback(self, child: str, i: int) -> None:
        self.child_done.setdefault(i, set()).add(child)

    # -- boundaries ------------------------------------------------------

    def on_generation_boundary(self, now: float) -> BoundaryDecision:
        """Request the next generation at ``now`` (scheduled or early)."""
        prev = self.current
        i = prev + 1
        sample = None
        if prev >= 0:
            p = self.record(prev)
            if not p.skipped:
                if p.decode_time is not None:
                    sample = p.decode_time - p.first_packet
                elif p.first_packet is not None:
                    sample = self.estimator.alpha * (now - p.first_packet)
                else:
                    sample = self.estimator.alpha * (now - p.request_time)
                self.estimator.update(max(0.0, sample))
        self.current = i
        rec = self.record(i)
        rec.request_time = now
        self.next_request = self.plan.deadline(i)
        window = self.next_request - now
        skip = self.skipping and self.estimator.mean > window
        rec.skipped = skip and rec.decode_time is None
        self.log.append((now, "advance", i))
        if rec.skipped:
            self.log.append((now, "skip", i))
        return BoundaryDecision(i, rec.skipped, self.next_request, sample)

    def ready_to_advance(self) -> bool:
        i = self.current
        if i < 0:
            return False
        rec = self.record(i)
        self_done = rec.decode_time is not None or rec.skipped
        kids = self.child_done.get(i, set())
        return self_done and all(c in kids for c in self.children)

    def maybe_advance_early(self, now: float) -> BoundaryDecision | None:
        if now < self.next_request and self.ready_to_advance():
            return self.on_generation_boundary(now)
        return None

    def status(self, i: int) -> str:
        rec = self.records.get(i)
        if rec is None:
            return MISSED
        if rec.decode_time is not None and rec.decode_time <= self.plan.deadline(i) + 1e-12:
            return DECODED
        if rec.skipped:
            return SKIPPED
        return MISSED
