"""Equivalent flows and the decoding-delay estimate of a node.

Given the probabilities ``p[t]`` that a slot brings an innovative packet of
type ``t``, decoding through a combination ``t`` is modelled as ``|t|``
independent virtual flows, one per component session.  The mass of each real
flow ``t' <= t`` is split among its component sessions so that the slowest
virtual flow is as fast as possible (lexicographically, so the non-bottleneck
rates are pinned down too).  The expected packet count for combination ``t`` is
then ``max_s N_s / q_s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .solver import LinearProgram, solve_lp
from .topology import all_types, sessions_of, subtypes, types_with_session

EPS = 1e-9


@dataclass(frozen=True)
class EquivalentRates:
    combination: int
    q: dict[int, float]  # component session -> q_s
    x: dict[tuple[int, int], float]  # (session, contributing type) -> mass

    def gamma(self, s: int, t_prime: int, p: Mapping[int, float]) -> float:
        pt = p.get(t_prime, 0.0)
        return self.x.get((s, t_prime), 0.0) / pt if pt > 0 else 0.0


@dataclass(frozen=True)
class DelayEstimate:
    per_combination: dict[int, float]  # t -> Delta^t (seconds)
    expected_packets: dict[int, float]  # t -> E^t
    best_combination: int | None
    delay: float
    packets: float


def probabilities_from_rates(rates: Mapping[int, float], capacity: float) -> dict[int, float]:
    if not capacity > 0:
        raise DomainError(f"input capacity must be positive, got {capacity}")
    out = {}
    for t, r in rates.items():
        if r < -EPS:
            raise DomainError(f"negative rate {r} for type {t}")
        out[t] = max(0.0, r) / capacity
    return out


def _split_lp(p: Mapping[int, float], t: int, blocks: Sequence[int]):
    comps = sessions_of(t)
    flows = [(tp, s) for tp in subtypes(t) for s in sessions_of(tp)]
    col = {key: i for i, key in enumerate(flows)}
    nx = len(flows)
    supply = np.zeros((len(subtypes(t)), nx))
    supply_rhs = np.zeros(len(subtypes(t)))
    for r, tp in enumerate(subtypes(t)):
        for s in sessions_of(tp):
            supply[r, col[(tp, s)]] = 1.0
        supply_rhs[r] = max(0.0, float(p.get(tp, 0.0)))
    qrow = {}
    for s in comps:
        row = np.zeros(nx)
        for tp in subtypes(t):
            if tp >> s & 1:
                row[col[(tp, s)]] = 1.0
        qrow[s] = row
    return comps, flows, supply, supply_rhs, qrow


def split_equivalent_flows(
    p: Mapping[int, float], t: int, blocks: Sequence[int]
) -> EquivalentRates:
    """Lexicographic max-min split of the flows inside ``t``.

    Repeatedly maximizes the common level ``z`` of ``q_s / N_s`` over the
    sessions not yet fixed, then fixes every session that cannot exceed that
    level without pulling another below it.
    """
    comps, flows, supply, supply_rhs, qrow = _split_lp(p, t, blocks)
    nx = len(flows)
    level: dict[int, float] = {}
    x_final = np.zeros(nx)

    def fixed_rows():
        rows, rhs = [], []
        for s, lv in level.items():
            rows.append(np.append(-qrow[s], 0.0))
            rhs.append(-lv * blocks[s] * (1 - 1e-12))
        return rows, rhs

    while len(level) < len(comps):
        active = [s for s in comps if s not in level]
        # maximize z
        rows = [np.append(r, 0.0) for r in supply]
        rhs = list(supply_rhs)
        for s in active:
            rows.append(np.append(-qrow[s], float(blocks[s])))
            rhs.append(0.0)
        fr, fh = fixed_rows()
        rows += fr
        rhs += fh
        c = np.zeros(nx + 1)
        c[nx] = 1.0
        res = solve_lp(LinearProgram(c, np.array(rows), np.array(rhs)))
        z = max(0.0, res.objective)
        x_final = res.x[:nx]
        # bottleneck test for each active session
        newly = []
        for s in active:
            rows2 = [np.append(r, 0.0) for r in supply]
            rhs2 = list(supply_rhs)
            for o in active:
                if o != s:
                    rows2.append(np.append(-qrow[o], 0.0))
                    rhs2.append(-z * blocks[o] * (1 - 1e-12))
            rows2 += fr
            rhs2 += fh
            c2 = np.append(qrow[s], 0.0)
            best = solve_lp(LinearProgram(c2, np.array(rows2), np.array(rhs2))).objective
            if best <= z * blocks[s] * (1 + 1e-9) + 1e-12:
                newly.append(s)
        if not newly:  # numerical safety net: fix the slowest
            qs = {s: float(qrow[s] @ x_final) / blocks[s] for s in active}
            newly = [min(qs, key=qs.get)]
        for s in newly:
            level[s] = z

    # final point: honour all levels, then use leftover mass
    rows = list(supply)
    rhs = list(supply_rhs)
    for s, lv in level.items():
        rows.append(-qrow[s])
        rhs.append(-lv * blocks[s] * (1 - 1e-12))
    c = sum(qrow[s] / blocks[s] for s in comps)
    res = solve_lp(LinearProgram(c, np.array(rows), np.array(rhs)))
    if res.ok:
        x_final = res.x
    x_final = np.maximum(x_final, 0.0)
    x = {(s, tp): float(x_final[i]) for i, (tp, s) in enumerate(flows)}
    q = {s: float(qrow[s] @ x_final) for s in comps}
    return EquivalentRates(t, q, x)


def combination_delay(
    rates: EquivalentRates, blocks: Sequence[int], d: float
) -> tuple[float, float]:
    """Return ``(Delta^t, E^t)``; both infinite if some component gets no mass."""
    if not d > 0:
        raise DomainError(f"slot duration must be positive, got {d}")
    worst = 0.0
    for s, q in rates.q.items():
        if blocks[s] == 0:
            continue
        if q <= EPS:
            return math.inf, math.inf
        worst = max(worst, blocks[s] / q)
    return d * worst, worst


def node_delay(
    p: Mapping[int, float],
    g: int,
    blocks: Sequence[int],
    d: float,
    universe: Sequence[int] | None = None,
) -> DelayEstimate:
    """Best decoding combination for subscription ``g``.

    ``universe`` restricts the candidate combinations (singletons only for
    intra-session coding); by default every type is allowed.
    """
    if not 0 <= g < len(blocks):
        raise DomainError(f"session {g} out of range")
    universe = all_types(len(blocks)) if universe is None else universe
    per, packets = {}, {}
    best, best_val = None, math.inf
    for t in sorted(types_with_session(g, universe)):
        er = split_equivalent_flows(p, t, blocks)
        delta, e = combination_delay(er, blocks, d)
        per[t] = delta
        packets[t] = e
        if delta < best_val * (1 - 1e-12):
            best, best_val = t, delta
    return DelayEstimate(per, packets, best, best_val, packets.get(best, math.inf) if best else math.inf)


def monte_carlo_expected_packets(
    p: Mapping[int, float],
    g: int,
    blocks: Sequence[int],
    trials: int,
    rng: np.random.Generator,
    payload_len: int = 0,
) -> float:
    """Average slots until session ``g`` decodes, by direct simulation.

    Each slot brings a packet of type ``t`` with probability ``p[t]`` (nothing
    otherwise); the packet is a uniformly random GF(256) combination of the
    source symbols of ``t`` and goes through the real decoder.
    """
    from .coding import DecoderState, column_offsets

    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    types = sorted(t for t, v in p.items() if v > 0)
    probs = np.array([p[t] for t in types], dtype=float)
    if probs.sum() > 1 + EPS:
        raise DomainError(f"probabilities sum to {probs.sum():.6f} > 1")
    if math.isinf(node_delay(p, g, blocks, 1.0).packets):
        return math.inf

    ncoef = int(sum(blocks))
    off = column_offsets(blocks)
    masks = {}
    for t in types:
        m = np.zeros(ncoef, dtype=bool)
        for s in sessions_of(t):
            m[off[s]:off[s + 1]] = True
        masks[t] = m
    cum = np.cumsum(probs)
    track = types_with_session(g, all_types(len(blocks)))
    from .coding import CodedPacket

    mask_rows = np.array([masks[t] for t in types] + [np.zeros(ncoef, dtype=bool)])
    batch = 2 * ncoef + 8  # slots drawn at once; refilled if a trial runs long
    empty = bytes(payload_len)
    total = 0
    for _ in range(trials):
        st = DecoderState(0, blocks, payload_len, track)
        n = 0
        done = False
        while not done:
            ks = np.searchsorted(cum, rng.random(batch), side="right")
            coeffs = rng.integers(0, 256, (batch, ncoef), dtype=np.uint8)
            coeffs[~mask_rows[ks]] = 0
            for k, c in zip(ks.tolist(), coeffs):
                n += 1
                if k >= len(types):
                    continue
                st.insert(CodedPacket(0, types[k], c, empty))
                if st.is_decodable(g):
                    done = True
                    break
        total += n
    return total / trials
