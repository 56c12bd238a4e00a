"""Per-node rate allocation: delay minimization, throughput fill, wire rates.

All optimization happens in rate units (packets/sec).  With
``p = rate / C`` and ``d = 1 / C`` the delay ``d * N / q`` of a virtual flow
equals ``N / (equivalent innovative rate)``, so the input capacities cancel
and the problems stay well scaled.

Variables are the innovative rates ``r[k, t]`` requested from each parent and
the rates ``r[j, t]`` planned toward each child.  A decoding *tuple* fixes the
combination used by the node and by each child; each tuple is a small convex
program.  Tuples are explored in order of a per-node lower bound, so most of
them are never solved.
"""

from __future__ import annotations

import itertools
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .delay_model import node_delay, probabilities_from_rates
from .errors import ConfigurationError, DomainError, InfeasibleError
from .solver import ConvexSubproblem, DelayTerm, LinearProgram, solve_convex, solve_lp
from .topology import sessions_of, subtypes, type_universe, types_with_session

FEAS_TOL = 1e-7
ROUND = 9  # decimals kept when freezing snapshots


def _freeze(rates: Mapping[int, float]) -> tuple[tuple[int, float], ...]:
    return tuple(sorted((int(t), round(float(v), ROUND)) for t, v in rates.items() if v > 0))


@dataclass(frozen=True)
class ParentInfo:
    id: str
    capacity: float
    loss: float
    availability: tuple[tuple[int, float], ...]  # R_k per type

    def avail(self) -> dict[int, float]:
        return dict(self.availability)


@dataclass(frozen=True)
class ChildInfo:
    id: str
    capacity: float
    loss: float
    subscription: int
    input_capacity: float
    side_supply: tuple[tuple[int, float], ...]  # what the child already gets from its other parents, per type

    def side(self) -> dict[int, float]:
        return dict(self.side_supply)


@dataclass(frozen=True)
class NeighborhoodSnapshot:
    node: str
    subscription: int
    input_capacity: float
    blocks: tuple[int, ...]
    source_rates: tuple[float, ...]
    parents: tuple[ParentInfo, ...]
    children: tuple[ChildInfo, ...]
    mode: str = "inter"

    @property
    def num_sessions(self) -> int:
        return len(self.blocks)

    @property
    def universe(self) -> tuple[int, ...]:
        return tuple(type_universe(self.num_sessions, self.mode))

    @staticmethod
    def make(
        node: str,
        subscription: int,
        input_capacity: float,
        blocks: Sequence[int],
        source_rates: Sequence[float],
        parents: Sequence[tuple[str, float, float, Mapping[int, float]]],
        children: Sequence[tuple[str, float, float, int, float, Mapping[int, float]]] = (),
        mode: str = "inter",
    ) -> "NeighborhoodSnapshot":
        """Build from plain tuples ``(id, b, pi, R_k)`` and ``(id, b, pi, g_j, C_j, R_hat)``."""
        if mode not in ("inter", "intra"):
            raise ConfigurationError(f"unknown mode {mode!r}")
        return NeighborhoodSnapshot(
            node,
            int(subscription),
            float(input_capacity),
            tuple(int(b) for b in blocks),
            tuple(float(u) for u in source_rates),
            tuple(ParentInfo(k, float(b), float(pi), _freeze(R)) for k, b, pi, R in parents),
            tuple(
                ChildInfo(j, float(b), float(pi), int(g), float(C), _freeze(Rh))
                for j, b, pi, g, C, Rh in children
            ),
            mode,
        )


@dataclass
class AllocationResult:
    in_rates: dict[tuple[str, int], float]
    out_rates: dict[tuple[str, int], float]
    combination: int | None
    child_combinations: tuple[int, ...]
    average_delay: float  # objective, seconds
    own_delay: float  # node's own predicted decoding delay, seconds
    wire: dict[tuple[str, int], float] = field(default_factory=dict)
    starved: bool = False
    tuples_solved: int = 0

    def input_by_type(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for (_, t), r in self.in_rates.items():
            out[t] = out.get(t, 0.0) + r
        return out


# ---------------------------------------------------------------------------
# variable layout and the delay-minimization region


class _Layout:
    def __init__(self, snap: NeighborhoodSnapshot, types: Sequence[int] | None = None):
        self.snap = snap
        self.types = tuple(snap.universe if types is None else types)
        self.in_idx: dict[tuple[str, int], int] = {}
        self.out_idx: dict[tuple[str, int], int] = {}
        i = 0
        for p in snap.parents:
            for t in self.types:
                self.in_idx[(p.id, t)] = i
                i += 1
        for c in snap.children:
            for t in self.types:
                self.out_idx[(c.id, t)] = i
                i += 1
        self.n = i


def _family_sets(types: Sequence[int], num_sessions: int):
    """Distinct sets T_{t,s} (restricted to the universe), each listed once."""
    seen = set()
    out = []
    for t in types:
        for s in sessions_of(t):
            fam = tuple(u for u in subtypes(t) if u >> s & 1 and u in types)
            key = (fam, s)
            if key not in seen:
                seen.add(key)
                out.append((t, s, fam))
    return out


def build_min_constraints(
    snap: NeighborhoodSnapshot, types: Sequence[int] | None = None
) -> tuple[np.ndarray, np.ndarray, _Layout]:
    """Rows ``G r <= h`` of the delay-minimization region over the node's rate variables (r >= 0 implicit).

    ``types`` limits the variables to a subset of the universe; rates of the
    other types are then fixed at zero.  Every family of the full universe is
    projected onto the carried types, while capacities such as parent
    availability still add up over the whole family.  Rows with the same
    left-hand side keep the tightest bound.
    """
    lay = _Layout(snap, types)
    carried = set(lay.types)
    rows: list[np.ndarray] = []
    rhs: list[float] = []
    fams = []
    for t, s, fam in _family_sets(snap.universe, snap.num_sessions):
        kept = tuple(u for u in fam if u in carried)
        if kept:
            fams.append((s, fam, kept))

    def row():
        return np.zeros(lay.n)

    def add_group(entries):
        """Append ``(key, row, bound)`` entries, merging equal keys by min bound."""
        merged: dict = {}
        for key, r, bound in entries:
            if key in merged:
                merged[key] = (merged[key][0], min(merged[key][1], bound))
            else:
                merged[key] = (r, bound)
        for r, bound in merged.values():
            rows.append(r)
            rhs.append(bound)

    # input link capacity
    for p in snap.parents:
        r = row()
        for t in lay.types:
            r[lay.in_idx[(p.id, t)]] = 1.0
        rows.append(r)
        rhs.append(p.capacity * (1.0 - p.loss))
    # output link capacity
    for c in snap.children:
        r = row()
        for t in lay.types:
            r[lay.out_idx[(c.id, t)]] = 1.0
        rows.append(r)
        rhs.append(c.capacity * (1.0 - c.loss))
    # parent availability
    for p in snap.parents:
        av = p.avail()
        group = []
        for s, fam, kept in fams:
            r = row()
            for u in kept:
                r[lay.in_idx[(p.id, u)]] = 1.0
            group.append((kept, r, sum(av.get(u, 0.0) for u in fam)))
        add_group(group)
    # child supply bounded by own input
    for c in snap.children:
        group = []
        for s, fam, kept in fams:
            r = row()
            for u in kept:
                r[lay.out_idx[(c.id, u)]] = 1.0
                for p in snap.parents:
                    r[lay.in_idx[(p.id, u)]] -= 1.0
            group.append((kept, r, 0.0))
        add_group(group)
    # source-rate caps on the input
    group = []
    for s, fam, kept in fams:
        r = row()
        for u in kept:
            for p in snap.parents:
                r[lay.in_idx[(p.id, u)]] = 1.0
        group.append(((kept, s), r, snap.source_rates[s]))
    add_group(group)
    # source-rate caps at each child including side supply
    for c in snap.children:
        side = c.side()
        group = []
        for s, fam, kept in fams:
            r = row()
            for u in kept:
                r[lay.out_idx[(c.id, u)]] = 1.0
            group.append(((kept, s), r, max(0.0, snap.source_rates[s] - sum(side.get(u, 0.0) for u in fam))))
        add_group(group)
    G = np.array(rows) if rows else np.zeros((0, lay.n))
    return G, np.array(rhs), lay


def check_constraints(
    snap: NeighborhoodSnapshot,
    in_rates: Mapping[tuple[str, int], float],
    out_rates: Mapping[tuple[str, int], float],
    tol: float = FEAS_TOL,
) -> list[str]:
    """Independent audit of the delay-minimization region; returns human-readable violations."""
    types = [t for t in snap.universe]
    bad: list[str] = []

    def rin(k, t):
        return in_rates.get((k, t), 0.0)

    def rout(j, t):
        return out_rates.get((j, t), 0.0)

    for key, v in list(in_rates.items()) + list(out_rates.items()):
        if v < -tol:
            bad.append(f"negative rate {key}={v}")
        if key[1] not in types and v > tol:
            bad.append(f"rate on type outside universe {key}")
    for p in snap.parents:
        tot = sum(rin(p.id, t) for t in types)
        if tot > p.capacity * (1 - p.loss) + tol:
            bad.append(f"input-cap {p.id}: {tot} > {p.capacity * (1 - p.loss)}")
    for c in snap.children:
        tot = sum(rout(c.id, t) for t in types)
        if tot > c.capacity * (1 - c.loss) + tol:
            bad.append(f"output-cap {c.id}: {tot} > {c.capacity * (1 - c.loss)}")
    for t in types:
        for s in sessions_of(t):
            fam = [u for u in types if u & ~t == 0 and u >> s & 1]
            for p in snap.parents:
                av = p.avail()
                lhs = sum(rin(p.id, u) for u in fam)
                cap = sum(av.get(u, 0.0) for u in fam)
                if lhs > cap + tol:
                    bad.append(f"availability {p.id} t={t} s={s}: {lhs} > {cap}")
            own = sum(rin(p.id, u) for p in snap.parents for u in fam)
            if own > snap.source_rates[s] + tol:
                bad.append(f"source-in t={t} s={s}: {own} > {snap.source_rates[s]}")
            for c in snap.children:
                lhs = sum(rout(c.id, u) for u in fam)
                if lhs > own + tol:
                    bad.append(f"relay {c.id} t={t} s={s}: {lhs} > {own}")
                side = c.side()
                cap = max(0.0, snap.source_rates[s] - sum(side.get(u, 0.0) for u in fam))
                if lhs > cap + tol:
                    bad.append(f"source-child {c.id} t={t} s={s}: {lhs} > {cap}")
    return bad


def enumerate_tuples(g_i: int, child_subs: Sequence[int], universe: Sequence[int]) -> list[tuple[int, ...]]:
    """Cartesian product T^{g_i} x prod_j T^{g_j} in canonical order."""
    choices = [sorted(types_with_session(g, universe)) for g in (g_i, *child_subs)]
    return list(itertools.product(*choices))


# ---------------------------------------------------------------------------
# tuple subproblems


class _Builder:
    """Assembles the convex subproblem of a tuple on top of the shared region."""

    def __init__(self, snap: NeighborhoodSnapshot, types: Sequence[int] | None = None):
        self.snap = snap
        self.G, self.h, self.lay = build_min_constraints(snap, types)
        self.weight = 1.0 / (len(snap.children) + 1)

    def _flow(self, node_pos: int, tp: int):
        """Affine flow rate of type ``tp`` at node position (0 = self)."""
        lay = self.lay
        coef = np.zeros(lay.n)
        const = 0.0
        if node_pos == 0:
            for p in self.snap.parents:
                coef[lay.in_idx[(p.id, tp)]] = 1.0
        else:
            c = self.snap.children[node_pos - 1]
            coef[lay.out_idx[(c.id, tp)]] = 1.0
            const = c.side().get(tp, 0.0)
        return coef, const

    def _subscription(self, node_pos: int) -> int:
        return self.snap.subscription if node_pos == 0 else self.snap.children[node_pos - 1].subscription

    def subproblem(self, combos: Sequence[tuple[int, int]]) -> ConvexSubproblem:
        """``combos`` lists (node position, combination) pairs to include."""
        types = set(self.lay.types)
        split_keys = []
        for pos, t in combos:
            for tp in subtypes(t):
                if tp in types:
                    for s in sessions_of(tp):
                        split_keys.append((pos, tp, s))
        nr = self.lay.n
        nv = nr + len(split_keys)
        col = {k: nr + i for i, k in enumerate(split_keys)}
        G = np.zeros((self.G.shape[0], nv))
        G[:, :nr] = self.G
        rows = [G]
        rhs = [self.h]
        extra = []
        extra_h = []
        for pos, t in combos:
            for tp in subtypes(t):
                if tp not in types:
                    continue
                coef, const = self._flow(pos, tp)
                r = np.zeros(nv)
                r[:nr] = -coef
                for s in sessions_of(tp):
                    r[col[(pos, tp, s)]] = 1.0
                extra.append(r)
                extra_h.append(const)
        if extra:
            rows.append(np.array(extra))
            rhs.append(np.array(extra_h))
        terms = []
        for pos, t in combos:
            comps = sessions_of(t)
            qr = np.zeros((len(comps), nv))
            for a, s in enumerate(comps):
                for (p2, tp, s2), ci in col.items():
                    if p2 == pos and s2 == s:
                        qr[a, ci] = 1.0
            terms.append(
                DelayTerm(self.weight, [self.snap.blocks[s] for s in comps], qr, np.zeros(len(comps)))
            )
        return ConvexSubproblem(nv, np.vstack(rows), np.concatenate(rhs), terms)


def _own_delay(snap: NeighborhoodSnapshot, in_rates: Mapping[tuple[str, int], float]) -> float:
    by_type: dict[int, float] = {}
    for (_, t), r in in_rates.items():
        by_type[t] = by_type.get(t, 0.0) + r
    if snap.input_capacity <= 0:
        return math.inf
    p = probabilities_from_rates(by_type, snap.input_capacity)
    return node_delay(p, snap.subscription, snap.blocks, 1.0 / snap.input_capacity, snap.universe).delay


def _minimize_delay_uncached(snap: NeighborhoodSnapshot) -> AllocationResult:
    b = _Builder(snap)
    lay = b.lay
    positions = range(len(snap.children) + 1)
    combos = {pos: sorted(types_with_session(b._subscription(pos), lay.types)) for pos in positions}

    # lower bounds: best achievable max_s N_s/q_s for each node alone
    lower: dict[tuple[int, int], float] = {}
    for pos in positions:
        for t in combos[pos]:
            sp_ = b.subproblem([(pos, t)])
            term = sp_.terms[0]
            nv = sp_.num_vars
            A = np.zeros((sp_.G.shape[0] + term.blocks.size, nv + 1))
            A[: sp_.G.shape[0], :nv] = sp_.G
            A[sp_.G.shape[0]:, :nv] = -term.q_rows
            A[sp_.G.shape[0]:, nv] = term.blocks
            h = np.concatenate([sp_.h, np.zeros(term.blocks.size)])
            c = np.zeros(nv + 1)
            c[nv] = 1.0
            z = solve_lp(LinearProgram(c, A, h)).objective
            lower[(pos, t)] = b.weight / z if z > 1e-12 else math.inf

    tuples = enumerate_tuples(snap.subscription, [c.subscription for c in snap.children], lay.types)
    scored = []
    for idx, tup in enumerate(tuples):
        lb = sum(lower[(pos, t)] for pos, t in zip(positions, tup))
        if math.isfinite(lb):
            scored.append((lb, idx, tup))
    scored.sort()

    # A tuple only ever uses flows of the subtypes of its combinations, so its
    # subproblem carries just those types.  Identical tuples then give
    # identical problems whatever the coding mode.
    builders: dict[tuple[int, ...], _Builder] = {}
    best_val = math.inf
    best = None
    solved = 0
    for lb, idx, tup in scored:
        if lb > best_val * (1 + 1e-6):
            break
        if best is not None and idx > best[0] and lb >= best_val * (1 - 1e-6):
            continue  # could at best tie with an earlier tuple
        used = tuple(sorted({u for t in tup for u in subtypes(t)} & set(lay.types)))
        sub = builders.get(used)
        if sub is None:
            sub = builders[used] = _Builder(snap, used)
        sol = solve_convex(sub.subproblem(list(zip(positions, tup))))
        solved += 1
        if not math.isfinite(sol.objective):
            continue
        better = sol.objective < best_val * (1 - 1e-6)
        tie = best is not None and sol.objective <= best_val * (1 + 1e-6) and idx < best[0]
        if best is None or better or tie:
            best_val = sol.objective
            best = (idx, tup, sub.lay, sol.x[: sub.lay.n])

    if best is None:
        return AllocationResult({}, {}, None, (), math.inf, math.inf, {}, True, solved)

    _, tup, sub_lay, v = best
    v = np.where(v < 1e-10, 0.0, v)
    in_rates = {key: 0.0 for key in lay.in_idx}
    out_rates = {key: 0.0 for key in lay.out_idx}
    in_rates.update({key: float(v[i]) for key, i in sub_lay.in_idx.items()})
    out_rates.update({key: float(v[i]) for key, i in sub_lay.out_idx.items()})
    res = AllocationResult(
        in_rates,
        out_rates,
        tup[0],
        tuple(tup[1:]),
        best_val,
        _own_delay(snap, in_rates),
        tuples_solved=solved,
    )
    res.wire = wire_rates(in_rates, {p.id: p.loss for p in snap.parents})
    return res


_CACHE: "OrderedDict[NeighborhoodSnapshot, AllocationResult]" = OrderedDict()
_CACHE_SIZE = 4096


def _copy(res: AllocationResult) -> AllocationResult:
    return AllocationResult(
        dict(res.in_rates), dict(res.out_rates), res.combination, res.child_combinations,
        res.average_delay, res.own_delay, dict(res.wire), res.starved, res.tuples_solved,
    )


def minimize_delay(snap: NeighborhoodSnapshot) -> AllocationResult:
    """Best tuple allocation over the delay region (memoized on the frozen snapshot)."""
    hit = _CACHE.get(snap)
    if hit is None:
        hit = _minimize_delay_uncached(snap)
        _CACHE[snap] = hit
        if len(_CACHE) > _CACHE_SIZE:
            _CACHE.popitem(last=False)
    else:
        _CACHE.move_to_end(snap)
    return _copy(hit)


def clear_cache() -> None:
    _CACHE.clear()


def maximize_throughput(
    snap: NeighborhoodSnapshot, floor: Mapping[tuple[str, int], float]
) -> dict[tuple[str, int], float]:
    """Fill spare input bandwidth (link capacity, availability and source caps only) without going below ``floor``."""
    types = snap.universe
    keys = [(p.id, t) for p in snap.parents for t in types]
    if not keys:
        return {}
    idx = {k: i for i, k in enumerate(keys)}
    n = len(keys)
    rows, rhs = [], []
    for p in snap.parents:
        r = np.zeros(n)
        for t in types:
            r[idx[(p.id, t)]] = 1.0
        rows.append(r)
        rhs.append(p.capacity * (1 - p.loss))
    for t, s, fam in _family_sets(types, snap.num_sessions):
        for p in snap.parents:
            av = p.avail()
            r = np.zeros(n)
            for u in fam:
                r[idx[(p.id, u)]] = 1.0
            rows.append(r)
            rhs.append(sum(av.get(u, 0.0) for u in fam))
        r = np.zeros(n)
        for u in fam:
            for p in snap.parents:
                r[idx[(p.id, u)]] = 1.0
        rows.append(r)
        rhs.append(snap.source_rates[s])
    A = np.array(rows)
    h = np.array(rhs)
    lb = np.array([max(0.0, floor.get(k, 0.0)) for k in keys])
    if np.any(A @ lb > h + FEAS_TOL * np.maximum(1.0, np.abs(h))):
        raise InfeasibleError("throughput floor violates capacity, availability or source caps")
    # Shave rounding noise so the floor point is exactly feasible.
    h = np.maximum(h, A @ lb)
    res = solve_lp(LinearProgram(np.ones(n), A, h, lb=lb))
    if not res.ok:
        raise InfeasibleError(f"throughput LP {res.status}")
    x = np.maximum(res.x, lb)
    return {k: float(x[i]) for k, i in idx.items()}


def wire_rates(rates: Mapping[tuple[str, int], float], losses: Mapping[str, float]) -> dict[tuple[str, int], float]:
    """Inflate innovative targets by ``1 / (1 - pi)`` of their link."""
    out = {}
    for (k, t), r in rates.items():
        pi = losses[k]
        if not 0 <= pi < 1:
            raise DomainError(f"loss probability {pi} on link from {k} is outside [0, 1)")
        out[(k, t)] = r / (1.0 - pi)
    return out


def allocate(snap: NeighborhoodSnapshot) -> AllocationResult:
    """One optimization round: minimize delay, fill spare bandwidth, wire rates."""
    res = minimize_delay(snap)
    if res.starved:
        return res
    res.in_rates = maximize_throughput(snap, res.in_rates)
    res.own_delay = _own_delay(snap, res.in_rates)
    res.wire = wire_rates(res.in_rates, {p.id: p.loss for p in snap.parents})
    return res
