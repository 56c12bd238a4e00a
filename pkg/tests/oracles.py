"""Independent reference computations shared by unit and acceptance tests."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from isnc.solver import ConvexSubproblem, DelayTerm

# Probabilities of an innovative packet per slot, keyed by type mask (s1=1, s2=2, s3=4).
PROBLEM_A = {1: 0.1824, 2: 0.2022, 4: 0.2035, 3: 0.0385, 5: 0.1439, 6: 0.0323, 7: 0.0707}
PROBLEM_B = {1: 0.0556, 2: 0.0278, 4: 0.2778, 3: 0.1111, 5: 0.0833, 6: 0.3889, 7: 0.0111}

# Reference equivalent rates per (combination, session index).
Q_A = {(1, 0): 0.1824, (3, 0): 0.2116, (3, 1): 0.2116, (5, 0): 0.2649, (5, 2): 0.2649,
       (7, 0): 0.2912, (7, 1): 0.2912, (7, 2): 0.2912}
Q_B = {(1, 0): 0.0556, (3, 0): 0.0972, (3, 1): 0.0973, (5, 0): 0.1389, (5, 2): 0.2778,
       (7, 0): 0.2611, (7, 1): 0.3473, (7, 2): 0.3473}

# Reference expected packet counts.
E_A = {1: 54.8, 3: 47.3, 5: 37.6, 7: 34.3}
E_B = {1: 179.9, 3: 102.9, 5: 72.0, 7: 38.3}
E_MC = {"A": 33.8, "B": 39.7}


def two_session_split(n1, n2, a1, a2, a12):
    """Best ``max(n1/q1, n2/q2)`` with q1 = a1 + x, q2 = a2 + a12 - x, 0 <= x <= a12.

    Vectorised over numpy arrays.  The optimum equalises n1/q1 and n2/q2 when
    possible; otherwise it sits at an end of the interval.
    """
    x = np.clip((n1 * (a2 + a12) - n2 * a1) / (n1 + n2), 0.0, a12)
    q1 = a1 + x
    q2 = a2 + a12 - x
    with np.errstate(divide="ignore"):
        return np.maximum(np.where(q1 > 0, n1 / q1, np.inf), np.where(q2 > 0, n2 / q2, np.inf))


@dataclass
class MicroInstance:
    """A 1-3 variable rate problem with a box and one coupling row."""

    kind: str
    lo: np.ndarray
    hi: np.ndarray
    cap: float
    n1: float
    n2: float
    side: float

    @property
    def nvars(self) -> int:
        return self.lo.size

    def objective(self, v):
        """Exact objective given rate variables (columns of ``v``), splits solved in closed form."""
        if self.kind == "single":  # node decodes s1 from s1 only
            return self.n1 / v[0]
        if self.kind == "mixed":  # node decodes s1 via s1s2; vars r1, r2, r12
            return two_session_split(self.n1, self.n2, v[0], v[1], v[2])
        if self.kind == "relay":  # one session, vars r_in, r_out; child has side supply
            return 0.5 * (self.n1 / v[0] + self.n1 / (v[1] + self.side))
        if self.kind == "pair":  # node s1, child s2 via own out-rate; vars r1, r2, o2
            return 0.5 * (self.n1 / v[0] + self.n2 / (v[2] + self.side))
        raise ValueError(self.kind)

    def feasible(self, v):
        ok = v.sum(axis=0) <= self.cap + 1e-12
        if self.kind == "relay":
            ok &= v[1] <= v[0] + 1e-12
        if self.kind == "pair":
            ok &= v[2] <= v[1] + 1e-12
        return ok

    def grid_minimum(self, step=1e-3):
        axes = [np.round(np.arange(a, b + step / 2, step), 9) for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        v = np.stack([m.ravel() for m in mesh])
        val = np.where(self.feasible(v), self.objective(v), np.inf)
        return float(val.min())

    def subproblem(self) -> ConvexSubproblem:
        """Same problem written the way allocation writes it (split variables explicit)."""
        n = self.nvars
        rows, rhs = [], []
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1
            rows.append(e.copy())
            rhs.append(self.hi[i])
            rows.append(-e)
            rhs.append(-self.lo[i])
        rows.append(np.ones(n))
        rhs.append(self.cap)
        if self.kind == "relay":
            rows.append(np.array([-1.0, 1.0]))
            rhs.append(0.0)
        if self.kind == "pair":
            rows.append(np.array([0.0, -1.0, 1.0]))
            rhs.append(0.0)
        if self.kind == "single":
            return ConvexSubproblem(n, np.array(rows), np.array(rhs), [DelayTerm(1.0, [self.n1], [[1.0]], [0.0])])
        if self.kind == "relay":
            terms = [DelayTerm(0.5, [self.n1], [[1.0, 0.0]], [0.0]),
                     DelayTerm(0.5, [self.n1], [[0.0, 1.0]], [self.side])]
            return ConvexSubproblem(n, np.array(rows), np.array(rhs), terms)
        if self.kind == "pair":
            terms = [DelayTerm(0.5, [self.n1], [[1.0, 0.0, 0.0]], [0.0]),
                     DelayTerm(0.5, [self.n2], [[0.0, 0.0, 1.0]], [self.side])]
            return ConvexSubproblem(n, np.array(rows), np.array(rhs), terms)
        # mixed: splits x1 (r1 -> s1), x2 (r2 -> s2), y1, y2 (r12 -> s1, s2)
        G = np.zeros((len(rows) + 3, 7))
        G[: len(rows), :3] = np.array(rows)
        h = list(rhs)
        G[len(rows), [3, 0]] = [1.0, -1.0]
        G[len(rows) + 1, [4, 1]] = [1.0, -1.0]
        G[len(rows) + 2, [5, 6, 2]] = [1.0, 1.0, -1.0]
        h += [0.0, 0.0, 0.0]
        q = np.zeros((2, 7))
        q[0, [3, 5]] = 1.0
        q[1, [4, 6]] = 1.0
        return ConvexSubproblem(7, G, np.array(h), [DelayTerm(1.0, [self.n1, self.n2], q, [0.0, 0.0])])


def random_micro_instance(rng: np.random.Generator, kind: str | None = None) -> MicroInstance:
    kind = kind or ["single", "mixed", "relay", "pair"][int(rng.integers(4))]
    n = {"single": 1, "mixed": 3, "relay": 2, "pair": 3}[kind]
    width = 0.2 if n == 3 else 0.5
    lo = np.round(rng.uniform(20.0, 40.0, n), 3)
    if kind == "relay":
        lo[1] = lo[0] - np.round(rng.uniform(0, 0.3), 3)
    if kind == "pair":
        lo[2] = lo[1] - np.round(rng.uniform(0, 0.15), 3)
    hi = lo + width
    cap = float(np.round(lo.sum() + rng.uniform(0.3, 1.0) * width * n, 3))
    n1, n2 = (float(x) for x in rng.integers(5, 30, 2))
    side = float(np.round(rng.uniform(0, 10), 3))
    return MicroInstance(kind, lo, hi, cap, n1, n2, side)


def brute_force_split(p, t, blocks, step=0.0005):
    """Max-min level of ``q_s / N_s`` for |t| <= 2 by scanning the combined-flow split."""
    sess = [s for s in range(len(blocks)) if t >> s & 1]
    if len(sess) == 1:
        s = sess[0]
        return p.get(t, 0.0) / blocks[s]
    a, b = sess
    pa, pb, pab = p.get(1 << a, 0.0), p.get(1 << b, 0.0), p.get(t, 0.0)
    xs = np.arange(0, pab + step / 2, step)
    return float(np.max(np.minimum((pa + xs) / blocks[a], (pb + pab - xs) / blocks[b])))


def subsets(iterable):
    s = list(iterable)
    return itertools.chain.from_iterable(itertools.combinations(s, r) for r in range(len(s) + 1))


def slow_mul(a: int, b: int) -> int:
    """Shift-and-add multiplication modulo x^8 + x^4 + x^3 + x^2 + 1."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= 0x11D
    return r
