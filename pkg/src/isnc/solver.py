"""LP and convex backends used by the delay model and the rate allocator.

``solve_lp`` runs a jitted dense tableau simplex whenever the problem has the
"easy" shape ``Ax <= b, b >= 0, x >= lb`` (after shifting bounds), which covers
every LP the package builds; anything else goes to HiGHS through SciPy.  Both
paths report a duality gap computed from the returned multipliers.

``solve_convex`` handles objectives of the form
``sum_n w_n * max_s N_s / q_{n,s}(v)`` with affine ``q`` and a polyhedral
feasible set, via an epigraph reformulation solved by Clarabel as a small
second-order cone program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import clarabel
import numba
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import InfeasibleError, SolverError

FEAS_TOL = 1e-7
OPT_TOL = 1e-4


# ---------------------------------------------------------------------------
# linear programs


@dataclass
class LinearProgram:
    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None  # default 0
    ub: np.ndarray | None = None  # default +inf
    sense: str = "max"

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_ub, self.b_ub = _pair(self.A_ub, self.b_ub, n, "ub")
        self.A_eq, self.b_eq = _pair(self.A_eq, self.b_eq, n, "eq")
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        if self.lb.size != n or self.ub.size != n:
            raise SolverError("bound vectors must match the number of variables")
        if self.sense not in ("max", "min"):
            raise SolverError(f"sense must be 'max' or 'min', got {self.sense!r}")
        for name, arr in (("c", self.c), ("A_ub", self.A_ub), ("b_ub", self.b_ub),
                          ("A_eq", self.A_eq), ("b_eq", self.b_eq)):
            if not np.all(np.isfinite(arr)):
                raise SolverError(f"non-finite entries in {name}")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)) or np.any(self.lb == np.inf):
            raise SolverError("invalid variable bounds")

    @property
    def num_vars(self) -> int:
        return self.c.size

    def dump(self) -> str:
        """Plain-text standard-form listing for external cross-checking."""
        out = [f"{self.sense} " + " ".join(f"{v:.12g}" for v in self.c)]
        for row, b in zip(self.A_ub, self.b_ub):
            out.append(" ".join(f"{v:.12g}" for v in row) + f" <= {b:.12g}")
        for row, b in zip(self.A_eq, self.b_eq):
            out.append(" ".join(f"{v:.12g}" for v in row) + f" == {b:.12g}")
        for j, (lo, hi) in enumerate(zip(self.lb, self.ub)):
            out.append(f"x{j} in [{lo:.12g}, {hi:.12g}]")
        return "\n".join(out) + "\n"


def _pair(A, b, n, tag):
    if A is None:
        if b is not None and np.size(b):
            raise SolverError(f"b_{tag} given without A_{tag}")
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape[1] != n or A.shape[0] != b.size:
        raise SolverError(f"A_{tag} has shape {A.shape}, expected ({b.size}, {n})")
    return A, b


@dataclass
class SolverSolution:
    x: np.ndarray
    objective: float
    status: str  # optimal | infeasible | unbounded
    gap: float = 0.0
    duals: np.ndarray | None = None  # multipliers of the A_ub rows
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


@numba.njit(cache=True)
def _pivot(T, basis, r, j):
    T[r, :] /= T[r, j]
    for i in range(T.shape[0]):
        if i != r:
            f = T[i, j]
            if f != 0.0:
                T[i, :] -= f * T[r, :]
    basis[r] = j


@numba.njit(cache=True)
def _iterate(T, basis, ncols_allowed, max_iter):
    """Primal simplex on tableau ``T`` (last row = reduced costs, maximizing).

    Returns 0 optimal, 1 unbounded, 2 iteration cap.
    """
    m = T.shape[0] - 1
    rhs = T.shape[1] - 1
    scale = 1.0
    for k in range(ncols_allowed):
        scale = max(scale, abs(T[m, k]))
    eps = 1e-11 * scale
    degenerate = 0
    for _ in range(max_iter):
        bland = degenerate > 50
        j = -1
        best = -eps
        for k in range(ncols_allowed):
            r = T[m, k]
            if r < -eps:
                if bland:
                    j = k
                    break
                if r < best:
                    best = r
                    j = k
        if j < 0:
            return 0
        i_out = -1
        ratio = np.inf
        for i in range(m):
            a = T[i, j]
            if a > 1e-12:
                q = T[i, rhs] / a
                if q < ratio - 1e-14 or (
                    abs(q - ratio) <= 1e-14 and i_out >= 0 and basis[i] < basis[i_out]
                ):
                    ratio = q
                    i_out = i
        if i_out < 0:
            return 1
        degenerate = degenerate + 1 if ratio <= 1e-14 else 0
        _pivot(T, basis, i_out, j)
    return 2


@numba.njit(cache=True)
def _simplex_kernel(A, b, n_ub, c, max_iter):
    """max c.x s.t. A[:n_ub] x <= b[:n_ub], A[n_ub:] x = b[n_ub:], x >= 0.

    Two-phase tableau method.  Returns (status, x, y) with status 0 optimal,
    1 unbounded, 2 iteration cap, 3 infeasible; ``y`` are row multipliers.
    """
    m, n = A.shape
    sign = np.ones(m)
    need_art = np.zeros(m, dtype=np.bool_)
    for i in range(m):
        if b[i] < 0:
            sign[i] = -1.0
        if i >= n_ub or b[i] < 0:
            need_art[i] = True
    n_art = 0
    for i in range(m):
        if need_art[i]:
            n_art += 1
    ncol = n + n_ub + n_art
    T = np.zeros((m + 1, ncol + 1))
    basis = np.empty(m, dtype=np.int64)
    art_of_row = np.full(m, -1, dtype=np.int64)
    a_idx = n + n_ub
    for i in range(m):
        for k in range(n):
            T[i, k] = sign[i] * A[i, k]
        if i < n_ub:
            T[i, n + i] = sign[i]
        T[i, ncol] = sign[i] * b[i]
        if need_art[i]:
            T[i, a_idx] = 1.0
            art_of_row[i] = a_idx
            basis[i] = a_idx
            a_idx += 1
        else:
            basis[i] = n + i
    if n_art > 0:
        # phase 1: maximize -sum(artificials)
        for i in range(m):
            if need_art[i]:
                T[m, :] -= T[i, :]
        for i in range(m):
            if need_art[i]:
                T[m, art_of_row[i]] = 0.0
        st = _iterate(T, basis, ncol, max_iter)
        if st == 2:
            return 2, np.zeros(n), np.zeros(m)
        if T[m, ncol] < -1e-9 * max(1.0, np.abs(b).max()):
            return 3, np.zeros(n), np.zeros(m)
        # drive remaining artificials out of the basis
        for i in range(m):
            if basis[i] >= n + n_ub:
                for k in range(n + n_ub):
                    if abs(T[i, k]) > 1e-9:
                        _pivot(T, basis, i, k)
                        break
    # phase 2 objective
    T[m, :] = 0.0
    for k in range(n):
        T[m, k] = -c[k]
    for i in range(m):
        if basis[i] < n:
            f = T[m, basis[i]]
            if f != 0.0:
                T[m, :] -= f * T[i, :]
    st = _iterate(T, basis, n + n_ub, max_iter)
    x = np.zeros(n)
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = T[i, ncol]
    y = np.zeros(m)
    for i in range(m):
        if i < n_ub:
            y[i] = T[m, n + i]  # slack column already carries the row sign
        else:
            y[i] = sign[i] * T[m, art_of_row[i]]
    return st, x, y


def _standard_form(lp: LinearProgram):
    """Shift to ``y = x - lb >= 0`` and fold finite upper bounds into rows."""
    if np.any(np.isinf(lp.lb)):
        return None
    sign = 1.0 if lp.sense == "max" else -1.0
    c = sign * lp.c
    shift = lp.lb
    rows = [lp.A_ub]
    rhs = [lp.b_ub - lp.A_ub @ shift]
    fin = np.isfinite(lp.ub)
    if fin.any():
        idx = np.nonzero(fin)[0]
        E = np.zeros((idx.size, lp.num_vars))
        E[np.arange(idx.size), idx] = 1.0
        rows.append(E)
        rhs.append(lp.ub[idx] - shift[idx])
    n_ub = sum(r.shape[0] for r in rows)
    rows.append(lp.A_eq)
    rhs.append(lp.b_eq - lp.A_eq @ shift)
    return np.vstack(rows), np.concatenate(rhs), n_ub, c, shift, sign


def _highs(lp: LinearProgram) -> SolverSolution:
    sign = 1.0 if lp.sense == "max" else -1.0
    res = linprog(
        -sign * lp.c,
        A_ub=lp.A_ub if lp.A_ub.shape[0] else None,
        b_ub=lp.b_ub if lp.A_ub.shape[0] else None,
        A_eq=lp.A_eq if lp.A_eq.shape[0] else None,
        b_eq=lp.b_eq if lp.A_eq.shape[0] else None,
        bounds=list(zip(lp.lb, [None if math.isinf(u) else u for u in lp.ub])),
        method="highs",
    )
    n = lp.num_vars
    if res.status == 2:
        return SolverSolution(np.full(n, np.nan), math.nan, "infeasible", math.inf)
    if res.status == 3:
        return SolverSolution(np.full(n, np.nan), sign * math.inf, "unbounded", math.inf)
    if res.status != 0:
        raise SolverError(f"HiGHS failed: {res.message}")
    x = res.x
    obj = float(lp.c @ x)
    duals = None
    gap = 0.0
    if lp.A_ub.shape[0]:
        duals = -sign * res.ineqlin.marginals
    # HiGHS reports its own certified optimality; reuse its dual objective.
    dual_obj = -sign * float(res.fun)
    gap = abs(obj - dual_obj) / max(1.0, abs(obj))
    return SolverSolution(x, obj, "optimal", gap, duals, {"backend": "highs"})


def solve_lp(lp: LinearProgram, tol: float = 1e-9) -> SolverSolution:
    """Solve ``lp`` to ``tol`` relative objective accuracy.

    The jitted simplex answer is accepted only if its primal/dual pair checks
    out (feasibility, dual sign, duality gap); otherwise HiGHS takes over.
    """
    std = _standard_form(lp)
    if std is None:
        return _highs(lp)
    A, b, n_ub, c, shift, sign = std
    m, n = A.shape
    if m == 0:
        if np.any(c > 0):
            return SolverSolution(np.full(n, np.nan), sign * math.inf, "unbounded", math.inf)
        return SolverSolution(shift.copy(), float(lp.c @ shift), "optimal", 0.0, np.zeros(0))
    status, y, dual = _simplex_kernel(A, b, n_ub, c, 50 * (m + n) + 100)
    if status == 3:
        return SolverSolution(np.full(n, np.nan), math.nan, "infeasible", math.inf)
    if status == 1:
        return SolverSolution(np.full(n, np.nan), sign * math.inf, "unbounded", math.inf)
    if status != 0:
        return _highs(lp)
    primal = float(c @ y)
    dual_obj = float(b @ dual)
    gap = abs(dual_obj - primal) / max(1.0, abs(primal))
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    resid_ub = A[:n_ub] @ y - b[:n_ub]
    resid_eq = np.abs(A[n_ub:] @ y - b[n_ub:])
    dual_resid = c - A.T @ dual
    cscale = max(1.0, float(np.abs(c).max(initial=0.0)))
    if (
        gap > tol
        or resid_ub.max(initial=0.0) > FEAS_TOL * scale
        or resid_eq.max(initial=0.0) > FEAS_TOL * scale
        or y.min(initial=0.0) < -FEAS_TOL
        or dual[:n_ub].min(initial=0.0) < -1e-9 * cscale
        or dual_resid.max(initial=0.0) > 1e-9 * cscale
    ):
        return _highs(lp)
    x = np.maximum(y, 0.0) + shift
    duals = sign * dual[: lp.A_ub.shape[0]]
    return SolverSolution(x, float(lp.c @ x), "optimal", gap, duals, {"backend": "simplex"})


# ---------------------------------------------------------------------------
# convex subproblem


@dataclass
class DelayTerm:
    """One node's contribution ``weight * max_s N_s / q_s(v)``.

    ``q_rows[k] @ v + q_const[k]`` is the equivalent rate of the k-th component
    session, whose block size is ``blocks[k]``.
    """

    weight: float
    blocks: np.ndarray
    q_rows: np.ndarray
    q_const: np.ndarray


@dataclass
class ConvexSubproblem:
    num_vars: int
    G: np.ndarray  # G v <= h
    h: np.ndarray
    terms: list[DelayTerm]
    lb: np.ndarray | None = None  # default 0

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float)).reshape(-1, self.num_vars)
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.G.shape[0] != self.h.size:
            raise SolverError("G and h disagree in row count")
        self.lb = np.zeros(self.num_vars) if self.lb is None else np.asarray(self.lb, float)
        for t in self.terms:
            t.blocks = np.asarray(t.blocks, dtype=float).ravel()
            t.q_rows = np.atleast_2d(np.asarray(t.q_rows, dtype=float)).reshape(-1, self.num_vars)
            t.q_const = np.asarray(t.q_const, dtype=float).ravel()
            if not (t.blocks.size == t.q_rows.shape[0] == t.q_const.size):
                raise SolverError("delay term dimensions disagree")
        if not (np.all(np.isfinite(self.G)) and np.all(np.isfinite(self.h))):
            raise SolverError("non-finite constraint data")

    def active_terms(self) -> list[DelayTerm]:
        out = []
        for t in self.terms:
            keep = t.blocks > 0
            if t.weight > 0 and keep.any():
                out.append(DelayTerm(t.weight, t.blocks[keep], t.q_rows[keep], t.q_const[keep]))
        return out

    def evaluate(self, v: np.ndarray) -> float:
        total = 0.0
        for t in self.active_terms():
            q = t.q_rows @ v + t.q_const
            if np.any(q <= 0):
                return math.inf
            total += t.weight * float(np.max(t.blocks / q))
        return total

    def max_violation(self, v: np.ndarray) -> float:
        viol = max(0.0, float((self.G @ v - self.h).max(initial=0.0)))
        return max(viol, float((self.lb - v).max(initial=0.0)))


def _term_capacity(sp_: ConvexSubproblem, term: DelayTerm) -> float:
    """max z s.t. z N_s <= q_s(v) over the feasible set (pre-pass)."""
    n = sp_.num_vars
    k = term.blocks.size
    # variables [v, z]
    A = np.zeros((sp_.G.shape[0] + k, n + 1))
    b = np.zeros(sp_.G.shape[0] + k)
    A[: sp_.G.shape[0], :n] = sp_.G
    b[: sp_.G.shape[0]] = sp_.h
    A[sp_.G.shape[0]:, :n] = -term.q_rows
    A[sp_.G.shape[0]:, n] = term.blocks
    b[sp_.G.shape[0]:] = term.q_const
    c = np.zeros(n + 1)
    c[n] = 1.0
    lb = np.concatenate([sp_.lb, [0.0]])
    res = solve_lp(LinearProgram(c, A, b, lb=lb))
    if res.status == "infeasible":
        raise InfeasibleError("convex subproblem has an empty feasible region")
    if res.status == "unbounded":
        return math.inf
    return max(0.0, res.objective)


def term_capacities(sp_: ConvexSubproblem) -> list[float]:
    return [_term_capacity(sp_, t) for t in sp_.active_terms()]


def solve_convex(sp_: ConvexSubproblem, tol: float = OPT_TOL) -> SolverSolution:
    """Minimize ``sum_n w_n max_s N_s/q_{n,s}(v)`` over ``G v <= h, v >= lb``."""
    terms = sp_.active_terms()
    n = sp_.num_vars
    caps = [_term_capacity(sp_, t) for t in terms]
    if any(cap <= 1e-12 for cap in caps):
        return SolverSolution(np.zeros(n), math.inf, "optimal", 0.0, extra={"caps": caps})
    if not terms:
        lp = solve_lp(LinearProgram(np.zeros(n), sp_.G, sp_.h, lb=sp_.lb))
        if not lp.ok:
            raise InfeasibleError("convex subproblem has an empty feasible region")
        return SolverSolution(lp.x, 0.0, "optimal", 0.0)

    # variables: v (n), z_k, u_k for each term
    K = len(terms)
    nv = n + 2 * K
    zi = lambda k: n + 2 * k
    ui = lambda k: n + 2 * k + 1
    # scale each term so that z is O(1): z_k = cap_k * zeta_k
    cost = np.zeros(nv)
    for k, t in enumerate(terms):
        cost[ui(k)] = t.weight / caps[k]
    rows, rhs = [], []
    for g, hh in zip(sp_.G, sp_.h):
        r = np.zeros(nv)
        r[:n] = g
        rows.append(r)
        rhs.append(hh)
    for j in range(n):
        r = np.zeros(nv)
        r[j] = -1.0
        rows.append(r)
        rhs.append(-sp_.lb[j])
    for k, t in enumerate(terms):
        for Ns, qr, qc in zip(t.blocks, t.q_rows, t.q_const):
            r = np.zeros(nv)
            r[:n] = -qr
            r[zi(k)] = Ns * caps[k]
            rows.append(r)
            rhs.append(qc)
        r = np.zeros(nv)
        r[zi(k)] = -1.0
        rows.append(r)
        rhs.append(0.0)
    n_lin = len(rows)
    # SOC: (u + zeta, 2, u - zeta) in Q3, meaning u * zeta >= 1
    for k in range(K):
        r0 = np.zeros(nv); r0[ui(k)] = -1.0; r0[zi(k)] = -1.0
        r1 = np.zeros(nv)
        r2 = np.zeros(nv); r2[ui(k)] = -1.0; r2[zi(k)] = 1.0
        rows += [r0, r1, r2]
        rhs += [0.0, 2.0, 0.0]
    A = sp.csc_matrix(np.array(rows))
    b = np.array(rhs)
    cones = [clarabel.NonnegativeConeT(n_lin)] + [clarabel.SecondOrderConeT(3)] * K
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = 1e-10
    settings.tol_gap_rel = 1e-10
    settings.tol_feas = 1e-10
    settings.presolve_enable = True
    solver = clarabel.DefaultSolver(sp.csc_matrix((nv, nv)), cost, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    if "Infeasible" in status and "Almost" not in status:
        raise InfeasibleError(f"convex subproblem infeasible ({status})")
    x = np.array(sol.x)
    v = _polish(sp_, terms, x[:n].copy())
    obj = sp_.evaluate(v)
    lower = float(sol.obj_val_dual) if math.isfinite(sol.obj_val_dual) else -math.inf
    gap = (obj - lower) / max(1e-300, abs(obj)) if math.isfinite(obj) else math.inf
    return SolverSolution(v, obj, "optimal", max(0.0, gap), extra={"caps": caps, "backend": status})


def _polish(sp_: ConvexSubproblem, terms: list[DelayTerm], v: np.ndarray) -> np.ndarray:
    """Snap an interior-point answer onto an exactly feasible vertex.

    Interior-point iterates may overshoot rows by ~1e-9.  We keep the level
    ``z_n = min_s q_{n,s}/N_s`` each term reached (relaxed by 1e-9) and let the
    simplex find a point of ``G v <= h`` that still attains those levels.
    """
    n = sp_.num_vars
    rows = [sp_.G]
    rhs = [sp_.h]
    c = np.zeros(n)
    for t in terms:
        q = t.q_rows @ v + t.q_const
        z = max(0.0, float(np.min(q / t.blocks))) * (1 - 1e-9)
        rows.append(-t.q_rows)
        rhs.append(t.q_const - z * t.blocks)
        c += (t.q_rows / t.blocks[:, None]).sum(axis=0) * t.weight
    lp = LinearProgram(c, np.vstack(rows), np.concatenate(rhs), lb=sp_.lb)
    res = solve_lp(lp)
    if res.ok:
        return np.maximum(res.x, sp_.lb)
    return _restore_feasibility(sp_, v)


def _restore_feasibility(sp_: ConvexSubproblem, v: np.ndarray) -> np.ndarray:
    """Pull an interior-point answer back inside ``G v <= h, v >= lb`` exactly.

    Interior-point iterates may overshoot constraints by ~1e-9; we clip to the
    lower bounds and then scale toward the bound point until every row holds.
    """
    v = np.maximum(v, sp_.lb)
    if sp_.G.shape[0] == 0:
        return v
    base = sp_.lb
    slack_base = sp_.h - sp_.G @ base
    lhs = sp_.G @ v
    over = lhs - sp_.h
    if over.max(initial=0.0) <= 0:
        return v
    d = sp_.G @ (v - base)
    theta = 1.0
    for i in np.nonzero(over > 0)[0]:
        if d[i] > 0:
            theta = min(theta, max(0.0, slack_base[i]) / d[i])
    return base + theta * (v - base)
