"""Exact 0-1 integer programming.

Two solvers share one problem representation:

* :func:`solve_exhaustive` enumerates every assignment (test oracle, n <= 25).
* :func:`solve_bnb` is a depth-first branch-and-bound with bound propagation.

Both minimise the objective and break ties the same way: primary objective,
then the secondary (tie-break) objective, then the assignment with the
smallest integer key ``sum(x_i * 2**i)``.  In other words the assignment
that is lexicographically smallest when read from the *last* variable
backwards, so ``(1, 0)`` beats ``(0, 1)``.

Objective values are computed with :func:`math.fsum`, which is exactly
rounded and therefore independent of summation order; equal assignments
always produce bit-identical values no matter which solver produced them.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

FEAS_TOL = 1e-9
MAX_EXHAUSTIVE_VARS = 25

LE, EQ, GE = "<=", "=", ">="


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"


def _sparse(coeffs: Mapping[int, float] | Sequence[float]) -> dict[int, float]:
    if isinstance(coeffs, Mapping):
        items = coeffs.items()
    else:
        items = enumerate(coeffs)
    return {int(i): float(a) for i, a in items if a != 0}


@dataclass
class Constraint:
    coeffs: dict[int, float]
    sense: str
    rhs: float
    name: str = ""

    def activity(self, x: Sequence[int]) -> float:
        return math.fsum(a * x[i] for i, a in self.coeffs.items())

    def satisfied(self, x: Sequence[int], tol: float = FEAS_TOL) -> bool:
        act = self.activity(x)
        if self.sense == LE:
            return act <= self.rhs + tol
        if self.sense == GE:
            return act >= self.rhs - tol
        return abs(act - self.rhs) <= tol


@dataclass
class Linear:
    costs: dict[int, float]


@dataclass
class MinMax:
    """Minimise the largest group expression; ``tiebreak`` orders equal maxima."""

    groups: list[dict[int, float]]
    tiebreak: dict[int, float] | None = None


@dataclass
class BinaryProgram:
    n_vars: int = 0
    objective: Linear | MinMax = field(default_factory=lambda: Linear({}))
    constraints: list[Constraint] = field(default_factory=list)
    var_labels: list[str] = field(default_factory=list)

    def add_var(self, label: str = "") -> int:
        self.var_labels.append(label or f"v{self.n_vars}")
        self.n_vars += 1
        return self.n_vars - 1

    def add_constraint(self, coeffs, sense: str, rhs: float, name: str = "") -> None:
        if sense not in (LE, EQ, GE):
            raise ValueError(f"unknown relation {sense!r}")
        if not math.isfinite(rhs):
            raise ValueError("constraint bound must be finite")
        c = Constraint(_sparse(coeffs), sense, float(rhs), name)
        if any(i < 0 or i >= self.n_vars for i in c.coeffs):
            raise ValueError(f"constraint {name!r} references unknown variable")
        self.constraints.append(c)

    def set_linear(self, costs) -> None:
        self.objective = Linear(_sparse(costs))

    def set_minmax(self, groups: Iterable, tiebreak=None) -> None:
        self.objective = MinMax(
            [_sparse(g) for g in groups],
            None if tiebreak is None else _sparse(tiebreak),
        )

    def evaluate(self, x: Sequence[int]) -> tuple[float, float]:
        """(primary, secondary) objective of a full assignment."""
        obj = self.objective
        if isinstance(obj, Linear):
            return math.fsum(c * x[i] for i, c in obj.costs.items()), 0.0
        primary = max(
            (math.fsum(c * x[i] for i, c in g.items()) for g in obj.groups),
            default=0.0,
        )
        secondary = 0.0
        if obj.tiebreak:
            secondary = math.fsum(c * x[i] for i, c in obj.tiebreak.items())
        return primary, secondary

    def is_feasible(self, x: Sequence[int], tol: float = FEAS_TOL) -> bool:
        return all(c.satisfied(x, tol) for c in self.constraints)

    def to_text(self) -> str:
        """LP-format-like dump for inspection. Not standard compliant."""
        lab = self.var_labels

        def expr(d):
            if not d:
                return "0"
            return " ".join(f"{'+' if a >= 0 else '-'} {abs(a):.6g} {lab[i]}" for i, a in sorted(d.items()))

        lines = []
        obj = self.objective
        if isinstance(obj, Linear):
            lines += ["minimize", f"  obj: {expr(obj.costs)}"]
        else:
            lines += ["minimize max"]
            lines += [f"  g{k}: {expr(g)}" for k, g in enumerate(obj.groups)]
            if obj.tiebreak:
                lines += ["then minimize", f"  tie: {expr(obj.tiebreak)}"]
        lines.append("subject to")
        for k, c in enumerate(self.constraints):
            lines.append(f"  {c.name or f'c{k}'}: {expr(c.coeffs)} {c.sense} {c.rhs:.6g}")
        lines.append("binary")
        lines.append("  " + " ".join(lab))
        lines.append("end")
        return "\n".join(lines)


@dataclass
class SolveResult:
    status: Status
    assignment: list[int]
    objective_value: float
    secondary_value: float = 0.0
    nodes_explored: int = 0
    wall_time: float = 0.0

    @classmethod
    def checked(cls, p: BinaryProgram, status, assignment, nodes, t0) -> "SolveResult":
        if status is Status.OPTIMAL:
            # independent re-check of every constraint
            for c in p.constraints:
                act = sum(a * assignment[i] for i, a in c.coeffs.items())
                ok = (
                    act <= c.rhs + 1e-7 if c.sense == LE
                    else act >= c.rhs - 1e-7 if c.sense == GE
                    else abs(act - c.rhs) <= 1e-7
                )
                if not ok:
                    raise AssertionError(f"solver returned assignment violating {c.name or c}")
            primary, secondary = p.evaluate(assignment)
        else:
            assignment, primary, secondary = [], math.inf, math.inf
        return cls(status, list(assignment), primary, secondary, nodes, time.perf_counter() - t0)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


# ---------------------------------------------------------------------------
# exhaustive oracle


def solve_exhaustive(p: BinaryProgram, chunk_bits: int = 16) -> SolveResult:
    n = p.n_vars
    if n > MAX_EXHAUSTIVE_VARS:
        raise ValueError(f"exhaustive search limited to {MAX_EXHAUSTIVE_VARS} variables, got {n}")
    t0 = time.perf_counter()
    if n == 0:
        status = Status.OPTIMAL if p.is_feasible([]) else Status.INFEASIBLE
        return SolveResult.checked(p, status, [], 1, t0)

    A = np.zeros((len(p.constraints), n))
    for k, c in enumerate(p.constraints):
        for i, a in c.coeffs.items():
            A[k, i] = a
    rhs = np.array([c.rhs for c in p.constraints])
    senses = [c.sense for c in p.constraints]
    obj = p.objective
    if isinstance(obj, Linear):
        G = np.zeros((1, n))
        for i, a in obj.costs.items():
            G[0, i] = a
    else:
        G = np.zeros((max(len(obj.groups), 1), n))
        for g, grp in enumerate(obj.groups):
            for i, a in grp.items():
                G[g, i] = a

    T = None
    if isinstance(obj, MinMax) and obj.tiebreak:
        T = np.zeros(n)
        for i, a in obj.tiebreak.items():
            T[i] = a

    total = 1 << n
    step = 1 << min(n, chunk_bits)
    bits = np.arange(n, dtype=np.int64)
    keep_k, keep_p, keep_s = [], [], []
    for start in range(0, total, step):
        keys = np.arange(start, min(start + step, total), dtype=np.int64)
        X = ((keys[:, None] >> bits) & 1).astype(float)
        feas = np.ones(len(keys), dtype=bool)
        if senses:
            act = X @ A.T
            for k, s in enumerate(senses):
                if s == LE:
                    feas &= act[:, k] <= rhs[k] + FEAS_TOL
                elif s == GE:
                    feas &= act[:, k] >= rhs[k] - FEAS_TOL
                else:
                    feas &= np.abs(act[:, k] - rhs[k]) <= FEAS_TOL
        if not feas.any():
            continue
        X = X[feas]
        pv = (X @ G.T).max(axis=1)
        sv = X @ T if T is not None else np.zeros(len(X))
        sel = _near_min(pv, sv)
        keep_k.append(keys[feas][sel])
        keep_p.append(pv[sel])
        keep_s.append(sv[sel])
    if not keep_k:
        return SolveResult.checked(p, Status.INFEASIBLE, [], total, t0)
    kk, pv, sv = (np.concatenate(a) for a in (keep_k, keep_p, keep_s))
    candidates = [int(k) for k in kk[_near_min(pv, sv)]]

    def assignment(key: int) -> list[int]:
        return [(key >> i) & 1 for i in range(n)]

    best = min(candidates, key=lambda k: (p.evaluate(assignment(k)), k))
    return SolveResult.checked(p, Status.OPTIMAL, assignment(best), total, t0)


def _near_min(pv: np.ndarray, sv: np.ndarray) -> np.ndarray:
    # approximate (float-noisy) filter; survivors are re-ranked exactly
    pm = pv.min()
    sel = pv <= pm + 1e-9 * (1.0 + abs(pm))
    sm = sv[sel].min()
    return sel & (sv <= sm + 1e-9 * (1.0 + abs(sm)))


# ---------------------------------------------------------------------------
# branch and bound


class _Search:
    """Mutable search state for one solve; never shared between solves."""

    def __init__(self, p: BinaryProgram):
        self.p = p
        n = self.n = p.n_vars
        self.val = [-1] * n
        self.trail: list[int] = []
        self.nodes = 0

        cons = p.constraints
        self.sense = [c.sense for c in cons]
        self.rhs = [c.rhs for c in cons]
        self.fixed = [0.0] * len(cons)
        self.free_lo = [math.fsum(min(0.0, a) for a in c.coeffs.values()) for c in cons]
        self.free_hi = [math.fsum(max(0.0, a) for a in c.coeffs.values()) for c in cons]
        self.var_cons: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for k, c in enumerate(cons):
            for i, a in c.coeffs.items():
                self.var_cons[i].append((k, a))

        obj = p.objective
        if isinstance(obj, Linear):
            self.groups = []
            self.primary = obj.costs
            self.secondary = None
        else:
            self.groups = obj.groups
            self.primary = None
            self.secondary = obj.tiebreak or None
        self.var_groups: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for g, grp in enumerate(self.groups):
            for i, a in grp.items():
                self.var_groups[i].append((g, a))
        self.g_fixed = [0.0] * len(self.groups)
        self.g_neg = [sum(min(0.0, a) for a in grp.values()) for grp in self.groups]

        # cardinality rows: disjoint equality constraints with unit coefficients
        self.rows: list[tuple[int, list[int]]] = []
        self.row_of = [-1] * n
        for k, c in enumerate(cons):
            if c.sense != EQ or not c.coeffs or any(a != 1.0 for a in c.coeffs.values()):
                continue
            if any(self.row_of[i] >= 0 for i in c.coeffs):
                continue
            r = len(self.rows)
            self.rows.append((k, sorted(c.coeffs)))
            for i in c.coeffs:
                self.row_of[i] = r

        # linear expressions bounded via the rows
        self.bounded: list[tuple[list[float], list[list[int]], list[int]]] = []
        exprs = []
        if self.primary is not None:
            exprs.append(self.primary)
        else:
            total: dict[int, float] = {}
            for grp in self.groups:
                for i, a in grp.items():
                    total[i] = total.get(i, 0.0) + a
            exprs.append(total)
        if self.secondary is not None:
            exprs.append(self.secondary)
        for e in exprs:
            coef = [e.get(i, 0.0) for i in range(n)]
            row_orders = [sorted(vs, key=lambda i: coef[i]) for _, vs in self.rows]
            loose = [i for i in range(n) if self.row_of[i] < 0 and coef[i] != 0.0]
            self.bounded.append((coef, row_orders, loose))

    # -- assignment with undo trail -------------------------------------------------

    def assign(self, i: int, v: int) -> bool:
        """Fix x_i = v and propagate; False on infeasibility (state must be undone)."""
        queue = [(i, v)]
        while queue:
            i, v = queue.pop()
            cur = self.val[i]
            if cur >= 0:
                if cur != v:
                    return False
                continue
            self.val[i] = v
            self.trail.append(i)
            for g, a in self.var_groups[i]:
                self.g_fixed[g] += a * v
                if a < 0:
                    self.g_neg[g] -= a
            touched = self.var_cons[i]
            for k, a in touched:
                self.fixed[k] += a * v
                if a < 0:
                    self.free_lo[k] -= a
                else:
                    self.free_hi[k] -= a
            for k, _ in touched:
                if not self._propagate(k, queue):
                    return False
        return True

    def _propagate(self, k: int, queue: list) -> bool:
        s = self.sense[k]
        base = self.fixed[k]
        lo = base + self.free_lo[k]
        hi = base + self.free_hi[k]
        rhs = self.rhs[k]
        slack_le = rhs + FEAS_TOL - lo if s != GE else math.inf
        slack_ge = hi - (rhs - FEAS_TOL) if s != LE else math.inf
        if slack_le < 0 or slack_ge < 0:
            return False
        if slack_le == math.inf and slack_ge == math.inf:
            return True
        limit = min(slack_le, slack_ge)
        coeffs = self.p.constraints[k].coeffs
        if limit >= sum(abs(a) for a in coeffs.values()):
            return True
        val = self.val
        for j, a in coeffs.items():
            if val[j] >= 0 or abs(a) <= limit:
                continue
            if abs(a) > slack_le:
                # taking the activity-raising value breaks the <= side
                queue.append((j, 0 if a > 0 else 1))
            if abs(a) > slack_ge:
                queue.append((j, 1 if a > 0 else 0))
        return True

    def undo(self, mark: int) -> None:
        trail = self.trail
        while len(trail) > mark:
            i = trail.pop()
            v = self.val[i]
            self.val[i] = -1
            for g, a in self.var_groups[i]:
                self.g_fixed[g] -= a * v
                if a < 0:
                    self.g_neg[g] += a
            for k, a in self.var_cons[i]:
                self.fixed[k] -= a * v
                if a < 0:
                    self.free_lo[k] += a
                else:
                    self.free_hi[k] += a

    # -- bounds ------------------------------------------------------------------

    def _linear_lb(self, which: int, banned: set[int] | None = None) -> float:
        """Row-aware lower bound of a linear expression; ``banned`` vars count as 0.

        Returns +inf when a cardinality row cannot be met without banned vars.
        """
        coef, row_orders, loose = self.bounded[which]
        val = self.val
        terms = []
        for i in loose:
            v = val[i]
            if v == 1:
                terms.append(coef[i])
            elif v < 0 and coef[i] < 0 and not (banned and i in banned):
                terms.append(coef[i])
        for (k, _), order in zip(self.rows, row_orders):
            need = round(self.rhs[k] - self.fixed[k])
            for i in order:
                v = val[i]
                if v == 1:
                    terms.append(coef[i])
                elif v < 0 and need > 0 and not (banned and i in banned):
                    terms.append(coef[i])
                    need -= 1
            if need > 0:
                return math.inf
        return math.fsum(terms)

    def bound(self, limit: float = math.inf) -> tuple[float, float]:
        """Exact lower bound on (primary, secondary) over completions whose
        primary value does not exceed ``limit``; (inf, inf) if there are none.

        Every term list is summed with fsum, so the rounded bound can never
        exceed the rounded value of a completion.
        """
        if self.primary is not None:
            return self._linear_lb(0), 0.0
        val = self.val
        fixed_terms = []
        floor = []
        for grp in self.groups:
            t = [a for i, a in grp.items() if val[i] == 1 or (val[i] < 0 and a < 0)]
            fixed_terms.append(t)
            floor.append(math.fsum(t))
        lb = max(floor, default=0.0)
        if lb > limit:
            return math.inf, math.inf

        def lifted(i: int) -> float:
            out = -math.inf
            for g, a in self.var_groups[i]:
                if a > 0:
                    approx = floor[g] + a
                    if abs(approx - limit) <= 1e-9 * (1.0 + abs(limit)):
                        approx = math.fsum(fixed_terms[g] + [a])
                    out = max(out, approx)
                else:
                    out = max(out, floor[g])
            return out

        # a variable that would lift its group past the limit is out for any
        # completion we care about
        banned: set[int] = set()
        lift = {}
        for i in range(self.n):
            if val[i] < 0 and self.var_groups[i]:
                lift[i] = v = lifted(i)
                if v > limit:
                    banned.add(i)
        # every cardinality row still needing k ones lifts k groups: the max is
        # at least the k-th smallest lifted group value over its usable vars
        for k, vs in self.rows:
            need = round(self.rhs[k] - self.fixed[k])
            if need <= 0:
                continue
            ups = sorted(lift.get(i, -math.inf) for i in vs if val[i] < 0 and i not in banned)
            if len(ups) < need:
                return math.inf, math.inf
            # near-limit values were computed exactly above; others are far from it
            lb = max(lb, ups[need - 1])
        wf = self._water_fill(fixed_terms, banned, limit)
        if wf > limit:
            return math.inf, math.inf
        lb = max(lb, wf)
        if self.groups:
            total = self._linear_lb(0, banned)
            if total == math.inf:
                return math.inf, math.inf
            avg = total / len(self.groups)
            # summed coefficients and the division both round; back off
            lb = max(lb, avg - 1e-12 * (1.0 + abs(avg)))
        if lb > limit:
            return math.inf, math.inf
        sec = self._linear_lb(1, banned) if self.secondary is not None else 0.0
        return lb, sec


    def _water_fill(self, fixed_terms: list[list[float]], banned: set[int], limit: float) -> float:
        """Pigeonhole bound: the ones still owed to cardinality rows land in
        groups, and a group taking j more costs at least its floor plus its j
        cheapest usable increments.  Returns the smallest level T at which the
        groups can absorb every owed one (a lower bound on the max)."""
        val = self.val
        owed = 0
        for k, vs in self.rows:
            owed += max(0, round(self.rhs[k] - self.fixed[k]))
        if owed == 0:
            return -math.inf
        incs: list[list[float]] = [[] for _ in self.groups]
        for _, vs in self.rows:
            for i in vs:
                if val[i] >= 0 or i in banned:
                    continue
                if not self.var_groups[i]:
                    return -math.inf  # a groupless variable absorbs ones for free
                for g, a in self.var_groups[i]:
                    incs[g].append(max(a, 0.0))
        levels = []  # (cost of taking j items, group)
        for g, inc in enumerate(incs):
            inc.sort()
            base = fixed_terms[g]
            for j in range(1, len(inc) + 1):
                levels.append(math.fsum(base + inc[:j]))
        if len(levels) < owed:
            return math.inf
        # cost of the j-th item in a group is nondecreasing in j, so the owed-th
        # smallest level is the water line
        levels.sort()
        return levels[owed - 1]


def solve_bnb(p: BinaryProgram) -> SolveResult:
    """Exact minimum with the same deterministic tie-break as :func:`solve_exhaustive`.

    Search runs in two passes.  The first is an ordinary best-improvement
    branch-and-bound with a greedy branching rule and finds the optimal
    objective pair.  The second walks assignments in tie-break order
    (highest-index variable first, 0 before 1) and stops at the first leaf
    that attains that pair, which is the canonical optimum.
    """
    t0 = time.perf_counter()
    s = _Search(p)
    if not _root_ok(s):
        return SolveResult.checked(p, Status.INFEASIBLE, [], 1, t0)

    best = _greedy_pass(s)
    if best is None:
        return SolveResult.checked(p, Status.INFEASIBLE, [], s.nodes, t0)

    found: list[list[int]] = []

    def dfs() -> bool:
        s.nodes += 1
        if s.bound(best[0]) > best:
            return False
        i = _highest_free(s.val)
        if i < 0:
            if p.evaluate(s.val) == best:
                found.append(list(s.val))
                return True
            return False
        for v in (0, 1):
            mark = len(s.trail)
            if s.assign(i, v) and dfs():
                return True
            s.undo(mark)
        return False

    dfs()
    if not found:  # cannot happen unless the two passes disagree
        raise AssertionError("branch-and-bound passes disagree on the optimum")
    return SolveResult.checked(p, Status.OPTIMAL, found[0], s.nodes, t0)


def _root_ok(s: _Search) -> bool:
    queue: list = []
    for k in range(len(s.p.constraints)):
        if not s._propagate(k, queue):
            return False
    for i, v in queue:
        if not s.assign(i, v):
            return False
    # root-level fixings stay on the trail for both passes
    s.trail.clear()
    return True


def _highest_free(val: list[int]) -> int:
    for i in range(len(val) - 1, -1, -1):
        if val[i] < 0:
            return i
    return -1


def _greedy_pass(s: _Search) -> tuple[float, float] | None:
    p = s.p
    best: list = [None]
    row_vars = [vs for _, vs in s.rows]

    def choose():
        # most constrained cardinality row first, cheapest variable within it
        val = s.val
        pick, pick_key = -1, None
        for r, vs in enumerate(row_vars):
            k = s.rows[r][0]
            need = round(s.rhs[k] - s.fixed[k])
            if need <= 0:
                continue
            free = [i for i in vs if val[i] < 0]
            if not free:
                continue
            slack = len(free) - need
            for i in free:
                key = (slack, _impact(s, i), -i)
                if pick_key is None or key < pick_key:
                    pick, pick_key = i, key
        if pick >= 0:
            return pick, (1, 0)
        i = _highest_free(val)
        if i < 0:
            return -1, ()
        return i, ((1, 0) if _impact(s, i) < 0 else (0, 1))

    def dfs():
        s.nodes += 1
        if best[0] is not None and s.bound(best[0][0]) >= best[0]:
            return
        i, order = choose()
        if i < 0:
            value = p.evaluate(s.val)
            if best[0] is None or value < best[0]:
                best[0] = value
            return
        for v in order:
            mark = len(s.trail)
            if s.assign(i, v):
                dfs()
            s.undo(mark)

    dfs()
    return best[0]


def _impact(s: _Search, i: int) -> float:
    """Objective pressure of setting x_i = 1 (used only for branching order)."""
    if s.primary is not None:
        return s.primary.get(i, 0.0)
    worst = 0.0
    for g, a in s.var_groups[i]:
        worst = max(worst, s.g_fixed[g] + a)
    return worst


# ---------------------------------------------------------------------------
# group decomposition


def _is_row(c: Constraint) -> bool:
    return (c.sense == EQ and bool(c.coeffs) and all(a == 1.0 for a in c.coeffs.values())
            and c.rhs == round(c.rhs) and c.rhs >= 0)


def grouped_structure(p: BinaryProgram):
    """Detect a block-separable program, or return None.

    Variables split into blocks of contiguous indices (at most 12 each).
    For MinMax the blocks are the objective groups and every variable must
    sit in exactly one; for Linear they are the connected components of
    the non-row constraints.  Every constraint spanning more than one block
    must be a "row": a unit-coefficient equality, rows pairwise disjoint.
    """
    obj = p.objective
    n = p.n_vars
    if n == 0:
        return None
    owner = [-1] * n
    if isinstance(obj, MinMax):
        if not obj.groups:
            return None
        for g, grp in enumerate(obj.groups):
            for i in grp:
                if owner[i] >= 0:
                    return None
                owner[i] = g
        if min(owner) < 0:
            return None
        weight = {i: a for grp in obj.groups for i, a in grp.items()}
    else:
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for c in p.constraints:
            if _is_row(c):
                continue
            idx = list(c.coeffs)
            for i in idx[1:]:
                parent[find(i)] = find(idx[0])
        owner = [find(i) for i in range(n)]
        weight = obj.costs
    members: dict[int, list[int]] = {}
    for i, g in enumerate(owner):
        members.setdefault(g, []).append(i)
    blocks = []
    for g, idx in members.items():
        if idx[-1] - idx[0] + 1 != len(idx) or len(idx) > 12:
            return None
        blocks.append((g, idx))
    blocks.sort(key=lambda b: b[1][0])
    rows: list[Constraint] = []
    local: dict[int, list[Constraint]] = {}
    row_of = [-1] * n
    for c in p.constraints:
        gs = {owner[i] for i in c.coeffs}
        if len(gs) <= 1:
            local.setdefault(gs.pop() if gs else -1, []).append(c)
            continue
        if not _is_row(c) or any(row_of[i] >= 0 for i in c.coeffs):
            return None
        for i in c.coeffs:
            row_of[i] = len(rows)
        rows.append(c)
    return blocks, weight, rows, row_of, local


def solve_grouped(p: BinaryProgram) -> SolveResult:
    """Exact solver for block-separable programs (see :func:`grouped_structure`).

    Dynamic programming over blocks on the vector of row counts used so far.
    MinMax runs one pass for the smallest achievable maximum and a second
    for the smallest tie-break sum with every group under it; Linear needs
    only the sum pass.  A walk from the highest-index block down then picks
    the smallest-key subset that keeps the optimum reachable.  Sums closer
    than 1e-12 (relative) count as equal.
    """
    t0 = time.perf_counter()
    st = grouped_structure(p)
    if st is None:
        raise ValueError("program is not block-separable; use solve_bnb")
    blocks, weight, rows, row_of, local = st
    if not all(c.satisfied([0] * p.n_vars) for c in local.get(-1, [])):
        return SolveResult.checked(p, Status.INFEASIBLE, [], 0, t0)
    obj = p.objective
    minmax = isinstance(obj, MinMax)
    summed = (obj.tiebreak or {}) if minmax else obj.costs
    # tables are indexed by the row counts used so far, one axis per row
    radix = tuple(int(c.rhs) + 1 for c in rows)
    target = tuple(r - 1 for r in radix)

    # per block: feasible subsets bucketed by row-use vector
    options = []
    x = [0] * p.n_vars
    for g, idx in blocks:
        cons = local.get(g, [])
        by_use: dict[tuple, list] = {}
        for key in range(1 << len(idx)):
            for b, i in enumerate(idx):
                x[i] = (key >> b) & 1
            if not all(c.satisfied(x) for c in cons):
                continue
            chosen = [i for b, i in enumerate(idx) if (key >> b) & 1]
            use = [0] * len(rows)
            for i in chosen:
                if row_of[i] >= 0:
                    use[row_of[i]] += 1
            if any(u >= rad for u, rad in zip(use, radix)):
                continue
            val = math.fsum(weight.get(i, 0.0) for i in chosen) if minmax else 0.0
            sec = math.fsum(summed.get(i, 0.0) for i in chosen)
            by_use.setdefault(tuple(use), []).append((val, sec, key, chosen))
        for i in idx:
            x[i] = 0
        options.append(list(by_use.items()))

    def shifted(prev, use):
        out = np.full(radix, np.inf)
        out[tuple(slice(u, None) for u in use)] = prev[tuple(slice(0, r - u) for u, r in zip(use, radix))]
        return out

    origin = tuple(0 for _ in radix)
    work = 0
    p_star = math.inf
    if minmax:
        # smallest maximum; groups without variables always contribute 0
        A = np.full(radix, np.inf)
        A[origin] = 0.0 if any(not grp for grp in obj.groups) else -np.inf
        for opts in options:
            nxt = np.full(radix, np.inf)
            for use, subs in opts:
                cand = np.maximum(shifted(A, use), min(s[0] for s in subs))
                np.minimum(nxt, cand, out=nxt)
                work += 1
            A = nxt
        p_star = float(A[target])
        if p_star == math.inf:
            return SolveResult.checked(p, Status.INFEASIBLE, [], work, t0)

    tables = [np.full(radix, np.inf)]
    tables[0][origin] = 0.0
    for opts in options:
        B = tables[-1]
        nxt = np.full(radix, np.inf)
        for use, subs in opts:
            secs = [s[1] for s in subs if s[0] <= p_star]
            if secs:
                np.minimum(nxt, shifted(B, use) + min(secs), out=nxt)
                work += 1
        tables.append(nxt)
    if tables[-1][target] == math.inf:
        return SolveResult.checked(p, Status.INFEASIBLE, [], work, t0)

    u = target
    assignment = [0] * p.n_vars
    for j in range(len(blocks) - 1, -1, -1):
        goal = tables[j + 1][u]
        tol = 1e-12 * (1.0 + abs(goal))
        prev = tables[j]
        pick = None
        for use, subs in options[j]:
            if any(a < b for a, b in zip(u, use)):
                continue
            before = tuple(a - b for a, b in zip(u, use))
            rest = prev[before]
            if rest == math.inf:
                continue
            for val, sec, key, chosen in subs:
                if val <= p_star and rest + sec <= goal + tol and (pick is None or key < pick[0]):
                    pick = (key, chosen, before)
        if pick is None:
            raise AssertionError("block reconstruction lost the optimum")
        for i in pick[1]:
            assignment[i] = 1
        u = pick[2]
    return SolveResult.checked(p, Status.OPTIMAL, assignment, work, t0)


def solve_auto(p: BinaryProgram) -> SolveResult:
    """Group decomposition when the program allows it, branch-and-bound otherwise."""
    if grouped_structure(p) is not None:
        return solve_grouped(p)
    return solve_bnb(p)
