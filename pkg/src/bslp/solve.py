"""Solvers for standard bilevel programs and risk-averse leader models.

``solve_global`` runs best-first branch-and-bound on the KKT system of a
:class:`GenForm`.  A node fixes some complementarity pairs to "row tight" or
"multiplier zero" and solves the LP that ignores the remaining pairs.  Upper
level binaries are branched on once all pairs are complementary.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .lp import LpProblem, LpStatus, solve_lp
from .lower import InducedInfeasible, LowerLevelError, eval_outcomes
from .model import BilevelStochasticProblem, Polyhedron, RiskSpec
from .reformulate import (
    GenForm,
    KktSystem,
    UnboundedBigM,
    UnsupportedSpec,
    build_table1,
    polyhedron_box,
)
from .risk import RiskOverflow, q_risk

NODE_LIMIT = 10**6
COMP_TOL = 1e-9
INT_TOL = 1e-9
RESIDUAL_TOL = 1e-7
REFORMULATE_MAX_K = 16


class SolveStatus(str, Enum):
    GLOBAL_OPTIMAL = "global_optimal"
    LOCAL_OPTIMAL = "local_optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITER_LIMIT = "iter_limit"


class NoFeasiblePoint(RuntimeError):
    pass


class NonConvergent(RuntimeError):
    pass


class NumericalInconsistency(ArithmeticError):
    pass


class NoMethod(RuntimeError):
    pass


@dataclass
class SolveReport:
    status: SolveStatus
    x: np.ndarray | None = None
    value: float = math.nan
    u: np.ndarray | None = None
    w: np.ndarray | None = None
    y: list | None = None
    multipliers: np.ndarray | None = None
    pattern: str = ""
    nodes: int = 0
    wall_ms: float = 0.0
    method: str = ""
    extras: dict = field(default_factory=dict)

    def to_dict(self, timing: bool = False) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a, dtype=float).tolist()

        out = {
            "status": self.status.value,
            "method": self.method,
            "x": arr(self.x),
            "value": self.value,
            "u": arr(self.u),
            "y": None if self.y is None else [arr(v) for v in self.y],
            "multipliers": arr(self.multipliers),
            "pattern": self.pattern,
            "nodes": self.nodes,
            "extras": _jsonable(self.extras),
        }
        if timing:
            out["wall_ms"] = self.wall_ms
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Enum):
        return obj.value
    return obj


# ---------------------------------------------------------------------------
# Branch and bound


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    fixes: dict = field(compare=False)
    bins: dict = field(compare=False)
    z: np.ndarray | None = field(compare=False)


def _gap(value: float) -> float:
    return 1e-9 * max(1.0, abs(value))


def _coarse_grid(lo: np.ndarray, hi: np.ndarray) -> list:
    n = lo.size
    per = {1: 32, 2: 6, 3: 4}.get(n)
    if per is None:
        return []
    axes = [np.linspace(lo[i], hi[i], per) for i in range(n)]
    return [np.array(pt) for pt in itertools.product(*axes)]


def _warm_start(kkt: KktSystem):
    """Best coarse-grid point completed to a feasible ``(u, w)``, or ``None``."""
    gf = kkt.form
    if gf.completion is None or gf.integer:
        return None
    try:
        lo, hi = polyhedron_box(gf.U, gf.k)
    except ValueError:
        return None
    lo, hi = lo[: gf.n_x], hi[: gf.n_x]
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        return None
    best = None
    for x in _coarse_grid(lo, hi):
        try:
            u, w = gf.completion(x)
        except LowerLevelError:
            continue
        if not _upper_feasible(gf, u, w):
            continue
        val = float(gf.g @ u + gf.h @ w)
        if best is None or val < best[0]:
            best = (val, u, w)
    return best


def _upper_feasible(gf: GenForm, u, w, tol: float = 1e-9) -> bool:
    ok = gf.U.contains(u, tol)
    if gf.e.size:
        ok = ok and bool(np.all(gf.Cu @ u + gf.Cw @ w <= gf.e + tol * (1 + np.abs(gf.e))))
    return ok and bool(np.all(gf.W @ w <= gf.B @ u + gf.b + tol * (1 + np.abs(gf.b))))


def _multipliers(kkt: KktSystem, u, w) -> np.ndarray | None:
    """Lower-level multipliers minimising the complementarity gap at ``(u, w)``."""
    gf = kkt.form
    slack = gf.B @ u + gf.b - gf.W @ w
    r = gf.r
    res = solve_lp(LpProblem(-slack, gf.W.T, gf.t, "=", lb=np.full(r, -np.inf), ub=np.zeros(r)))
    return res.x if res.optimal else None


def _branch_and_bound(kkt: KktSystem, cost, extra, node_limit, audit, warm):
    gf = kkt.form
    k, l, r = gf.k, gf.l, gf.r
    seq = itertools.count()
    inc_val, inc_z = math.inf, None
    if warm is not None:
        inc_val = warm[0]
        inc_z = ("warm", warm[1], warm[2])

    def solve(fixes, bins):
        res = solve_lp(kkt.node_problem(fixes, bins, extra, cost))
        return res

    def log(**event):
        if audit is not None:
            audit.append(event)

    root = solve({}, {})
    nodes = 0
    if root.status == LpStatus.INFEASIBLE:
        log(node=0, parent=None, parent_bound=None, bound=None, event="infeasible")
        if inc_z is None:
            return SolveStatus.INFEASIBLE, None, math.inf, nodes
    heap = []
    if root.optimal:
        heapq.heappush(heap, _Node(root.value, next(seq), {}, {}, root.x))
    elif root.status == LpStatus.UNBOUNDED:
        heapq.heappush(heap, _Node(-math.inf, next(seq), {}, {}, None))
    status = SolveStatus.GLOBAL_OPTIMAL
    while heap:
        node = heapq.heappop(heap)
        nid = node.seq
        if node.bound >= inc_val - _gap(inc_val):
            log(node=nid, bound=node.bound, incumbent=inc_val, event="prune")
            continue
        nodes += 1
        if nodes > node_limit:
            status = SolveStatus.ITER_LIMIT
            break
        children = []
        if node.z is None:
            free = [i for i in range(r) if i not in node.fixes]
            if not free:
                return SolveStatus.UNBOUNDED, None, -math.inf, nodes
            i = free[0]
            children = [({**node.fixes, i: "slack"}, node.bins), ({**node.fixes, i: "dual"}, node.bins)]
        else:
            z = node.z
            slack = kkt.slacks(z)
            v = z[k + l :]
            scale = 1.0 + np.abs(gf.b)
            viol = (slack > COMP_TOL * scale) & (v < -COMP_TOL)
            if viol.any():
                prod = np.where(viol, -v * slack, -np.inf)
                i = int(np.argmax(prod))
                children = [
                    ({**node.fixes, i: "slack"}, node.bins),
                    ({**node.fixes, i: "dual"}, node.bins),
                ]
            else:
                frac = [
                    (abs(z[j] - round(z[j])), j) for j in gf.integer if j not in node.bins
                ]
                frac = [(f, j) for f, j in frac if f > INT_TOL]
                if frac:
                    f, j = max(frac, key=lambda t: (t[0], -t[1]))
                    children = [(node.fixes, {**node.bins, j: 0}), (node.fixes, {**node.bins, j: 1})]
                else:
                    val = float(cost @ z)
                    if val < inc_val:
                        inc_val, inc_z = val, z
                        log(node=nid, bound=node.bound, value=val, event="incumbent")
                    continue
        for fixes, bins in children:
            res = solve(fixes, bins)
            if res.status == LpStatus.INFEASIBLE:
                log(node=None, parent=nid, parent_bound=node.bound, bound=None, event="infeasible")
                continue
            if res.status == LpStatus.UNBOUNDED:
                child = _Node(-math.inf, next(seq), fixes, bins, None)
            else:
                child = _Node(res.value, next(seq), fixes, bins, res.x)
            log(node=child.seq, parent=nid, parent_bound=node.bound, bound=child.bound, event="branch")
            heapq.heappush(heap, child)
    if inc_z is None:
        if status == SolveStatus.ITER_LIMIT:
            return status, None, math.inf, nodes
        return SolveStatus.INFEASIBLE, None, math.inf, nodes
    return status, inc_z, inc_val, nodes


def _report_from(kkt: KktSystem, z, status, nodes, method) -> SolveReport:
    gf = kkt.form
    k, l = gf.k, gf.l
    if isinstance(z, tuple):  # warm-start incumbent (u, w) without multipliers
        _, u, w = z
        v = _multipliers(kkt, u, w)
        z = np.concatenate([u, w, v if v is not None else np.zeros(gf.r)])
    u, w, v = z[:k], z[k : k + l], z[k + l :]
    slack = gf.B @ u + gf.b - gf.W @ w
    pat = []
    for s_i, v_i, b_i in zip(slack, v, gf.b):
        tight = s_i <= COMP_TOL * (1 + abs(b_i))
        zero = v_i >= -COMP_TOL
        pat.append("B" if tight and zero else ("S" if tight else "V"))
    residual = _residual(kkt, z)
    extras = {"residual": residual, "complementarity": float(np.max(-v * slack, initial=0.0))}
    if residual > RESIDUAL_TOL and status == SolveStatus.GLOBAL_OPTIMAL:
        status = SolveStatus.FEASIBLE
    return SolveReport(
        status=status,
        x=u[: gf.n_x].copy(),
        value=float(gf.g @ u + gf.h @ w),
        u=u.copy(),
        w=w.copy(),
        y=[w[c0:c1].copy() for (_, _, c0, c1) in gf.blocks],
        multipliers=v.copy(),
        pattern="".join(pat),
        nodes=nodes,
        method=method,
        extras=extras,
    )


def _residual(kkt: KktSystem, z) -> float:
    lhs = kkt.A @ z
    worst = 0.0
    for a, b, s in zip(lhs, kkt.rhs, kkt.senses):
        worst = max(worst, abs(a - b) if s == "=" else max(0.0, a - b))
    worst = max(worst, float(np.max(kkt.lb - z, initial=0.0)), float(np.max(z - kkt.ub, initial=0.0)))
    return worst


def solve_global(form: GenForm | KktSystem, node_limit: int = NODE_LIMIT, audit: list | None = None) -> SolveReport:
    """Global optimum of a GenForm by branch-and-bound over its KKT system.

    When the form carries a ``lexicographic`` objective, a second search
    minimises it among optimal solutions of the first.
    """
    t0 = time.perf_counter()
    kkt = form if isinstance(form, KktSystem) else KktSystem(form)
    gf = kkt.form
    status, z, val, nodes = _branch_and_bound(kkt, kkt.cost, None, node_limit, audit, _warm_start(kkt))
    if z is None:
        return SolveReport(status, value=val, nodes=nodes, method="kkt-bb", wall_ms=_ms(t0))
    if gf.lexicographic is not None and status == SolveStatus.GLOBAL_OPTIMAL:
        cap = (kkt.cost[None, :], np.array([val + _gap(val)]))
        cost2 = np.concatenate([gf.lexicographic, np.zeros(gf.l + gf.r)])
        st2, z2, _, n2 = _branch_and_bound(kkt, cost2, cap, node_limit, audit, None)
        nodes += n2
        if z2 is not None:
            z, status = z2, st2
    rep = _report_from(kkt, z, status, nodes, "kkt-bb")
    rep.wall_ms = _ms(t0)
    return rep


def _ms(t0: float) -> float:
    return 1000.0 * (time.perf_counter() - t0)


def _lp_value(res) -> float:
    if res.status == LpStatus.UNBOUNDED:
        return -math.inf
    if res.status == LpStatus.INFEASIBLE:
        return math.inf
    return res.value


def decomposed_relaxation(kkt: KktSystem, x, fixes: dict | None = None) -> tuple[float, float]:
    """Node relaxation value with ``x`` fixed, monolithic and per scenario block.

    With the leader decision fixed and no coupling rows, the relaxation splits
    into one LP per scenario block.  Returns ``(monolithic, sum of blocks)``;
    unbounded and infeasible relaxations count as ``-inf`` and ``+inf``.
    """
    gf = kkt.form
    if gf.e.size or gf.k != gf.n_x:
        raise ValueError("block decomposition needs a form without auxiliaries or coupling")
    fixes = fixes or {}
    x = np.asarray(x, dtype=float)
    lp = kkt.node_problem(fixes)
    lp.lb[: gf.k] = x
    lp.ub[: gf.k] = x
    mono = solve_lp(lp)
    total = float(gf.g @ x)
    for bi, (r0, r1, c0, c1) in enumerate(gf.blocks):
        W = gf.W[r0:r1, c0:c1]
        rb, lb_ = r1 - r0, c1 - c0
        A = np.vstack([
            np.hstack([W, np.zeros((rb, rb))]),
            np.hstack([np.zeros((lb_, lb_)), W.T]),
        ])
        rhs = np.concatenate([gf.B[r0:r1] @ x + gf.b[r0:r1], gf.t[c0:c1]])
        senses = ["<="] * rb + ["="] * lb_
        lo = np.concatenate([np.full(lb_, -np.inf), np.full(rb, -np.inf)])
        hi = np.concatenate([np.full(lb_, np.inf), np.zeros(rb)])
        for i, kind in fixes.items():
            if r0 <= i < r1:
                if kind == "slack":
                    senses[i - r0] = "="
                else:
                    lo[lb_ + i - r0] = 0.0
        cost = np.concatenate([gf.h[c0:c1], np.zeros(rb)])
        total += _lp_value(solve_lp(LpProblem(cost, A, rhs, senses, lo, hi)))
    return _lp_value(mono), total


# ---------------------------------------------------------------------------
# Relaxation path


@dataclass
class EpsPath:
    reports: list
    final: SolveReport
    feasible_at_zero: bool
    distances: list


def _uw_problem(kkt: KktSystem, bins: dict, lam=None, eps=None, gap_objective=False) -> LpProblem:
    gf = kkt.form
    k, l, r = gf.k, gf.l, gf.r
    nv = k + l
    keep = [i for i, s in enumerate(kkt.senses) if not (r <= i < r + l)]
    A = kkt.A[keep][:, :nv]
    rhs = kkt.rhs[keep]
    senses = [kkt.senses[i] for i in keep]
    lb, ub = kkt.lb[:nv].copy(), kkt.ub[:nv].copy()
    for j, val in bins.items():
        lb[j] = ub[j] = val
    cost = np.concatenate([gf.g, gf.h])
    if lam is not None:
        # -lam'(B u + b - W w) <= eps
        row = np.concatenate([-(lam @ gf.B), lam @ gf.W])
        const = -(lam @ gf.b)
        if gap_objective:
            cost = row
        else:
            A = np.vstack([A, row[None, :]])
            rhs = np.concatenate([rhs, [eps - const]])
            senses = senses + ["<="]
    return LpProblem(cost, A, rhs, senses, lb, ub)


def _local_descent(kkt: KktSystem, u, w, eps: float, bins: dict, max_iter: int = 100):
    gf = kkt.form
    k = gf.k
    lam = None
    for _ in range(max_iter):
        lam = _multipliers(kkt, u, w)
        if lam is None:
            raise NonConvergent("lower-level dual is infeasible at the current point")
        res = solve_lp(_uw_problem(kkt, bins, lam, eps))
        if res.status == LpStatus.INFEASIBLE:
            res = solve_lp(_uw_problem(kkt, bins, lam, eps, gap_objective=True))
        if not res.optimal:
            raise NonConvergent("local step LP is unbounded")
        u_new, w_new = res.x[:k], res.x[k:]
        old = float(gf.g @ u + gf.h @ w)
        new = float(gf.g @ u_new + gf.h @ w_new)
        moved = float(np.max(np.abs(np.concatenate([u_new - u, w_new - w])), initial=0.0))
        u, w = u_new, w_new
        if moved <= 1e-12 or abs(old - new) <= 1e-12 * max(1.0, abs(old)):
            break
    lam = _multipliers(kkt, u, w)
    return u, w, lam


def solve_eps_path(form: GenForm | KktSystem, schedule: Sequence[float], start=None) -> EpsPath:
    """Follow local solutions of the relaxed KKT systems along ``schedule``.

    Each relaxed problem is solved by alternating two LPs.  The first picks
    lower-level multipliers that minimise the complementarity gap at the
    current point.  The second moves ``(u, w)`` to the best point whose gap,
    measured with those multipliers, stays below ``eps``.  The objective never
    increases along the way.  After the schedule one exact (``eps = 0``)
    restoration step decides ``feasible_at_zero``.
    """
    sched = [float(e) for e in schedule]
    if not sched or any(e < 0 or not math.isfinite(e) for e in sched):
        raise ValueError("eps schedule must be finite and nonnegative")
    if any(b >= a for a, b in zip(sched, sched[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    kkt = form if isinstance(form, KktSystem) else KktSystem(form)
    gf = kkt.form
    k = gf.k
    if start is not None:
        u, w = (np.asarray(a, dtype=float) for a in start)
    else:
        warm = _warm_start(kkt)
        if warm is not None:
            _, u, w = warm
        else:
            root = solve_lp(kkt.node_problem({}))
            if not root.optimal:
                raise NonConvergent(f"no starting point: root relaxation is {root.status.value}")
            u, w = root.x[:k], root.x[k : k + gf.l]
    bins = {j: float(round(u[j])) for j in gf.integer}
    reports, dists = [], []
    prev = np.concatenate([u, w])
    for eps in sched:
        u, w, lam = _local_descent(kkt, u, w, eps, bins)
        cur = np.concatenate([u, w])
        dists.append(float(np.max(np.abs(cur - prev), initial=0.0)))
        prev = cur
        rep = _path_report(kkt, u, w, lam, eps)
        reports.append(rep)
    for a, b in zip(dists[1:], dists[2:]):
        if b > max(a, 1e-6):
            raise NonConvergent(f"iterate distances do not contract: {dists}")
    u0, w0, lam0 = _local_descent(kkt, u, w, 0.0, bins)
    final = _path_report(kkt, u0, w0, lam0, 0.0)
    gap = final.extras["gap"]
    feasible = bool(gap <= RESIDUAL_TOL and final.extras["residual"] <= RESIDUAL_TOL)
    return EpsPath(reports, final, feasible, dists)


def _path_report(kkt: KktSystem, u, w, lam, eps) -> SolveReport:
    gf = kkt.form
    v = lam if lam is not None else np.zeros(gf.r)
    z = np.concatenate([u, w, v])
    slack = gf.B @ u + gf.b - gf.W @ w
    gap = float(np.sum(-v * slack))
    return SolveReport(
        status=SolveStatus.LOCAL_OPTIMAL,
        x=u[: gf.n_x].copy(),
        value=float(gf.g @ u + gf.h @ w),
        u=u.copy(),
        w=w.copy(),
        y=[w[c0:c1].copy() for (_, _, c0, c1) in gf.blocks],
        multipliers=v.copy(),
        method="eps-path",
        extras={"eps": eps, "gap": gap, "residual": _residual(kkt, z)},
    )


# ---------------------------------------------------------------------------
# Grid refinement


def grid_refine(
    objective: Callable[[np.ndarray], float],
    lo,
    hi,
    tol: float = 1e-10,
    max_levels: int = 80,
) -> tuple[np.ndarray, float, int]:
    """Minimise ``objective`` over the box ``[lo, hi]`` (dimension at most 3).

    A uniform grid is refined repeatedly around the incumbent and then polished
    by compass search.  Infeasible points should evaluate to ``inf``.  Ties
    are broken towards the lexicographically smallest point.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = lo.size
    if n > 3:
        raise NoMethod("grid refinement supports at most 3 leader variables")
    first = {1: 201, 2: 41, 3: 15}[n]
    later = {1: 21, 2: 11, 3: 7}[n]
    evals = 0
    cache: dict = {}

    def f(x):
        nonlocal evals
        key = tuple(np.round(x, 15))
        if key not in cache:
            evals += 1
            cache[key] = objective(x)
        return cache[key]

    best_x, best_v = None, math.inf

    def consider(x):
        nonlocal best_x, best_v
        v = f(x)
        if v < best_v or (v == best_v and best_x is not None and tuple(x) < tuple(best_x)):
            best_x, best_v = x, v

    a, b = lo.copy(), hi.copy()
    count = first
    scale = float(np.max(hi - lo, initial=0.0))
    for _ in range(max_levels):
        axes = [np.linspace(a[i], b[i], count) if b[i] > a[i] else np.array([a[i]]) for i in range(n)]
        for pt in itertools.product(*axes):
            consider(np.array(pt))
        if best_x is None:
            break
        step = np.array([(b[i] - a[i]) / (count - 1) if count > 1 else 0.0 for i in range(n)])
        if float(np.max(step)) <= tol * max(1.0, scale):
            break
        a = np.maximum(lo, best_x - 2 * step)
        b = np.minimum(hi, best_x + 2 * step)
        count = later
    if best_x is None or not math.isfinite(best_v):
        return best_x, best_v, evals
    h = max(tol * max(1.0, scale), 1e-12) * 16
    while h >= tol * max(1.0, scale):
        improved = False
        for i in range(n):
            for sgn in (-1.0, 1.0):
                x = best_x.copy()
                x[i] = min(hi[i], max(lo[i], x[i] + sgn * h))
                if f(x) < best_v:
                    best_x, best_v = x, f(x)
                    improved = True
        if not improved:
            h /= 2
    return best_x, best_v, evals


# ---------------------------------------------------------------------------
# Risk models


def leader_box(p: BilevelStochasticProblem) -> tuple[np.ndarray, np.ndarray]:
    return polyhedron_box(p.X, p.n)


def _risk_objective(p: BilevelStochasticProblem, spec: RiskSpec):
    def obj(x):
        if not p.X.contains(x):
            return math.inf
        try:
            return q_risk(p, spec, x)
        except (InducedInfeasible, RiskOverflow):
            return math.inf

    return obj


def solve_risk_model(p: BilevelStochasticProblem, spec: RiskSpec, method: str = "reformulate") -> SolveReport:
    """Minimise the risk of the leader's outcome over ``X``.

    ``reformulate`` builds the equivalent standard bilevel program and solves
    it globally.  Specs without such a program, pessimistic followers and
    scenario counts above ``REFORMULATE_MAX_K`` fall back to ``grid``.  The
    returned value is always re-evaluated directly at the reported decision.
    """
    t0 = time.perf_counter()
    notes = []
    lo, hi = leader_box(p)
    bounded = bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))
    if method not in ("reformulate", "grid"):
        raise ValueError(f"unknown method {method!r}")
    if method == "reformulate":
        try:
            if p.K > REFORMULATE_MAX_K:
                raise UnsupportedSpec(f"{p.K} scenarios exceed the reformulation limit {REFORMULATE_MAX_K}")
            gf = build_table1(p, spec)
        except (UnsupportedSpec, UnboundedBigM) as exc:
            notes.append(f"fell back to grid refinement: {exc}")
            method = "grid"
        else:
            rep = solve_global(gf)
            rep.method = "reformulate"
            if rep.x is not None:
                check = q_risk(p, spec, rep.x)
                rep.extras["q_risk"] = check
                if abs(check - rep.value) > 1e-6 * max(1.0, abs(check)):
                    notes.append("re-evaluated risk differs from the reformulation value")
                    if rep.status == SolveStatus.GLOBAL_OPTIMAL:
                        rep.status = SolveStatus.FEASIBLE
                if not bounded and rep.status == SolveStatus.GLOBAL_OPTIMAL:
                    rep.status = SolveStatus.FEASIBLE
                    notes.append("X is unbounded")
            rep.extras["notes"] = notes
            rep.wall_ms = _ms(t0)
            return rep
    if p.n > 3:
        raise NoMethod("grid refinement needs n <= 3 and no reformulation is available")
    if not bounded:
        raise NoMethod("grid refinement needs a bounded X")
    x, val, evals = grid_refine(_risk_objective(p, spec), lo, hi)
    if x is None or not math.isfinite(val):
        raise NoFeasiblePoint("no grid point of X admits a feasible follower in every scenario")
    sample = eval_outcomes(p, x)
    return SolveReport(
        status=SolveStatus.FEASIBLE,
        x=x,
        value=q_risk(p, spec, x),
        y=list(sample.y),
        method="grid",
        wall_ms=_ms(t0),
        extras={"evaluations": evals, "notes": notes},
    )


# ---------------------------------------------------------------------------
# Directional derivatives


@dataclass
class StationarityReport:
    passes: bool
    derivatives: list  # (direction, D(h1), D(h2), extrapolated)
    descent: np.ndarray | None = None
    slope: float | None = None


def _feasible_directions(p: BilevelStochasticProblem, x0, h) -> list:
    dirs = []
    for i in range(p.n):
        for sgn in (1.0, -1.0):
            v = np.zeros(p.n)
            v[i] = sgn
            if p.X.contains(x0 + h * v, tol=0.0):
                dirs.append(v)
    return dirs


def stationarity_check(
    p: BilevelStochasticProblem,
    spec: RiskSpec,
    x0,
    directions=None,
    steps: tuple = (1e-4, 1e-5),
    tol: float = 1e-6,
) -> StationarityReport:
    """One-sided directional derivatives of the risk objective at ``x0``.

    Each derivative is estimated with two forward steps and combined by
    Richardson extrapolation.  A feasible direction with derivative below
    ``-tol`` certifies that ``x0`` is not a local minimiser.
    """
    x0 = np.asarray(x0, dtype=float)
    h1, h2 = steps
    if directions is None:
        directions = _feasible_directions(p, x0, h1)
    base = q_risk(p, spec, x0)
    rows = []
    worst = None
    for v in directions:
        v = np.asarray(v, dtype=float)
        d1 = (q_risk(p, spec, x0 + h1 * v) - base) / h1
        d2 = (q_risk(p, spec, x0 + h2 * v) - base) / h2
        expected = max(abs(d1), 1.0) * h1
        if abs(d1 - d2) > 10 * expected + 1e-7:
            raise NumericalInconsistency(
                f"difference quotients {d1:.6g} and {d2:.6g} disagree along {v.tolist()}"
            )
        ratio = h1 / h2
        rich = (ratio * d2 - d1) / (ratio - 1.0)
        rows.append((v, d1, d2, rich))
        if rich < -tol and (worst is None or rich < worst[1]):
            worst = (v, rich)
    if worst is None:
        return StationarityReport(True, rows)
    return StationarityReport(False, rows, worst[0], worst[1])
