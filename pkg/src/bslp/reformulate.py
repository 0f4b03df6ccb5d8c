"""Deterministic equivalents of risk-averse and dominance-constrained models.

Every model with finitely many scenarios becomes one standard bilevel linear
program (:class:`GenForm`).  The upper level owns ``u = (x, auxiliaries)``.
The lower level owns ``w = (y_1, ..., y_K)``, one follower copy per scenario:

    min_u  g'u + h'w   s.t.  u in U,  Cu u + Cw w <= e,  w in Psi(u)
    Psi(u) = argmin_w { t'w : W w <= B u + b }

``W`` is block diagonal in the scenarios.  Constraints linking auxiliaries to
outcomes (excess variables, epigraph and indicator rows) act on the follower's
*chosen* response, so they sit in the coupling block ``Cu u + Cw w <= e`` and
never shrink the follower's feasible set.  Binary indicators are upper-level
variables listed in ``integer``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lp import LpProblem, LpStatus, solve_lp
from .lower import eval_outcomes
from .model import (
    BenchmarkSpec,
    BilevelStochasticProblem,
    DiscreteDistribution,
    DominanceOrder,
    Polyhedron,
    RiskKind,
    RiskSpec,
    Sense,
)
from .risk import value_at_risk

BIGM_MARGIN = 1.0


class UnsupportedSpec(ValueError):
    """The risk functional has no equivalent standard bilevel linear program."""


class UnboundedBigM(ValueError):
    """No finite big-M constant exists because outcomes are unbounded on X."""


@dataclass
class GenForm:
    g: np.ndarray
    h: np.ndarray
    t: np.ndarray
    W: np.ndarray
    B: np.ndarray
    b: np.ndarray
    U: Polyhedron
    integer: tuple = ()
    Cu: np.ndarray | None = None
    Cw: np.ndarray | None = None
    e: np.ndarray | None = None
    n_x: int | None = None
    u_labels: list = field(default_factory=list)
    w_labels: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    lexicographic: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    completion: Callable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        k, l = self.g.size, self.h.size
        self.W = np.asarray(self.W, dtype=float).reshape(-1, l)
        r = self.W.shape[0]
        self.B = np.asarray(self.B, dtype=float).reshape(r, k)
        self.b = np.asarray(self.b, dtype=float).reshape(r)
        if self.t.size != l:
            raise ValueError("t and h must have the same length")
        if self.U.G.shape[0] and self.U.dim != k:
            raise ValueError("U must live in the upper-level space")
        if self.Cu is None:
            self.Cu = np.zeros((0, k))
            self.Cw = np.zeros((0, l))
            self.e = np.zeros(0)
        self.Cu = np.asarray(self.Cu, dtype=float).reshape(-1, k)
        self.Cw = np.asarray(self.Cw, dtype=float).reshape(-1, l)
        self.e = np.asarray(self.e, dtype=float).reshape(-1)
        if not (self.Cu.shape[0] == self.Cw.shape[0] == self.e.size):
            raise ValueError("coupling rows are inconsistent")
        self.integer = tuple(int(i) for i in self.integer)
        if self.n_x is None:
            self.n_x = k
        if not self.u_labels:
            self.u_labels = [f"u{i + 1}" for i in range(k)]
        if not self.w_labels:
            self.w_labels = [f"w{i + 1}" for i in range(l)]
        if not self.blocks:
            self.blocks = [(0, r, 0, l)]

    @property
    def k(self) -> int:
        return self.g.size

    @property
    def l(self) -> int:
        return self.h.size

    @property
    def r(self) -> int:
        return self.b.size

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "l": self.l,
            "r": self.r,
            "g": self.g.tolist(),
            "h": self.h.tolist(),
            "t": self.t.tolist(),
            "W": self.W.tolist(),
            "B": self.B.tolist(),
            "b": self.b.tolist(),
            "U": {"G": self.U.G.tolist(), "h": self.U.h.tolist()},
            "integer": list(self.integer),
            "coupling": {"Cu": self.Cu.tolist(), "Cw": self.Cw.tolist(), "e": self.e.tolist()},
            "n_x": self.n_x,
            "u_labels": list(self.u_labels),
            "w_labels": list(self.w_labels),
            "blocks": [list(b) for b in self.blocks],
            "lexicographic": None if self.lexicographic is None else self.lexicographic.tolist(),
            "meta": self.meta,
        }


@dataclass
class BigM:
    value: float
    derivation: list  # per-scenario LP bounds on the outcome


# ---------------------------------------------------------------------------
# Bounds


def polyhedron_box(P: Polyhedron, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise bounds of ``P`` by LP; infinite where unbounded."""
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    free = np.full(n, -np.inf)
    G = P.G.reshape(-1, n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        for sign in (1.0, -1.0):
            res = solve_lp(LpProblem(sign * e, G, P.h, "<=", lb=free))
            if res.status == LpStatus.INFEASIBLE:
                raise ValueError("polyhedron is empty")
            if res.optimal:
                if sign > 0:
                    lo[i] = res.value
                else:
                    hi[i] = -res.value
    return lo, hi


def _outcome_lp(p: BilevelStochasticProblem, z: np.ndarray, sign: float):
    n, m = p.n, p.m
    low = p.lower
    G = np.hstack([p.X.G.reshape(-1, n), np.zeros((p.X.G.shape[0], m))])
    M = np.vstack([G, np.hstack([-low.T, low.A])])
    rhs = np.concatenate([p.X.h, low.b0 + z])
    obj = sign * np.concatenate([p.c, low.q])
    return solve_lp(LpProblem(obj, M, rhs, "<=", lb=np.full(n + m, -np.inf)))


def _bilevel_bound(p: BilevelStochasticProblem, k: int, sign: float) -> float:
    """``min`` (sign=+1) or ``max`` (sign=-1) of ``c'x + q'y`` over x in X, y in Psi."""
    from .solve import SolveStatus, solve_global

    single = p.with_scenarios(DiscreteDistribution(p.scenarios.atoms[k : k + 1], [1.0]))
    gf = _skeleton(single, [], [], [])
    gf.g[: p.n] = sign * p.c
    gf.h[:] = sign * p.lower.q
    rep = solve_global(gf)
    if rep.status != SolveStatus.GLOBAL_OPTIMAL:
        raise UnboundedBigM(f"outcome is unbounded in scenario {k}")
    return sign * rep.value


def outcome_bounds(p: BilevelStochasticProblem) -> tuple[float, float, list]:
    """Bounds ``[lo, hi]`` on every scenario outcome over ``X``.

    Each bound comes from an LP over ``(x, y)`` with ``y`` merely feasible,
    which brackets the bilevel range.  If that LP is unbounded, the bilevel
    problem itself is solved to global optimality instead.
    """
    los, his, rows = [], [], []
    for k, z in enumerate(p.scenarios.atoms):
        res_hi = _outcome_lp(p, z, -1.0)
        if res_hi.optimal:
            hi = -res_hi.value
            how_hi = "lp"
        elif res_hi.status == LpStatus.UNBOUNDED:
            hi = _bilevel_bound(p, k, -1.0)
            how_hi = "bilevel"
        else:
            raise ValueError(f"scenario {k} has no feasible (x, y)")
        res_lo = _outcome_lp(p, z, 1.0)
        if res_lo.optimal:
            lo = res_lo.value
            how_lo = "lp"
        else:
            lo = _bilevel_bound(p, k, 1.0)
            how_lo = "bilevel"
        los.append(lo)
        his.append(hi)
        rows.append({"scenario": k, "min": lo, "max": hi, "min_by": how_lo, "max_by": how_hi})
    return min(los), max(his), rows


def big_m(p: BilevelStochasticProblem, eta: float) -> BigM:
    """Constant ``M`` with ``c'x + q'y - eta < M`` for all x in X and follower responses."""
    _require_bounded(p)
    _, hi, rows = outcome_bounds(p)
    return BigM(hi - eta + BIGM_MARGIN, rows)


def _require_bounded(p: BilevelStochasticProblem) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = polyhedron_box(p.X, p.n)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise UnboundedBigM("X must be bounded for indicator reformulations")
    return lo, hi


# ---------------------------------------------------------------------------
# Risk-model equivalents


def _skeleton(p: BilevelStochasticProblem, aux_labels, aux_lo, aux_hi) -> GenForm:
    """Scenario-expanded GenForm with objective zero and no coupling rows."""
    n, m, s, K = p.n, p.m, p.s, p.K
    low = p.lower
    a = len(aux_labels)
    k = n + a
    l = m * K
    W = np.kron(np.eye(K), low.A)
    B = np.zeros((s * K, k))
    B[:, :n] = np.tile(low.T, (K, 1))
    b = (low.b0 + p.scenarios.atoms).reshape(-1)
    Gx = p.X.G.reshape(-1, n)
    rows = [np.hstack([Gx, np.zeros((Gx.shape[0], a))])]
    rhs = [p.X.h]
    for j, (lo, hi) in enumerate(zip(aux_lo, aux_hi)):
        e = np.zeros(k)
        e[n + j] = 1.0
        if np.isfinite(lo):
            rows.append(-e[None, :])
            rhs.append([-lo])
        if np.isfinite(hi):
            rows.append(e[None, :])
            rhs.append([hi])
    U = Polyhedron(np.vstack(rows), np.concatenate([np.asarray(r, dtype=float) for r in rhs]))
    blocks = [(kk * s, (kk + 1) * s, kk * m, (kk + 1) * m) for kk in range(K)]
    w_labels = [f"y[{kk + 1}]_{j + 1}" for kk in range(K) for j in range(m)]
    u_labels = [f"x{i + 1}" for i in range(n)] + list(aux_labels)
    return GenForm(
        g=np.zeros(k),
        h=np.zeros(l),
        t=np.tile(low.d, K),
        W=W,
        B=B,
        b=b,
        U=U,
        n_x=n,
        u_labels=u_labels,
        w_labels=w_labels,
        blocks=blocks,
    )


class _Coupling:
    """Accumulates rows ``cu'u + cw'w <= e``."""

    def __init__(self, p: BilevelStochasticProblem, k: int):
        self.p = p
        self.k = k
        self.l = p.m * p.K
        self.Cu, self.Cw, self.e = [], [], []

    def outcome(self, kk: int, scale: float = 1.0):
        """Coefficients of ``scale * (c'x + q'y_k)``."""
        cu = np.zeros(self.k)
        cu[: self.p.n] = scale * self.p.c
        cw = np.zeros(self.l)
        m = self.p.m
        cw[kk * m : (kk + 1) * m] = scale * self.p.lower.q
        return cu, cw

    def add(self, cu, cw, e):
        self.Cu.append(cu)
        self.Cw.append(cw)
        self.e.append(float(e))

    def install(self, gf: GenForm):
        if self.e:
            gf.Cu = np.vstack(self.Cu)
            gf.Cw = np.vstack(self.Cw)
            gf.e = np.array(self.e)


def _table1_supported(spec: RiskSpec):
    k = spec.kind
    if k in (RiskKind.ENTROPIC, RiskKind.MEAN_RISK):
        raise UnsupportedSpec(f"no equivalent bilevel linear program for {spec.label()}")
    if k in (RiskKind.EXPECTED_EXCESS, RiskKind.SEMIDEVIATION) and spec.p != 1.0:
        raise UnsupportedSpec(f"order p = {spec.p} is not linear-representable")


def build_table1(p: BilevelStochasticProblem, spec: RiskSpec) -> GenForm:
    """Standard bilevel program equivalent to ``min_x R[f(x, Z)]`` over ``X``.

    Auxiliary upper-level variables by risk functional:

    * expected excess: ``v_k >= max(f_k - eta, 0)``
    * semideviation: ``v_k >= max(q'y_k - sum_j pi_j q'y_j, 0)``
    * CVaR: ``eta`` and ``v_k >= max(f_k - eta, 0)``
    * worst case: epigraph variable ``tau >= f_k``
    * excess probability: binaries ``theta_k`` with ``f_k - eta <= M theta_k``
    * VaR: ``eta`` and binaries with ``f_k - eta <= M (1 - theta_k)`` and
      ``sum pi_k theta_k >= alpha``; ties in ``theta`` are settled by a second
      lexicographic stage maximising ``sum pi_k theta_k`` at the optimal ``eta``.
    """
    _table1_supported(spec)
    if p.sense != Sense.OPTIMISTIC:
        raise UnsupportedSpec("reformulation requires the optimistic follower selection")
    n, K = p.n, p.K
    pi = np.asarray(p.scenarios.probs)
    kind = spec.kind
    meta = {"spec": spec.label(), "K": K, "n": n, "m": p.m, "s": p.s}

    if kind == RiskKind.EXPECTATION:
        gf = _skeleton(p, [], [], [])
        gf.g[:n] = p.c
        gf.h[:] = np.concatenate([pk * p.lower.q for pk in pi])
        gf.meta = meta
        gf.completion = _completion(p, spec)
        return gf

    if kind in (RiskKind.EXPECTED_EXCESS, RiskKind.SEMIDEVIATION):
        labels = [f"v{kk + 1}" for kk in range(K)]
        gf = _skeleton(p, labels, [0.0] * K, [np.inf] * K)
        cpl = _Coupling(p, gf.k)
        if kind == RiskKind.EXPECTED_EXCESS:
            gf.g[n:] = pi
            for kk in range(K):
                cu, cw = cpl.outcome(kk)
                cu[n + kk] = -1.0
                cpl.add(cu, cw, spec.eta)
        else:
            gf.g[:n] = p.c
            gf.h[:] = np.concatenate([pk * p.lower.q for pk in pi])
            gf.g[n:] = spec.rho * pi
            mean_w = gf.h.copy()
            for kk in range(K):
                _, cw = cpl.outcome(kk)
                cu = np.zeros(gf.k)
                cu[n + kk] = -1.0
                cpl.add(cu, cw - mean_w, 0.0)
        cpl.install(gf)
        gf.meta = meta
        gf.completion = _completion(p, spec)
        return gf

    if kind in (RiskKind.CVAR, RiskKind.WORST_CASE):
        lo, hi, _ = outcome_bounds(p)
        if kind == RiskKind.CVAR:
            labels = ["eta"] + [f"v{kk + 1}" for kk in range(K)]
            gf = _skeleton(p, labels, [lo] + [0.0] * K, [hi] + [np.inf] * K)
            gf.g[n] = 1.0
            gf.g[n + 1 :] = pi / (1.0 - spec.alpha)
        else:
            gf = _skeleton(p, ["tau"], [lo], [hi])
            gf.g[n] = 1.0
        cpl = _Coupling(p, gf.k)
        for kk in range(K):
            cu, cw = cpl.outcome(kk)
            cu[n] = -1.0
            if kind == RiskKind.CVAR:
                cu[n + 1 + kk] = -1.0
            cpl.add(cu, cw, 0.0)
        cpl.install(gf)
        gf.meta = meta
        gf.completion = _completion(p, spec)
        return gf

    if kind == RiskKind.EXCESS_PROBABILITY:
        M = big_m(p, spec.eta)
        labels = [f"theta{kk + 1}" for kk in range(K)]
        gf = _skeleton(p, labels, [0.0] * K, [1.0] * K)
        gf.g[n:] = pi
        gf.integer = tuple(range(n, n + K))
        cpl = _Coupling(p, gf.k)
        for kk in range(K):
            cu, cw = cpl.outcome(kk)
            cu[n + kk] = -M.value
            cpl.add(cu, cw, spec.eta)
        cpl.install(gf)
        gf.meta = dict(meta, big_m=M.value, big_m_derivation=M.derivation)
        gf.completion = _completion(p, spec)
        return gf

    # value at risk
    _require_bounded(p)
    lo, hi, rows = outcome_bounds(p)
    M = hi - lo + BIGM_MARGIN
    labels = ["eta"] + [f"theta{kk + 1}" for kk in range(K)]
    gf = _skeleton(p, labels, [lo] + [0.0] * K, [hi] + [1.0] * K)
    gf.g[n] = 1.0
    gf.integer = tuple(range(n + 1, n + 1 + K))
    cpl = _Coupling(p, gf.k)
    for kk in range(K):
        cu, cw = cpl.outcome(kk)
        cu[n] = -1.0
        cu[n + 1 + kk] = M
        cpl.add(cu, cw, M)
    cpl.install(gf)
    level = np.zeros(gf.k)
    level[n + 1 :] = -pi
    gf.U = gf.U.intersect(Polyhedron(level[None, :], [-spec.alpha]))
    gf.lexicographic = level
    gf.meta = dict(meta, big_m=M, big_m_derivation=rows)
    gf.completion = _completion(p, spec)
    return gf


def _completion(p: BilevelStochasticProblem, spec: RiskSpec):
    """Map a leader decision to a full feasible ``(u, w)`` of the risk-model equivalent."""
    n, K = p.n, p.K
    pi = np.asarray(p.scenarios.probs)

    def complete(x):
        sample = eval_outcomes(p, x)
        f = sample.outcomes
        w = sample.y.reshape(-1)
        k = spec.kind
        x = np.asarray(x, dtype=float)
        if k == RiskKind.EXPECTATION:
            aux = []
        elif k == RiskKind.EXPECTED_EXCESS:
            aux = np.maximum(f - spec.eta, 0.0)
        elif k == RiskKind.SEMIDEVIATION:
            qy = sample.y @ p.lower.q
            aux = np.maximum(qy - float(pi @ qy), 0.0)
        elif k == RiskKind.CVAR:
            eta = value_at_risk(f, pi, spec.alpha)
            aux = np.concatenate([[eta], np.maximum(f - eta, 0.0)])
        elif k == RiskKind.WORST_CASE:
            aux = [float(np.max(f))]
        elif k == RiskKind.EXCESS_PROBABILITY:
            aux = (f - spec.eta > 0).astype(float)
        else:
            eta = value_at_risk(f, pi, spec.alpha)
            aux = np.concatenate([[eta], (f <= eta).astype(float)])
        return np.concatenate([x, np.asarray(aux, dtype=float)]), w

    return complete


# ---------------------------------------------------------------------------
# Probabilistic and dominance-constrained equivalents


def dominance_thresholds(bench: DiscreteDistribution, order: DominanceOrder):
    """Benchmark atoms ``a_j`` with their right-hand sides.

    First order: ``P[f > a_j] <= 1 - P[b <= a_j]``.
    Second order: ``E[(f - a_j)^+] <= E[(b - a_j)^+]``.
    """
    a = np.unique(bench.values)
    v, pb = bench.values, bench.probs
    if DominanceOrder(order) == DominanceOrder.FIRST:
        delta = np.array([max(0.0, 1.0 - float(np.sum(pb[v <= aj]))) for aj in a])
    else:
        delta = np.array([float(np.sum(pb * np.maximum(v - aj, 0.0))) for aj in a])
    return a, delta


def build_table2(
    p: BilevelStochasticProblem,
    g,
    bench: BenchmarkSpec | None = None,
    levels: list | None = None,
) -> GenForm:
    """Equivalent program for ``min g'x`` under dominance or probabilistic constraints.

    Exactly one of ``bench`` (first- or second-order dominance over a discrete
    benchmark) or ``levels`` (pairs ``(beta_j, p_j)`` meaning
    ``P[f(x, Z) <= beta_j] >= p_j``) must be given.  Follower copies are shared
    across levels because each level constraint is monotone in the outcome.
    """
    if (bench is None) == (levels is None):
        raise ValueError("give either a benchmark or probabilistic levels")
    if p.sense != Sense.OPTIMISTIC:
        raise UnsupportedSpec("reformulation requires the optimistic follower selection")
    n, K = p.n, p.K
    g = np.asarray(g, dtype=float).reshape(-1)
    if g.size != n:
        raise ValueError(f"g has length {g.size}, expected {n}")
    _require_bounded(p)
    lo, hi, rows = outcome_bounds(p)
    pi = np.asarray(p.scenarios.probs)
    if levels is not None:
        kind = "probabilistic"
        a = np.array([float(bj) for bj, _ in levels])
        delta = np.array([float(pj) for _, pj in levels])
        binary = True
    else:
        kind = "fsd" if bench.order == DominanceOrder.FIRST else "ssd"
        a, delta = dominance_thresholds(bench.dist, bench.order)
        binary = kind == "fsd"
    L = a.size
    name = "theta" if binary else "v"
    labels = [f"{name}{kk + 1}_{j + 1}" for j in range(L) for kk in range(K)]
    aux_hi = [1.0 if binary else np.inf] * (K * L)
    gf = _skeleton(p, labels, [0.0] * (K * L), aux_hi)
    gf.g[:n] = g
    if binary:
        gf.integer = tuple(range(n, n + K * L))
    cpl = _Coupling(p, gf.k)
    big = []
    level_rows, level_rhs = [], []
    for j in range(L):
        Mj = hi - a[j] + BIGM_MARGIN
        big.append(Mj)
        sel = np.zeros(gf.k)
        for kk in range(K):
            col = n + j * K + kk
            cu, cw = cpl.outcome(kk)
            if kind == "probabilistic":
                # theta = 1 forces f_k <= beta_j
                cu[col] = Mj
                cpl.add(cu, cw, a[j] + Mj)
                sel[col] = -pi[kk]
            elif kind == "fsd":
                # theta = 0 forces f_k <= a_j
                cu[col] = -Mj
                cpl.add(cu, cw, a[j])
                sel[col] = pi[kk]
            else:
                cu[col] = -1.0
                cpl.add(cu, cw, a[j])
                sel[col] = pi[kk]
        level_rows.append(sel)
        level_rhs.append(-delta[j] if kind == "probabilistic" else delta[j])
    cpl.install(gf)
    gf.U = gf.U.intersect(Polyhedron(np.vstack(level_rows), level_rhs))
    gf.meta = {
        "model": kind,
        "K": K,
        "n": n,
        "levels": a.tolist(),
        "thresholds": delta.tolist(),
        "big_m": big if binary else None,
        "outcome_range": [lo, hi],
        "big_m_derivation": rows,
    }
    return gf


# ---------------------------------------------------------------------------
# KKT single-level system


@dataclass
class KktSystem:
    """Single-level system for a GenForm with complementarity relaxed to ``eps``.

    Variables are ``z = (u, w, v)``.  Constraints: ``W w <= B u + b``,
    ``W'v = t``, ``v <= 0``, ``u in U``, coupling rows, and one complementarity
    pair ``v_i (W w - B u - b)_i`` per lower-level row.  For ``eps > 0`` the
    aggregate ``-v'(B u + b - W w) <= eps`` replaces exact complementarity; each
    term is nonnegative, so the aggregate also caps every single pair.
    """

    form: GenForm
    eps: float = 0.0

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        gf = self.form
        k, l, r = gf.k, gf.l, gf.r
        self.n_vars = k + l + r
        lb = np.full(self.n_vars, -np.inf)
        ub = np.full(self.n_vars, np.inf)
        ub[k + l :] = 0.0
        rows, rhs = [], []
        for a_row, h_i in zip(gf.U.G.reshape(-1, k), gf.U.h):
            nz = np.flatnonzero(a_row)
            if nz.size == 1:
                j = int(nz[0])
                bound = h_i / a_row[j]
                if a_row[j] > 0:
                    ub[j] = min(ub[j], bound)
                else:
                    lb[j] = max(lb[j], bound)
            else:
                rows.append(np.concatenate([a_row, np.zeros(l + r)]))
                rhs.append(h_i)
        for j in gf.integer:
            lb[j] = max(lb[j], 0.0)
            ub[j] = min(ub[j], 1.0)
        self.lb, self.ub = lb, ub
        primal = np.hstack([-gf.B, gf.W, np.zeros((r, r))])
        dual = np.hstack([np.zeros((l, k + l)), gf.W.T])
        coupling = np.hstack([gf.Cu, gf.Cw, np.zeros((gf.e.size, r))])
        upper = np.array(rows).reshape(-1, self.n_vars)
        self.A = np.vstack([primal, dual, upper, coupling])
        self.rhs = np.concatenate([gf.b, gf.t, np.array(rhs, dtype=float), gf.e])
        self.senses = ["<="] * r + ["="] * l + ["<="] * (upper.shape[0] + gf.e.size)
        self.cost = np.concatenate([gf.g, gf.h, np.zeros(r)])

    @property
    def pairs(self) -> int:
        return self.form.r

    def split(self, z):
        k, l = self.form.k, self.form.l
        return z[:k], z[k : k + l], z[k + l :]

    def slacks(self, z) -> np.ndarray:
        u, w, _ = self.split(z)
        gf = self.form
        return gf.B @ u + gf.b - gf.W @ w

    def products(self, z) -> np.ndarray:
        """``-v_i * slack_i`` per pair (nonnegative on the feasible set)."""
        _, _, v = self.split(z)
        return -v * self.slacks(z)

    def node_problem(self, fixes: dict, binaries: dict | None = None, extra=None, cost=None) -> LpProblem:
        """LP relaxation with pairs fixed to ``"slack"`` (row tight) or ``"dual"`` (v_i = 0)."""
        k, l = self.form.k, self.form.l
        senses = list(self.senses)
        lb, ub = self.lb.copy(), self.ub.copy()
        for i, kind in fixes.items():
            if kind == "slack":
                senses[i] = "="
            else:
                lb[k + l + i] = 0.0
        for j, val in (binaries or {}).items():
            lb[j] = ub[j] = float(val)
        A, rhs = self.A, self.rhs
        if extra is not None:
            A = np.vstack([A, extra[0]])
            rhs = np.concatenate([rhs, extra[1]])
            senses += ["<="] * extra[0].shape[0]
        return LpProblem(self.cost if cost is None else cost, A, rhs, senses, lb, ub)

    def to_dict(self) -> dict:
        gf = self.form
        return {
            "eps": self.eps,
            "variables": list(gf.u_labels) + list(gf.w_labels) + [f"v{i + 1}" for i in range(gf.r)],
            "objective": self.cost.tolist(),
            "A": self.A.tolist(),
            "rhs": self.rhs.tolist(),
            "senses": self.senses,
            "lb": [None if not np.isfinite(x) else x for x in self.lb],
            "ub": [None if not np.isfinite(x) else x for x in self.ub],
            "complementarity": [[i, gf.k + gf.l + i] for i in range(gf.r)],
            "integer": list(gf.integer),
        }


def kkt_reformulate(gf: GenForm, eps: float = 0.0) -> KktSystem:
    return KktSystem(gf, float(eps))


# ---------------------------------------------------------------------------
# Human-readable output


def _term(coef: float, name: str, first: bool) -> str:
    if coef == 0:
        return ""
    sign = "-" if coef < 0 else ("" if first else "+")
    mag = abs(coef)
    body = name if mag == 1 else f"{mag:.12g}*{name}"
    return f"{sign} {body}".strip() if first else f" {sign} {body}"


def _expr(coefs, names) -> str:
    out = ""
    for c, nme in zip(coefs, names):
        piece = _term(float(c), nme, not out)
        out += piece
    return out or "0"


def listing(gf: GenForm) -> str:
    """Algebraic listing of a GenForm, one constraint per line."""
    U, Wn = gf.u_labels, gf.w_labels
    lines = [f"minimize   {_expr(np.concatenate([gf.g, gf.h]), U + Wn)}"]
    lines.append("upper level:")
    for row, rhs in zip(gf.U.G.reshape(-1, gf.k), gf.U.h):
        lines.append(f"  {_expr(row, U)} <= {rhs + 0.0:.12g}")
    for cu, cw, e in zip(gf.Cu, gf.Cw, gf.e):
        lines.append(f"  {_expr(np.concatenate([cu, cw]), U + Wn)} <= {e + 0.0:.12g}")
    if gf.integer:
        lines.append("  binary: " + ", ".join(U[i] for i in gf.integer))
    lines.append("lower level (one block per scenario):")
    for bi, (r0, r1, c0, c1) in enumerate(gf.blocks):
        lines.append(f"  block {bi + 1}: minimize {_expr(gf.t[c0:c1], Wn[c0:c1])}")
        for i in range(r0, r1):
            const = gf.b[i]
            if np.any(gf.B[i]):
                tail = f" + {const:.12g}" if const >= 0 else f" - {-const:.12g}"
                rhs = _expr(gf.B[i], U) + tail
            else:
                rhs = f"{const + 0.0:.12g}"
            lines.append(f"    {_expr(gf.W[i, c0:c1], Wn[c0:c1])} <= {rhs}")
    if gf.lexicographic is not None:
        lines.append(f"then, at the optimal value: minimize {_expr(gf.lexicographic, U)}")
    return "\n".join(lines) + "\n"


def genform_json(gf: GenForm, kkt: KktSystem | None = None) -> str:
    doc = {"genform": gf.to_dict()}
    if kkt is not None:
        doc["kkt"] = kkt.to_dict()
    return json.dumps(doc, indent=1, sort_keys=False)
