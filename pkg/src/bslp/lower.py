"""Follower responses, scenario outcomes and the induced constraint set.

The follower's problem for leader decision ``x`` and scenario ``z`` is the LP
``min d'y s.t. A y <= T x + b0 + z``.  Among its optimal solutions the leader
gets the one minimising (optimistic) or maximising (pessimistic) ``q'y``.  The
two stages are solved as consecutive LPs.  The second stage adds
``d'y <= v* + 1e-9 max(1, |v*|)`` so rounding cannot empty it; the returned
point is then recomputed from the optimal basis with the exact value ``v*``.

Optimal bases do not depend on the right-hand side, so one basis usually
serves many scenarios.  :class:`ScenarioEvaluator` caches bases per problem
and evaluates every scenario a cached basis covers in one vectorised pass.
Only uncovered scenarios trigger fresh LP solves.  The arithmetic is written
as explicit loops over columns, so one scenario gives bit-identical results
whether it is evaluated alone or inside a batch.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .lp import LpProblem, LpStatus, NumericalBreakdown, solve_lp
from .model import BilevelStochasticProblem, DiscreteDistribution, Polyhedron, Sense

STAGE2_TOL = 1e-9
FEAS_TOL = 1e-9
FM_LIMIT = 12


class LowerLevelError(Exception):
    """Base class for failures of the follower problem."""


class InfeasibleLowerLevel(LowerLevelError):
    """The follower has no feasible point, so ``f(x, z) = +inf``."""


class UnboundedSelection(LowerLevelError):
    """``f(x, z) = -inf``: the follower's or the leader's selection LP is unbounded."""

    def __init__(self, message: str, stage: int):
        super().__init__(message)
        self.stage = stage


class InducedInfeasible(LowerLevelError):
    """``x`` lies outside the induced set; ``scenarios`` lists 0-based indices."""

    def __init__(self, scenarios):
        self.scenarios = [int(k) for k in scenarios]
        super().__init__(f"follower infeasible in scenarios {self.scenarios}")


class SizeLimitError(LowerLevelError):
    """Elimination would be too large.  ``membership`` still decides ``x in X ∩ P_Z``."""

    def __init__(self, message: str, X: Polyhedron, membership: Callable[[np.ndarray], bool]):
        super().__init__(message)
        self.X = X
        self.membership = membership


@dataclass
class FollowerResponse:
    value: float            # leader outcome c'x + q'y
    y: np.ndarray
    follower_value: float   # d'y


@dataclass
class OutcomeSample:
    """Per-scenario follower responses for one leader decision."""

    x: np.ndarray
    outcomes: np.ndarray          # c'x + q'y_k
    follower_values: np.ndarray   # d'y_k
    y: np.ndarray                 # (K, m)
    probs: np.ndarray

    @property
    def distribution(self) -> DiscreteDistribution:
        return DiscreteDistribution(self.outcomes.reshape(-1, 1), self.probs)


def _combine(coef: np.ndarray, cols: list) -> np.ndarray:
    """``out[:, j] = sum_i coef[j, i] * cols[i]`` with a fixed summation order."""
    K = cols[0].shape[0]
    out = np.empty((K, coef.shape[0]))
    for j in range(coef.shape[0]):
        acc = coef[j, 0] * cols[0]
        for i in range(1, len(cols)):
            acc = acc + coef[j, i] * cols[i]
        out[:, j] = acc
    return out


def _dot_rows(Y: np.ndarray, v: np.ndarray) -> np.ndarray:
    acc = v[0] * Y[:, 0]
    for j in range(1, v.size):
        acc = acc + v[j] * Y[:, j]
    return acc


def _stage2_rhs(v: np.ndarray) -> np.ndarray:
    return v + STAGE2_TOL * np.maximum(1.0, np.abs(v))


@dataclass
class _Basis:
    rows1: np.ndarray
    inv1: np.ndarray
    unique: bool
    rows2: np.ndarray | None = None
    inv2: np.ndarray | None = None


class ScenarioEvaluator:
    """Batch evaluation of follower responses with a cache of optimal bases."""

    def __init__(self, p: BilevelStochasticProblem):
        low = p.lower
        self.A = low.A
        self.d = low.d
        self.q = low.q
        self.T = low.T
        self.b0 = low.b0
        self.c = p.c
        self.sign = 1.0 if p.sense == Sense.OPTIMISTIC else -1.0
        self.M2 = np.vstack([low.A, low.d[None, :]])
        self.bases: list[_Basis] = []
        self.lp_solves = 0
        self._lock = threading.Lock()

    # -- basis helpers -------------------------------------------------
    def _invert(self, M: np.ndarray, rows: np.ndarray) -> np.ndarray | None:
        m = self.A.shape[1]
        if rows.size != m:
            return None
        sub = M[rows]
        if np.linalg.cond(sub) > 1e12:
            return None
        return np.linalg.inv(sub)

    def _stage1(self, basis: _Basis, R: np.ndarray):
        Y = _combine(basis.inv1, [R[:, i] for i in basis.rows1])
        return Y, _dot_rows(Y, self.d)

    def _stage2(self, basis: _Basis, R: np.ndarray, v: np.ndarray) -> np.ndarray:
        s = self.A.shape[0]
        cols = [v if i == s else R[:, i] for i in basis.rows2]
        return _combine(basis.inv2, cols)

    def _feasible(self, Y: np.ndarray, R: np.ndarray) -> np.ndarray:
        lhs = np.stack([_dot_rows(Y, row) for row in self.A], axis=1)
        return np.all(lhs <= R + FEAS_TOL * np.maximum(1.0, np.abs(R)), axis=1)

    def _apply(self, basis: _Basis, R: np.ndarray):
        """Return ``(covered mask, Y, v)`` for the scenarios in ``R``."""
        Y, v = self._stage1(basis, R)
        ok = self._feasible(Y, R)
        if not basis.unique:
            Y2 = self._stage2(basis, R, v)
            ok &= self._feasible(Y2, R)
            ok &= _dot_rows(Y2, self.d) <= _stage2_rhs(v)
            Y = Y2
        return ok, Y, v

    # -- LP path -------------------------------------------------------
    def _solve_one(self, r: np.ndarray):
        """Solve both stages by LP.  Returns ``(y, v, basis or None)``."""
        A, d = self.A, self.d
        m = A.shape[1]
        free = np.full(m, -np.inf)
        self.lp_solves += 1
        res1 = solve_lp(LpProblem(d, A, r, "<=", lb=free))
        if res1.status == LpStatus.INFEASIBLE:
            raise InfeasibleLowerLevel("follower constraints have no feasible point")
        if res1.status == LpStatus.UNBOUNDED:
            raise UnboundedSelection("follower objective is unbounded below", stage=1)
        rows1 = np.flatnonzero(res1.active)
        inv1 = self._invert(A, rows1)
        basis = None
        R = r[None, :]
        if inv1 is not None:
            lam = inv1.T @ d
            scale = max(1.0, float(np.max(np.abs(d))))
            basis = _Basis(rows1, inv1, bool(np.all(lam < -1e-9 * scale)))
            Y, v = self._stage1(basis, R)
            if not self._feasible(Y, R)[0]:
                basis = None
        if basis is None:
            y1 = res1.x
            v = np.array([float(d @ y1)])
        if basis is not None and basis.unique:
            return Y[0], v[0], basis
        A2 = self.M2
        r2 = np.concatenate([r, _stage2_rhs(v)])
        self.lp_solves += 1
        res2 = solve_lp(LpProblem(self.sign * self.q, A2, r2, "<=", lb=free))
        if res2.status == LpStatus.UNBOUNDED:
            raise UnboundedSelection("leader cost is unbounded on the follower's optimal set", stage=2)
        if res2.status == LpStatus.INFEASIBLE:  # pragma: no cover - guarded by the tolerance
            raise NumericalBreakdown("selection LP lost feasibility")
        if basis is not None:
            rows2 = np.flatnonzero(res2.active)
            inv2 = self._invert(A2, rows2)
            if inv2 is not None:
                basis.rows2, basis.inv2 = rows2, inv2
                ok, Y2, _ = self._apply(basis, R)
                if ok[0]:
                    return Y2[0], v[0], basis
        return res2.x, v[0], None

    # -- public --------------------------------------------------------
    def evaluate(self, x, Z) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[int]]:
        """Evaluate scenarios ``Z`` (K x s) at ``x``.

        Returns ``(outcomes, follower values, Y, infeasible indices)``; entries
        for infeasible scenarios are NaN.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        K = Z.shape[0]
        m = self.A.shape[1]
        R = Z + (self.T @ x + self.b0)
        Y = np.full((K, m), np.nan)
        V = np.full(K, np.nan)
        todo = np.ones(K, dtype=bool)
        infeasible = []

        def sweep(basis: _Basis):
            idx = np.flatnonzero(todo)
            if idx.size == 0:
                return
            ok, Yb, vb = self._apply(basis, R[idx])
            hit = idx[ok]
            Y[hit] = Yb[ok]
            V[hit] = vb[ok]
            todo[hit] = False

        with self._lock:
            cached = list(self.bases)
        for basis in cached:
            sweep(basis)
        while todo.any():
            k = int(np.flatnonzero(todo)[0])
            try:
                y, v, basis = self._solve_one(R[k])
            except InfeasibleLowerLevel:
                infeasible.append(k)
                todo[k] = False
                continue
            if basis is None:
                Y[k] = y
                V[k] = v
                todo[k] = False
                continue
            with self._lock:
                self.bases.append(basis)
            sweep(basis)
            if todo[k]:  # pragma: no cover - the fresh basis covers its own scenario
                Y[k] = y
                V[k] = v
                todo[k] = False
        cx = 0.0
        for j in range(x.size):
            cx = cx + self.c[j] * x[j]
        F = cx + _dot_rows(Y, self.q)
        return F, V, Y, infeasible


_EVAL_LOCK = threading.Lock()


def evaluator_for(p: BilevelStochasticProblem) -> ScenarioEvaluator:
    """The basis cache attached to ``p`` (created on first use)."""
    with _EVAL_LOCK:
        ev = p.__dict__.get("_evaluator")
        if ev is None:
            ev = ScenarioEvaluator(p)
            object.__setattr__(p, "_evaluator", ev)
        return ev


def eval_f(p: BilevelStochasticProblem, x, z) -> FollowerResponse:
    """Leader outcome ``f(x, z)`` with the follower's selected response."""
    x = np.asarray(x, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(1, -1)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
        raise ValueError("x and z must be finite")
    F, V, Y, bad = evaluator_for(p).evaluate(x, z)
    if bad:
        raise InfeasibleLowerLevel("follower constraints have no feasible point")
    return FollowerResponse(float(F[0]), Y[0].copy(), float(V[0]))


def eval_outcomes(p: BilevelStochasticProblem, x) -> OutcomeSample:
    """Follower responses for every scenario; raises :class:`InducedInfeasible`."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    F, V, Y, bad = evaluator_for(p).evaluate(x, p.scenarios.atoms)
    if bad:
        raise InducedInfeasible(bad)
    return OutcomeSample(x, F, V, Y, np.asarray(p.scenarios.probs))


def in_induced_set(p: BilevelStochasticProblem, x) -> bool:
    """True when the follower is feasible in every scenario at ``x``."""
    low = p.lower
    m = low.m
    base = low.T @ np.asarray(x, dtype=float) + low.b0
    for z in p.scenarios.atoms:
        res = solve_lp(LpProblem(np.zeros(m), low.A, base + z, "<=", lb=np.full(m, -np.inf)))
        if res.status == LpStatus.INFEASIBLE:
            return False
    return True


# ---------------------------------------------------------------------------
# Fourier-Motzkin projection


def _normalize_rows(M: np.ndarray, r: np.ndarray):
    scale = np.max(np.abs(M), axis=1) if M.shape[1] else np.zeros(M.shape[0])
    scale = np.where(scale > 0, scale, 1.0)
    M = M / scale[:, None]
    r = r / scale
    key = np.round(np.hstack([M, r[:, None]]), 12)
    _, keep = np.unique(key, axis=0, return_index=True)
    keep.sort()
    return M[keep], r[keep]


def _eliminate(M: np.ndarray, r: np.ndarray, col: int, tol: float = 1e-12):
    a = M[:, col]
    pos = np.flatnonzero(a > tol)
    neg = np.flatnonzero(a < -tol)
    zero = np.flatnonzero(np.abs(a) <= tol)
    rows = [M[zero]]
    rhs = [r[zero]]
    for i in pos:
        for j in neg:
            wi, wj = 1.0 / a[i], -1.0 / a[j]
            rows.append((wi * M[i] + wj * M[j])[None, :])
            rhs.append(np.array([wi * r[i] + wj * r[j]]))
    M = np.vstack(rows)
    r = np.concatenate(rhs)
    M[:, col] = 0.0
    return _normalize_rows(M, r)


def _prune(G: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    """Remove rows implied by the others, scanning from the last row.

    Returns ``None`` when the system is empty.
    """
    n = G.shape[1]
    free = np.full(n, -np.inf)
    if G.shape[0] and solve_lp(LpProblem(np.zeros(n), G, h, "<=", lb=free)).status == LpStatus.INFEASIBLE:
        return None
    keep = np.ones(G.shape[0], dtype=bool)
    for i in range(G.shape[0] - 1, -1, -1):
        keep[i] = False
        others = np.flatnonzero(keep)
        if others.size == 0:
            keep[i] = True
            continue
        res = solve_lp(LpProblem(-G[i], G[others], h[others], "<=", lb=free))
        if not (res.optimal and -res.value <= h[i] + 1e-9 * max(1.0, abs(h[i]))):
            keep[i] = True
    return G[keep], h[keep]


def induced_polyhedron(p: BilevelStochasticProblem) -> Polyhedron:
    """``X ∩ P_Z`` as an explicit H-representation.

    ``P_Z`` is the set of ``x`` for which the follower is feasible in every
    scenario.  Each scenario's system ``A y - T x <= b0 + z_k`` is projected onto
    ``x`` by Fourier-Motzkin elimination of ``y``.  Redundant rows are then
    removed by LP.  An empty result is returned as the single row ``0 <= -1``.
    Raises :class:`SizeLimitError` when ``n + m`` exceeds the elimination cap.
    """
    n, m = p.n, p.m
    low = p.lower
    if n + m > FM_LIMIT:
        raise SizeLimitError(
            f"n + m = {n + m} exceeds the elimination limit {FM_LIMIT}",
            p.X,
            lambda x: p.X.contains(x) and in_induced_set(p, x),
        )
    rows, rhs = [], []
    for z in p.scenarios.atoms:
        M = np.hstack([-low.T, low.A])
        r = low.b0 + z
        M, r = _normalize_rows(M, r)
        for col in range(n, n + m):
            M, r = _eliminate(M, r, col)
            if M.shape[0] > 200:
                pruned = _prune(M, r)
                if pruned is None:
                    return _empty(n)
                M, r = pruned
        rows.append(M[:, :n])
        rhs.append(r)
    Gz = np.vstack(rows)
    hz = np.concatenate(rhs)
    trivial = np.all(np.abs(Gz) <= 1e-12, axis=1)
    if np.any(hz[trivial] < -1e-9):
        return _empty(n)
    Gz, hz = Gz[~trivial], hz[~trivial]
    Gx = p.X.G.reshape(-1, n)
    G = np.vstack([Gx, Gz])
    h = np.concatenate([p.X.h, hz])
    if G.shape[0] == 0:
        return Polyhedron(np.zeros((0, n)), np.zeros(0))
    pruned = _prune(G, h)
    if pruned is None:
        return _empty(n)
    return Polyhedron(*pruned)


def _empty(n: int) -> Polyhedron:
    return Polyhedron(np.zeros((1, n)), np.array([-1.0]))
