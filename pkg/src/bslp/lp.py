"""Dense two-phase primal simplex with duals and certificates.

Every LP the package builds goes through :func:`solve_lp`.  Problems are
converted to the standard form ``min c'x, Ax = b, x >= 0, b >= 0`` by shifting
finite lower bounds, reflecting upper-bounded-only variables and splitting free
ones.  Results are reported in the caller's variables:

* ``Optimal``: primal point, row duals (``<= 0`` for ``<=`` rows, ``>= 0`` for
  ``>=`` rows under minimisation) and reduced costs.
* ``Infeasible``: a Farkas certificate, see :class:`FarkasCertificate`.
* ``Unbounded``: a direction ``r`` with ``c'r < 0`` that keeps every row and
  bound satisfied.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-11
BLAND_AFTER = 1000

LE, EQ, GE = "<=", "=", ">="


class NumericalBreakdown(RuntimeError):
    """The simplex method hit its pivot limit or a singular basis."""


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(eq=False)
class LpProblem:
    """``min c'x`` subject to ``A[i] x (sense[i]) b[i]`` and ``lb <= x <= ub``."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    senses: Sequence[str]
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        A = np.asarray(self.A, dtype=float)
        self.A = A.reshape(0, n) if A.size == 0 else np.atleast_2d(A)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if isinstance(self.senses, str):
            self.senses = [self.senses] * self.A.shape[0]
        self.senses = tuple(self.senses)
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1).copy()
        if self.A.shape != (self.b.size, n):
            raise ValueError(f"constraint matrix has shape {self.A.shape}, expected ({self.b.size}, {n})")
        if len(self.senses) != self.b.size:
            raise ValueError("one row sense per constraint is required")
        if any(s not in (LE, EQ, GE) for s in self.senses):
            raise ValueError(f"row senses must be one of {LE!r}, {EQ!r}, {GE!r}")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bounds must have one entry per variable")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)) or np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise ValueError("invalid variable bounds")

    @property
    def n(self) -> int:
        return self.c.size

    @classmethod
    def from_blocks(cls, c, le=None, eq=None, ge=None, lb=None, ub=None) -> "LpProblem":
        c = np.asarray(c, dtype=float).reshape(-1)
        n = c.size
        mats, rhs, senses = [], [], []
        for block, sense in ((le, LE), (eq, EQ), (ge, GE)):
            if block is None:
                continue
            M, v = block
            M = np.asarray(M, dtype=float).reshape(-1, n)
            v = np.asarray(v, dtype=float).reshape(-1)
            mats.append(M)
            rhs.append(v)
            senses += [sense] * v.size
        A = np.vstack(mats) if mats else np.zeros((0, n))
        b = np.concatenate(rhs) if rhs else np.zeros(0)
        return cls(c, A, b, senses, lb, ub)


@dataclass
class FarkasCertificate:
    """Multipliers proving ``{x : rows, bounds}`` is empty.

    ``rows[i]`` is ``>= 0`` for ``<=`` rows, ``<= 0`` for ``>=`` rows and free
    for equalities; ``lower`` and ``upper`` are nonnegative multipliers of
    ``x >= lb`` and ``x <= ub``.  Validity means
    ``rows'A - lower + upper = 0`` and ``rows'b - lower'lb + upper'ub < 0``.
    """

    rows: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def residual(self, p: LpProblem) -> tuple[float, float]:
        """Return ``(max |combined row|, combined right-hand side)``."""
        comb = p.A.T @ self.rows - self.lower + self.upper
        rhs = float(self.rows @ p.b)
        rhs -= float(np.sum(self.lower[self.lower != 0] * p.lb[self.lower != 0]))
        rhs += float(np.sum(self.upper[self.upper != 0] * p.ub[self.upper != 0]))
        return float(np.max(np.abs(comb), initial=0.0)), rhs


@dataclass
class LpResult:
    status: LpStatus
    x: np.ndarray | None = None
    value: float = float("nan")
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    basis: tuple = ()
    farkas: FarkasCertificate | None = None
    ray: np.ndarray | None = None
    iterations: int = 0
    dual_value: float = float("nan")
    active: np.ndarray | None = None  # rows whose slack is nonbasic (equalities always)

    @property
    def optimal(self) -> bool:
        return self.status == LpStatus.OPTIMAL


@dataclass
class _StdForm:
    tab: np.ndarray          # initial tableau [A_std | artificials | b]
    cost: np.ndarray         # phase-2 cost on std columns (artificials 0)
    n_struct: int
    n_cols: int              # std columns excluding artificials
    n_art: int
    col_var: np.ndarray
    col_sign: np.ndarray
    shift: np.ndarray
    row_flip: np.ndarray     # +-1 per std row
    orig_row: np.ndarray     # original row index per std row, or -1
    bound_var: np.ndarray    # variable index for upper-bound rows, or -1
    slack_col: np.ndarray    # slack column per original row, or -1 for equalities
    basis: list = field(default_factory=list)


def _standard_form(p: LpProblem) -> _StdForm:
    n = p.n
    col_var, col_sign = [], []
    shift = np.zeros(n)
    ub_rows = []
    for j in range(n):
        lo, hi = p.lb[j], p.ub[j]
        if np.isfinite(lo):
            shift[j] = lo
            col_var.append(j)
            col_sign.append(1.0)
            if np.isfinite(hi):
                ub_rows.append((len(col_var) - 1, j, hi - lo))
        elif np.isfinite(hi):
            shift[j] = hi
            col_var.append(j)
            col_sign.append(-1.0)
        else:
            col_var += [j, j]
            col_sign += [1.0, -1.0]
    col_var = np.array(col_var, dtype=int)
    col_sign = np.array(col_sign)
    ns = col_var.size
    r0 = p.A.shape[0]
    ineq = [i for i, s in enumerate(p.senses) if s != EQ]
    n_slack = len(ineq) + len(ub_rows)
    R = r0 + len(ub_rows)
    N = ns + n_slack
    A = np.zeros((R, N))
    b = np.zeros(R)
    if r0:
        A[:r0, :ns] = p.A[:, col_var] * col_sign
        b[:r0] = p.b - p.A @ shift
    slack_sign = np.zeros(R)
    slack_col = np.full(r0, -1, dtype=int)
    k = ns
    for i in ineq:
        slack_col[i] = k
        sgn = 1.0 if p.senses[i] == LE else -1.0
        A[i, k] = sgn
        slack_sign[i] = sgn
        k += 1
    bound_var = np.full(R, -1, dtype=int)
    for t, (col, j, width) in enumerate(ub_rows):
        r = r0 + t
        A[r, col] = 1.0
        A[r, k] = 1.0
        slack_sign[r] = 1.0
        b[r] = width
        bound_var[r] = j
        k += 1
    flip = np.where(b < 0, -1.0, 1.0)
    A *= flip[:, None]
    b *= flip
    # Rows whose slack enters with +1 can start basic; the rest need artificials.
    basis = [-1] * R
    k = ns
    for i in ineq:
        if slack_sign[i] * flip[i] > 0:
            basis[i] = k
        k += 1
    for t in range(len(ub_rows)):
        r = r0 + t
        if flip[r] > 0:
            basis[r] = k
        k += 1
    need_art = [r for r in range(R) if basis[r] < 0]
    n_art = len(need_art)
    art = np.zeros((R, n_art))
    for a, r in enumerate(need_art):
        art[r, a] = 1.0
        basis[r] = N + a
    tab = np.hstack([A, art, b[:, None]])
    cost = np.zeros(N + n_art)
    cost[:ns] = p.c[col_var] * col_sign
    orig_row = np.full(R, -1, dtype=int)
    orig_row[:r0] = np.arange(r0)
    return _StdForm(tab, cost, ns, N, n_art, col_var, col_sign, shift, flip, orig_row, bound_var, slack_col, basis)


def _pivot(tab: np.ndarray, i: int, j: int) -> None:
    tab[i] /= tab[i, j]
    col = tab[:, j].copy()
    col[i] = 0.0
    tab -= np.outer(col, tab[i])
    tab[:, j] = 0.0
    tab[i, j] = 1.0


def _simplex(tab: np.ndarray, basis: list, cost: np.ndarray, allowed: np.ndarray, max_iter: int):
    """Run primal simplex in place.  Returns ``(status, entering, iterations)``."""
    degenerate = 0
    bland = False
    it = 0
    body = tab[:, :-1]
    while True:
        if it >= max_iter:
            raise NumericalBreakdown(f"simplex exceeded {max_iter} pivots")
        rc = cost - cost[basis] @ body
        cand = np.flatnonzero((rc < -OPT_TOL) & allowed)
        if cand.size == 0:
            return "optimal", -1, it
        if bland:
            j = int(cand[0])
        else:
            j = int(cand[np.argmin(rc[cand])])
        col = body[:, j]
        rows = np.flatnonzero(col > PIVOT_TOL)
        if rows.size == 0:
            return "unbounded", j, it
        ratios = tab[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * (1.0 + abs(best))]
        i = int(min(ties, key=lambda r: basis[r]))
        if best <= FEAS_TOL:
            degenerate += 1
            if degenerate > BLAND_AFTER:
                bland = True
        _pivot(tab, i, j)
        basis[i] = j
        rhs = tab[:, -1]
        rhs[np.abs(rhs) < 1e-13] = 0.0
        it += 1


def _basis_duals(std: _StdForm, basis: list, cost: np.ndarray) -> np.ndarray:
    B = std.tab[:, :-1][:, basis]
    try:
        return np.linalg.solve(B.T, cost[basis])
    except np.linalg.LinAlgError as exc:
        raise NumericalBreakdown("singular basis matrix") from exc


def _to_original(std: _StdForm, xs: np.ndarray, n: int, with_shift: bool = True) -> np.ndarray:
    x = std.shift.copy() if with_shift else np.zeros(n)
    np.add.at(x, std.col_var, std.col_sign * xs[: std.n_struct])
    return x


def solve_lp(p: LpProblem, max_iter: int | None = None) -> LpResult:
    """Solve ``p`` with the two-phase simplex method.

    Pivoting uses the most negative reduced cost, switching to Bland's rule
    after ``BLAND_AFTER`` degenerate pivots.  Ratio-test ties go to the basic
    variable with the lowest index, so identical inputs give identical pivot
    sequences.
    """
    n = p.n
    if np.any(p.lb > p.ub):
        j = int(np.flatnonzero(p.lb > p.ub)[0])
        lower = np.zeros(n)
        upper = np.zeros(n)
        lower[j] = upper[j] = 1.0
        return LpResult(LpStatus.INFEASIBLE, farkas=FarkasCertificate(np.zeros(p.b.size), lower, upper))
    std = _standard_form(p)
    R, Ncols = std.tab.shape[0], std.n_cols
    total = Ncols + std.n_art
    if max_iter is None:
        max_iter = 50 * (R + total) + 2 * BLAND_AFTER
    tab = std.tab.copy()
    basis = list(std.basis)
    iters = 0

    if std.n_art:
        cost1 = np.zeros(total)
        cost1[Ncols:] = 1.0
        status, _, it = _simplex(tab, basis, cost1, np.ones(total, dtype=bool), max_iter)
        iters += it
        infeas = float(cost1[basis] @ tab[:, -1])
        if infeas > FEAS_TOL * max(1.0, float(np.max(np.abs(std.tab[:, -1]), initial=0.0))):
            y = _basis_duals(std, basis, cost1)
            return LpResult(LpStatus.INFEASIBLE, farkas=_farkas(std, p, y), iterations=iters)
        # Drive artificials out of the basis; rows with no eligible pivot are redundant.
        for i in range(R):
            if basis[i] >= Ncols:
                row = tab[i, :Ncols]
                nz = np.flatnonzero(np.abs(row) > 1e-9)
                if nz.size:
                    j = int(nz[np.argmax(np.abs(row[nz]))])
                    _pivot(tab, i, j)
                    basis[i] = j
        tab[:, -1] = np.maximum(tab[:, -1], 0.0)

    allowed = np.zeros(total, dtype=bool)
    allowed[:Ncols] = True
    status, enter, it = _simplex(tab, basis, std.cost, allowed, max_iter)
    iters += it
    if status == "unbounded":
        d = np.zeros(total)
        d[enter] = 1.0
        d[basis] -= tab[:, enter]
        ray = _to_original(std, d, n, with_shift=False)
        return LpResult(LpStatus.UNBOUNDED, ray=ray, basis=tuple(basis), iterations=iters)

    xs = np.zeros(total)
    xs[basis] = tab[:, -1]
    x = _to_original(std, xs, n)
    y = _basis_duals(std, basis, std.cost)
    duals = np.zeros(p.b.size)
    mask = std.orig_row >= 0
    duals[std.orig_row[mask]] = (std.row_flip * y)[mask]
    rc = p.c - p.A.T @ duals
    value = float(p.c @ x)
    in_basis = np.zeros(total, dtype=bool)
    in_basis[basis] = True
    active = np.array([sc < 0 or not in_basis[sc] for sc in std.slack_col], dtype=bool)
    return LpResult(
        LpStatus.OPTIMAL,
        x=x,
        value=value,
        duals=duals,
        reduced_costs=rc,
        basis=tuple(basis),
        iterations=iters,
        dual_value=_dual_objective(p, duals, rc),
        active=active,
    )


def _dual_objective(p: LpProblem, duals: np.ndarray, rc: np.ndarray) -> float:
    val = float(duals @ p.b)
    scale = max(1.0, float(np.max(np.abs(p.c), initial=0.0)))
    for j, r in enumerate(rc):
        if abs(r) <= OPT_TOL * scale:
            continue
        bound = p.lb[j] if r > 0 else p.ub[j]
        if not np.isfinite(bound):
            return float("-inf")
        val += r * bound
    return val


def _farkas(std: _StdForm, p: LpProblem, y: np.ndarray) -> FarkasCertificate:
    w = -y
    sigma = std.tab[:, : std.n_cols].T @ w
    n = p.n
    rows = np.zeros(p.b.size)
    lower = np.zeros(n)
    upper = np.zeros(n)
    wf = w * std.row_flip
    mask = std.orig_row >= 0
    rows[std.orig_row[mask]] = wf[mask]
    bmask = std.bound_var >= 0
    np.add.at(upper, std.bound_var[bmask], wf[bmask])
    for k in range(std.n_struct):
        j = std.col_var[k]
        if np.isfinite(p.lb[j]):
            lower[j] += sigma[k]
        elif np.isfinite(p.ub[j]):
            upper[j] += sigma[k]
    # Clean sign noise from floating point.
    for i, s in enumerate(p.senses):
        if s == LE:
            rows[i] = max(rows[i], 0.0)
        elif s == GE:
            rows[i] = min(rows[i], 0.0)
    lower = np.maximum(lower, 0.0)
    upper = np.maximum(upper, 0.0)
    scale = max(float(np.max(np.abs(rows), initial=0.0)), float(np.max(lower, initial=0.0)), float(np.max(upper, initial=0.0)))
    if scale > 0:
        rows, lower, upper = rows / scale, lower / scale, upper / scale
    return FarkasCertificate(rows, lower, upper)


def check_farkas(p: LpProblem, cert: FarkasCertificate, tol: float = 1e-9) -> bool:
    """True when ``cert`` proves infeasibility of ``p`` within ``tol``."""
    for i, s in enumerate(p.senses):
        if s == LE and cert.rows[i] < -tol:
            return False
        if s == GE and cert.rows[i] > tol:
            return False
    if np.any(cert.lower < -tol) or np.any(cert.upper < -tol):
        return False
    if np.any((cert.lower > 0) & ~np.isfinite(p.lb)) or np.any((cert.upper > 0) & ~np.isfinite(p.ub)):
        return False
    comb, rhs = cert.residual(p)
    scale = 1.0 + float(np.max(np.abs(p.A), initial=0.0))
    return comb <= tol * scale and rhs < 0.0


def check_ray(p: LpProblem, ray: np.ndarray, tol: float = 1e-9) -> bool:
    """True when ``ray`` is an improving direction of the feasible set."""
    Ar = p.A @ ray
    for i, s in enumerate(p.senses):
        if s == LE and Ar[i] > tol:
            return False
        if s == GE and Ar[i] < -tol:
            return False
        if s == EQ and abs(Ar[i]) > tol:
            return False
    if np.any(ray[np.isfinite(p.lb)] < -tol) or np.any(ray[np.isfinite(p.ub)] > tol):
        return False
    return float(p.c @ ray) < -tol


def kkt_residuals(p: LpProblem, res: LpResult) -> dict:
    """Primal feasibility, dual sign, complementarity and duality-gap residuals."""
    x, y, rc = res.x, res.duals, res.reduced_costs
    Ax = p.A @ x
    primal = 0.0
    dual_sign = 0.0
    comp = 0.0
    for i, s in enumerate(p.senses):
        slack = p.b[i] - Ax[i]
        if s == LE:
            primal = max(primal, -slack)
            dual_sign = max(dual_sign, y[i])
            comp = max(comp, abs(y[i] * slack))
        elif s == GE:
            primal = max(primal, slack)
            dual_sign = max(dual_sign, -y[i])
            comp = max(comp, abs(y[i] * slack))
        else:
            primal = max(primal, abs(slack))
    lo_viol = np.where(np.isfinite(p.lb), p.lb - x, 0.0)
    up_viol = np.where(np.isfinite(p.ub), x - p.ub, 0.0)
    primal = max(primal, float(np.max(lo_viol, initial=0.0)), float(np.max(up_viol, initial=0.0)))
    for j, r in enumerate(rc):
        dist = min(
            x[j] - p.lb[j] if np.isfinite(p.lb[j]) else np.inf,
            p.ub[j] - x[j] if np.isfinite(p.ub[j]) else np.inf,
        )
        if np.isfinite(dist):
            comp = max(comp, abs(r) * dist)
    gap = abs(res.value - res.dual_value) / max(1.0, abs(res.value))
    return {"primal": primal, "dual_sign": dual_sign, "complementarity": comp, "gap": gap}


# ---------------------------------------------------------------------------
# Certificates used by the bilevel model


@dataclass
class RecourseCheck:
    complete: bool
    witness: np.ndarray | None = None


def gordan_complete_recourse(A) -> RecourseCheck:
    """Decide whether ``A y <= r`` is solvable for every right-hand side.

    By Gordan's alternative this holds iff ``u = 0`` is the only nonnegative
    solution of ``A'u = 0``.  The witness of failure is normalised to sum 1.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    s, m = A.shape
    lp = LpProblem.from_blocks(
        np.zeros(s),
        eq=(np.vstack([A.T, np.ones((1, s))]), np.concatenate([np.zeros(m), [1.0]])),
    )
    res = solve_lp(lp)
    if res.status == LpStatus.INFEASIBLE:
        return RecourseCheck(True)
    u = np.maximum(res.x, 0.0)
    return RecourseCheck(False, u / u.sum())


@dataclass
class DomainCheck:
    """Outcome of the three-part test for ``dom f`` being nonempty.

    ``failed`` is ``None`` when all conditions hold, otherwise ``"a"`` (no
    feasible follower problem), ``"b"`` (follower problem unbounded) or ``"c"``
    (leader cost unbounded on the follower's optimal set).
    """

    nonempty: bool
    failed: str | None = None
    reason: str = ""
    x: np.ndarray | None = None
    z: np.ndarray | None = None
    y: np.ndarray | None = None
    u: np.ndarray | None = None


def _support_affine_hull(atoms: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    base = atoms[0]
    diffs = atoms[1:] - base
    if diffs.size == 0:
        return base, np.zeros((atoms.shape[1], 0))
    U, S, _ = np.linalg.svd(diffs.T, full_matrices=False)
    rank = int(np.sum(S > tol * max(1.0, S[0] if S.size else 0.0)))
    return base, U[:, :rank]


def check_dom_f(p) -> DomainCheck:
    """Check the three conditions characterising ``dom f != {}``.

    The parameter ``z`` ranges over the affine hull of the scenario atoms, so
    right-hand-side coordinates that never vary stay deterministic.  Condition
    (c) is tested at the witness of (a); the recession cone of the follower's
    optimal set does not depend on the right-hand side, so one point decides.
    """
    from .lower import InfeasibleLowerLevel, UnboundedSelection, eval_f

    low = p.lower
    n, m = p.n, p.m
    base, D = _support_affine_hull(p.scenarios.atoms)
    r = D.shape[1]
    # (a) exists (x, y, t) with A y - T x - D t <= b0 + base
    M = np.hstack([-low.T, low.A, -D])
    lp_a = LpProblem.from_blocks(
        np.zeros(n + m + r), le=(M, low.b0 + base), lb=np.full(n + m + r, -np.inf)
    )
    res_a = solve_lp(lp_a)
    if res_a.status == LpStatus.INFEASIBLE:
        return DomainCheck(False, "a", "follower constraints are infeasible for every (x, z)")
    x = res_a.x[:n]
    z = base + D @ res_a.x[n + m:]
    # (b) exists u <= 0 with A'u = d
    lp_b = LpProblem.from_blocks(
        np.zeros(low.s), eq=(low.A.T, low.d), lb=np.full(low.s, -np.inf), ub=np.zeros(low.s)
    )
    res_b = solve_lp(lp_b)
    if res_b.status == LpStatus.INFEASIBLE:
        return DomainCheck(False, "b", "no u <= 0 solves A'u = d: follower objective unbounded", x=x, z=z)
    u = res_b.x
    try:
        ev = eval_f(p, x, z)
    except UnboundedSelection:
        return DomainCheck(False, "c", "leader cost unbounded on the follower's optimal set", x=x, z=z, u=u)
    except InfeasibleLowerLevel as exc:  # pragma: no cover - excluded by (a) and (b)
        return DomainCheck(False, "a", str(exc), x=x, z=z, u=u)
    return DomainCheck(True, None, "", x=x, z=z, y=ev.y, u=u)
