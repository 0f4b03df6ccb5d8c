"""Worked example, sampling, stability experiments and Lipschitz estimates.

The worked example ("E1") has one leader variable ``x in [1, 6]`` and a
follower who maximises ``y`` subject to

    y >= 1,   y <= x + 2 + z1,   y <= -x + 8.5 + z2,

with ``(z1, z2)`` uniform on ``[-1/2, 1/2]^2`` and leader outcome ``y``.  The
expected outcome is piecewise polynomial in ``x`` with breakpoints 2.75,
3.25 and 3.75.  Its global minimiser over ``[1, 6]`` is ``x = 6``.

Scenario vectors are ordered like the follower's rows, so the random part is
``(0, z1, z2)``: the first row ``y >= 1`` carries no randomness.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .model import (
    BilevelStochasticProblem,
    DiscreteDistribution,
    LowerLevel,
    Polyhedron,
    RiskKind,
    RiskSpec,
)

BREAKPOINTS = (2.75, 3.25, 3.75)
E1_LO, E1_HI = 1.0, 6.0


# ---------------------------------------------------------------------------
# Worked example


def e1_problem(scenarios: DiscreteDistribution | None = None) -> BilevelStochasticProblem:
    """The worked example; by default with the symmetric two-point discretisation."""
    if scenarios is None:
        scenarios = DiscreteDistribution([[0.0, -0.5, -0.5], [0.0, 0.5, 0.5]], [0.5, 0.5])
    lower = LowerLevel(
        A=[[-1.0], [1.0], [1.0]],
        T=[[0.0], [1.0], [-1.0]],
        b0=[-1.0, 2.0, 8.5],
        d=[-1.0],
        q=[1.0],
    )
    return BilevelStochasticProblem(
        c=[0.0], lower=lower, X=Polyhedron.box([E1_LO], [E1_HI]), scenarios=scenarios
    )


def _piece(x: float) -> int:
    for i, b in enumerate(BREAKPOINTS):
        if x <= b:
            return i
    return 3


def e1_piece_value(i: int, x: float) -> float:
    if i == 0:
        return x + 2.0
    if i == 1:
        return -(4.0 / 3.0) * x**3 + 11.0 * x**2 - (117.0 / 4.0) * x + 1427.0 / 48.0
    if i == 2:
        return (4.0 / 3.0) * x**3 - 15.0 * x**2 + (221.0 / 4.0) * x - 989.0 / 16.0
    return -x + 8.5


def e1_piece_slope(i: int, x: float) -> float:
    if i == 0:
        return 1.0
    if i == 1:
        return -4.0 * x**2 + 22.0 * x - 117.0 / 4.0
    if i == 2:
        return 4.0 * x**2 - 30.0 * x + 221.0 / 4.0
    return -1.0


def e1_piece_exact(i: int, x: Fraction) -> Fraction:
    """Exact rational evaluation of piece ``i``."""
    F = Fraction
    if i == 0:
        return x + 2
    if i == 1:
        return -F(4, 3) * x**3 + 11 * x**2 - F(117, 4) * x + F(1427, 48)
    if i == 2:
        return F(4, 3) * x**3 - 15 * x**2 + F(221, 4) * x - F(989, 16)
    return -x + F(17, 2)


def oracle_e1(x: float) -> float:
    """Expected outcome of the worked example at ``x`` in ``[1, 6]``."""
    x = float(x)
    if not E1_LO <= x <= E1_HI:
        raise ValueError(f"x = {x} lies outside [1, 6]")
    return e1_piece_value(_piece(x), x)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _gauss(a: float, b: float):
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * _GL_NODES, half * _GL_WEIGHTS


def quadrature_e1(x: float) -> float:
    """Expected outcome by tensor Gauss-Legendre quadrature (64 x 64 per region).

    The integrand ``min(x + 2 + z1, -x + 8.5 + z2)`` switches branch on the
    line ``z2 = z1 - (6.5 - 2x)``.  The outer ``z1`` range is split where that
    line meets the square's edges and the inner ``z2`` range at the line.
    Every region is then smooth (linear).
    """
    a = x + 2.0
    b = -x + 8.5
    shift = b - a
    cuts = sorted({-0.5, 0.5, *[c for c in (shift - 0.5, shift + 0.5) if -0.5 < c < 0.5]})
    total = 0.0
    for lo, hi in zip(cuts, cuts[1:]):
        z1s, w1s = _gauss(lo, hi)
        for z1, w1 in zip(z1s, w1s):
            split = min(0.5, max(-0.5, z1 - shift))
            inner = 0.0
            if split > -0.5:  # z2 below the line: second branch is smaller
                z2s, w2s = _gauss(-0.5, split)
                inner += float(np.sum(w2s * (b + z2s)))
            if split < 0.5:
                z2s, w2s = _gauss(split, 0.5)
                inner += float(np.sum(w2s * (a + z1 + 0 * z2s)))
            total += w1 * inner
    return total


# ---------------------------------------------------------------------------
# Reproducible random numbers


_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, start: int, count: int) -> np.ndarray:
    """Outputs ``start .. start+count-1`` of the SplitMix64 stream for ``seed``.

    Output ``i`` is ``mix(seed + (i + 1) * 0x9E3779B97F4A7C15 mod 2^64)`` with
    the standard SplitMix64 finaliser, so any block can be generated directly.
    """
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed % 2**64) + idx * _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
    return z


def uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """Doubles in ``[0, 1)``: the top 53 bits of each output times ``2^-53``."""
    return (splitmix64(seed, start, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class UniformBox:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))


@dataclass(frozen=True)
class FiniteSupport:
    dist: DiscreteDistribution


def sample_empirical(family, N: int, seed: int) -> DiscreteDistribution:
    """``N`` equally weighted atoms drawn from ``family``.

    Atom ``i`` of a ``d``-dimensional box uses stream outputs ``i*d .. i*d+d-1``.
    Finite supports are sampled by inverting the cumulative distribution.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if isinstance(family, UniformBox):
        lo = np.asarray(family.lo, dtype=float)
        hi = np.asarray(family.hi, dtype=float)
        d = lo.size
        u = uniforms(seed, 0, N * d).reshape(N, d)
        atoms = lo + (hi - lo) * u
    elif isinstance(family, FiniteSupport):
        dist = family.dist
        cum = np.cumsum(dist.probs)
        cum[-1] = 1.0
        u = uniforms(seed, 0, N)
        idx = np.minimum(np.searchsorted(cum, u, side="right"), dist.size - 1)
        atoms = dist.atoms[idx]
    else:
        raise TypeError(f"unknown sampling family {family!r}")
    return DiscreteDistribution(atoms, np.full(N, 1.0 / N))


E1_FAMILY = UniformBox((0.0, -0.5, -0.5), (0.0, 0.5, 0.5))


# ---------------------------------------------------------------------------
# Stability


CSV_COLUMNS = ("N", "seed", "value", "error", "x_star", "wall_ms")


def _fmt(v) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return ";".join(_fmt(x) for x in np.asarray(v, dtype=float).reshape(-1))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_csv(rows: Sequence[dict], out=None, columns: Sequence[str] = CSV_COLUMNS) -> str:
    """Rows as CSV with 17 significant digits; also written to ``out`` if given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    text = buf.getvalue()
    if out is not None:
        if hasattr(out, "write"):
            out.write(text)
        else:
            with open(out, "w", newline="") as fh:
                fh.write(text)
    return text


def e1_reference_value(window: tuple = (E1_LO, E1_HI)) -> tuple[float, float]:
    """Minimum of the exact expected outcome over ``window ∩ [1, 6]``."""
    from .solve import grid_refine

    lo = max(E1_LO, window[0])
    hi = min(E1_HI, window[1])
    x, v, _ = grid_refine(lambda x: oracle_e1(float(x[0])), [lo], [hi])
    return float(v), float(x[0])


def stability_experiment(
    template: BilevelStochasticProblem,
    spec: RiskSpec,
    sizes: Sequence[int],
    seed: int,
    family=E1_FAMILY,
    window: tuple | None = None,
    reference: float | None = None,
) -> list[dict]:
    """Optimal values under empirical laws of growing size.

    For each ``N`` the scenario law is replaced by ``N`` samples from
    ``family`` and the risk model is solved by grid refinement over
    ``X ∩ window``.  ``error`` is the distance to ``reference``.  When no
    reference is given it is computed exactly: from the analytic oracle for
    the expectation under the E1 family, or from the finite support itself.
    """
    from .solve import solve_risk_model

    p = template
    if window is not None:
        lo, hi = window
        p = p.with_X(p.X.intersect(Polyhedron.box([lo] * p.n, [hi] * p.n)))
    if reference is None:
        if isinstance(family, FiniteSupport):
            reference = solve_risk_model(p.with_scenarios(family.dist), spec, "grid").value
        elif family == E1_FAMILY and spec.kind == RiskKind.EXPECTATION:
            reference = e1_reference_value(window or (E1_LO, E1_HI))[0]
        else:
            raise ValueError("a reference value is required for this family and risk functional")
    rows = []
    for N in sizes:
        t0 = time.perf_counter()
        dist = sample_empirical(family, N, seed)
        rep = solve_risk_model(p.with_scenarios(dist), spec, "grid")
        rows.append(
            {
                "N": int(N),
                "seed": int(seed),
                "value": rep.value,
                "error": abs(rep.value - reference),
                "x_star": rep.x,
                "wall_ms": 1000.0 * (time.perf_counter() - t0),
            }
        )
    return rows


def escaping_mass_problem(l: float | None) -> BilevelStochasticProblem:
    """``min x + E[Z]`` over ``[0, 1]`` with ``Z ~ (1 - 1/l) δ_0 + (1/l) δ_l``.

    ``l=None`` gives the weak limit ``δ_0``.  The outcome ``x + z`` is produced
    by a follower who maximises ``y`` subject to ``y <= z``.
    """
    if l is None:
        dist = DiscreteDistribution([[0.0]], [1.0])
    elif l == 1:
        dist = DiscreteDistribution([[1.0]], [1.0])
    else:
        dist = DiscreteDistribution([[0.0], [float(l)]], [1.0 - 1.0 / l, 1.0 / l])
    lower = LowerLevel(A=[[1.0]], T=[[0.0]], b0=[0.0], d=[-1.0], q=[1.0])
    return BilevelStochasticProblem(c=[1.0], lower=lower, X=Polyhedron.box([0.0], [1.0]), scenarios=dist)


def counterexample_escaping_mass(ls: Sequence[float]) -> list[dict]:
    """Optimal values along the escaping-mass sequence and at its weak limit.

    Every finite ``l`` gives value 1 while the limit law gives 0, so the
    optimal value is not weakly continuous without uniform integrability.
    """
    from .solve import solve_risk_model

    rows = []
    for l in list(ls) + [None]:
        if l is not None and l < 1:
            raise ValueError("l must be at least 1")
        rep = solve_risk_model(escaping_mass_problem(l), RiskSpec.expectation(), "reformulate")
        rows.append({"l": "limit" if l is None else l, "value": rep.extras.get("q_risk", rep.value), "x": rep.x})
    return rows


# ---------------------------------------------------------------------------
# Lipschitz estimation


@dataclass
class LipschitzEstimate:
    value: float
    pair: tuple | None


def lipschitz_estimate(p: BilevelStochasticProblem, spec: RiskSpec, region, samples: int, seed: int) -> LipschitzEstimate:
    """Largest difference quotient of ``x -> R[f(x, Z)]`` over random pairs in a box.

    Pair ``i`` always uses the same stream outputs, so more samples only add
    pairs and the estimate cannot decrease.
    """
    from .risk import q_risk

    if samples < 2:
        raise ValueError("at least two samples are required")
    lo = np.asarray(region[0], dtype=float).reshape(-1)
    hi = np.asarray(region[1], dtype=float).reshape(-1)
    n = lo.size
    u = uniforms(seed, 0, 2 * n * samples).reshape(samples, 2, n)
    pts = lo + (hi - lo) * u
    best, pair = 0.0, None
    for a, b in pts:
        dist = float(np.linalg.norm(a - b))
        if dist == 0.0:
            continue
        ratio = abs(q_risk(p, spec, a) - q_risk(p, spec, b)) / dist
        if ratio > best:
            best, pair = ratio, (a.copy(), b.copy())
    return LipschitzEstimate(best, pair)


# ---------------------------------------------------------------------------
# Report


def example_e1_report() -> str:
    """Every number of the worked example, as deterministic text."""
    from .lp import check_dom_f, gordan_complete_recourse
    from .lower import eval_f, eval_outcomes
    from .risk import q_risk
    from .solve import solve_risk_model

    p = e1_problem()
    out = []
    w = out.append
    w("# expected outcome under the uniform law")
    for x in (1.0, 2.0, 2.75, 3.0, 3.25, 3.5, 3.75, 5.0, 6.0):
        w(f"E(x={x:g}) = {oracle_e1(x):.15g}   quadrature {quadrature_e1(x):.15g}")
    w("# pieces at the breakpoints (left, right, slope left, slope right)")
    for i, bp in enumerate(BREAKPOINTS):
        w(
            f"x={bp:g}: {e1_piece_value(i, bp):.15g} {e1_piece_value(i + 1, bp):.15g} "
            f"{e1_piece_slope(i, bp):.15g} {e1_piece_slope(i + 1, bp):.15g}"
        )
    ref, xref = e1_reference_value()
    w(f"# minimiser of the exact expectation: x* = {xref:.15g}, value {ref:.15g}")
    w("# follower responses at z = 0")
    for x in (1.0, 3.25, 6.0):
        r = eval_f(p, [x], [0.0, 0.0, 0.0])
        w(f"f(x={x:g}) = {r.value:.15g}, y = {r.y[0]:.15g}")
    w("# two-point discretisation")
    for x in (2.0, 6.0):
        s = eval_outcomes(p, [x])
        w(f"outcomes(x={x:g}) = {' '.join('%.15g' % v for v in s.outcomes)}")
    for label, x in (("expectation", 2.0), ("worst", 6.0), ("var:0.5", 6.0)):
        w(f"{label} at x={x:g}: {q_risk(p, RiskSpec.parse(label), [x]):.15g}")
    for label in ("expectation", "worst", "cvar:0.5", "var:0.5"):
        rep = solve_risk_model(p, RiskSpec.parse(label), "reformulate")
        w(f"solve {label}: status {rep.status.value}, x* = {rep.x[0]:.15g}, value {rep.value:.15g}")
    g = gordan_complete_recourse(p.lower.A)
    w(f"complete recourse: {g.complete}, witness {' '.join('%.15g' % v for v in g.witness)}")
    dom = check_dom_f(p)
    w(f"dom f nonempty: {dom.nonempty}, dual witness {' '.join('%.15g' % v for v in dom.u)}")
    w("# escaping mass")
    for row in counterexample_escaping_mass([1, 10, 100, 10**4]):
        w(f"l={row['l']}: value {row['value']:.15g}")
    return "\n".join(out) + "\n"
