"""Risk functionals of finite discrete outcome laws.

All functionals are law invariant, so they take the outcome values and their
probabilities.  Sums use ``math.fsum`` to keep translation and scaling
identities accurate to rounding.
"""

from __future__ import annotations

import math

import numpy as np

from .lower import eval_outcomes
from .model import BilevelStochasticProblem, DiscreteDistribution, RiskKind, RiskSpec

LEVEL_TOL = 1e-12
ENTROPIC_GUARD = 700.0


class RiskOverflow(ArithmeticError):
    """The entropic risk would overflow double precision."""


def _fsum(a) -> float:
    return math.fsum(np.asarray(a, dtype=float).tolist())


def expectation(v: np.ndarray, p: np.ndarray) -> float:
    return _fsum(p * v)


def expected_excess(v: np.ndarray, p: np.ndarray, eta: float, order: float = 1.0) -> float:
    excess = np.maximum(v - eta, 0.0)
    if order == 1.0:
        return _fsum(p * excess)
    return _fsum(p * excess**order) ** (1.0 / order)


def semideviation(v: np.ndarray, p: np.ndarray, rho: float, order: float = 1.0) -> float:
    mean = expectation(v, p)
    return mean + rho * expected_excess(v, p, mean, order)


def excess_probability(v: np.ndarray, p: np.ndarray, eta: float) -> float:
    return _fsum(p[v > eta])


def _sorted(v: np.ndarray, p: np.ndarray):
    order = np.argsort(v, kind="stable")
    vs, ps = v[order], p[order]
    cum = np.array(list(_cumsum(ps)))
    return vs, ps, cum


def _cumsum(ps):
    # Neumaier-compensated running sum.
    total = 0.0
    comp = 0.0
    for x in ps.tolist():
        t = total + x
        if abs(total) >= abs(x):
            comp += (total - t) + x
        else:
            comp += (x - t) + total
        total = t
        yield total + comp


def value_at_risk(v: np.ndarray, p: np.ndarray, alpha: float) -> float:
    """Smallest outcome whose cumulative probability reaches ``alpha``."""
    vs, _, cum = _sorted(v, p)
    return float(vs[_quantile_index(cum, alpha)])


def _quantile_index(cum: np.ndarray, alpha: float) -> int:
    idx = int(np.searchsorted(cum, alpha - LEVEL_TOL, side="left"))
    return min(idx, cum.size - 1)


def cvar(v: np.ndarray, p: np.ndarray, alpha: float) -> float:
    """``min_eta eta + E[(Y - eta)^+] / (1 - alpha)``.

    The objective is convex and piecewise linear with kinks at the atoms, and
    its minimum sits at the ``alpha``-quantile.  The atoms on both sides of the
    quantile are also evaluated, which absorbs rounding in the cumulative sums.
    """
    vs, ps, cum = _sorted(v, p)
    i = _quantile_index(cum, alpha)
    best = math.inf
    for j in range(max(0, i - 1), min(vs.size, i + 2)):
        eta = float(vs[j])
        val = eta + _fsum(ps * np.maximum(vs - eta, 0.0)) / (1.0 - alpha)
        best = min(best, val)
    return best


def entropic(v: np.ndarray, p: np.ndarray, alpha: float) -> float:
    top = float(np.max(v))
    spread = alpha * (top - float(np.min(v)))
    if spread > ENTROPIC_GUARD:
        raise RiskOverflow(f"alpha * range = {spread:.6g} exceeds {ENTROPIC_GUARD}")
    return top + math.log(_fsum(p * np.exp(alpha * (v - top)))) / alpha


def worst_case(v: np.ndarray, p: np.ndarray) -> float:
    return float(np.max(v))


def risk_values(spec: RiskSpec, v, p) -> float:
    """Evaluate ``spec`` on outcomes ``v`` with probabilities ``p``."""
    v = np.asarray(v, dtype=float).reshape(-1)
    p = np.asarray(p, dtype=float).reshape(-1)
    k = spec.kind
    if k == RiskKind.EXPECTATION:
        return expectation(v, p)
    if k == RiskKind.EXPECTED_EXCESS:
        return expected_excess(v, p, spec.eta, spec.p)
    if k == RiskKind.SEMIDEVIATION:
        return semideviation(v, p, spec.rho, spec.p)
    if k == RiskKind.EXCESS_PROBABILITY:
        return excess_probability(v, p, spec.eta)
    if k == RiskKind.VAR:
        return value_at_risk(v, p, spec.alpha)
    if k == RiskKind.CVAR:
        return cvar(v, p, spec.alpha)
    if k == RiskKind.ENTROPIC:
        return entropic(v, p, spec.alpha)
    if k == RiskKind.WORST_CASE:
        return worst_case(v, p)
    return expectation(v, p) + spec.rho * risk_values(spec.inner, v, p)


def risk_eval(spec: RiskSpec, dist: DiscreteDistribution) -> float:
    return risk_values(spec, dist.values, dist.probs)


def q_risk(p: BilevelStochasticProblem, spec: RiskSpec, x) -> float:
    """Risk of the leader's outcome law at ``x``."""
    sample = eval_outcomes(p, x)
    return risk_values(spec, sample.outcomes, sample.probs)
