"""Seeded random instances shared by the reformulation tests."""

from __future__ import annotations

import numpy as np

from bslp.model import BilevelStochasticProblem, DiscreteDistribution, LowerLevel, Polyhedron, RiskSpec
from bslp.risk import q_risk


def random_instance(seed: int) -> BilevelStochasticProblem:
    """``n, m, s <= 2`` and ``K <= 4`` on ``X = [0, 1]^n``.

    Three follower shapes: an interval with a random cost sign (``d = 0`` makes
    every point optimal, exercising the optimistic selection), a single upper
    bound, and a unique vertex of two random constraints.  Outcome slopes in
    ``x`` are at most 1/2 in total so grid minima are within one step.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    K = int(rng.integers(1, 5))
    shape = int(rng.integers(0, 3))
    c = np.round(rng.uniform(-0.25, 0.25, n) / n, 3)
    if shape == 0:
        A = np.array([[-1.0], [1.0]])
        T = np.round(rng.uniform(-0.25, 0.25, (2, n)) / n, 3)
        b0 = np.round(rng.uniform(2.0, 3.0, 2), 2)
        d = np.array([float(rng.integers(-1, 2))])
        q = np.round(rng.uniform(-1.0, 1.0, 1), 2)
    elif shape == 1:
        A = np.array([[1.0]])
        T = np.round(rng.uniform(-0.25, 0.25, (1, n)) / n, 3)
        b0 = np.round(rng.uniform(-1.0, 1.0, 1), 2)
        d = np.array([-1.0])
        q = np.round(rng.uniform(-1.0, 1.0, 1), 2)
    else:
        while True:
            A = np.round(rng.uniform(-1.0, 1.0, (2, 2)), 2)
            if abs(np.linalg.det(A)) > 0.3:
                break
        lam = np.round(rng.uniform(0.5, 1.5, 2), 2)
        d = -A.T @ lam
        q = np.round(rng.uniform(-1.0, 1.0, 2), 2)
        T = rng.uniform(-1.0, 1.0, (2, n))
        slope = np.abs(q @ np.linalg.solve(A, T)).sum()
        if slope > 0.25:
            T = T * (0.25 / slope)
        T = np.round(T, 4)
        b0 = np.round(rng.uniform(-1.0, 1.0, 2), 2)
    s = A.shape[0]
    atoms = np.round(rng.uniform(-1.0, 1.0, (K, s)), 2)
    w = rng.integers(1, 10, K).astype(float)
    probs = w / w.sum()
    return BilevelStochasticProblem(
        c=c,
        lower=LowerLevel(A=A, T=T, b0=b0, d=d, q=q),
        X=Polyhedron.box(np.zeros(n), np.ones(n)),
        scenarios=DiscreteDistribution(atoms, probs),
    )


def grid_points(n: int) -> tuple[np.ndarray, float]:
    if n == 1:
        pts = np.linspace(0.0, 1.0, 1001).reshape(-1, 1)
        return pts, 1e-3
    axis = np.linspace(0.0, 1.0, 32)
    mesh = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1), 1.0 / 31.0


def grid_minimum(p: BilevelStochasticProblem, spec: RiskSpec) -> tuple[float, float]:
    """Brute-force minimum of the risk over a uniform grid and the grid step."""
    pts, step = grid_points(p.n)
    return min(q_risk(p, spec, x) for x in pts), step


def outcome_median(p: BilevelStochasticProblem) -> float:
    from bslp.lower import eval_outcomes

    sample = eval_outcomes(p, np.full(p.n, 0.5))
    return float(np.round(np.median(sample.outcomes), 3))


def random_spec(kind: str, p: BilevelStochasticProblem, seed: int) -> RiskSpec:
    rng = np.random.default_rng(10_000 + seed)
    if kind == "expectation":
        return RiskSpec.expectation()
    if kind == "ee":
        return RiskSpec.expected_excess(outcome_median(p))
    if kind == "sd":
        return RiskSpec.semideviation(float(np.round(rng.uniform(0.1, 0.5), 2)))
    if kind == "cvar":
        return RiskSpec.cvar(float(np.round(rng.uniform(0.1, 0.9), 2)))
    if kind == "ep":
        return RiskSpec.excess_probability(outcome_median(p))
    if kind == "var":
        return RiskSpec.var(float(np.round(rng.uniform(0.2, 0.9), 2)))
    raise ValueError(kind)


def random_lp(rng: np.random.Generator):
    """Small LP with mixed senses and bounds; all three statuses occur."""
    from bslp.lp import LpProblem

    n = int(rng.integers(1, 7))
    rows = int(rng.integers(1, 7))
    A = rng.integers(-5, 6, (rows, n)).astype(float)
    b = rng.integers(-10, 11, rows).astype(float)
    c = rng.integers(-5, 6, n).astype(float)
    senses = rng.choice(["<=", ">=", "="], size=rows, p=[0.6, 0.25, 0.15]).tolist()
    lb = np.where(rng.random(n) < 0.7, 0.0, np.where(rng.random(n) < 0.5, -np.inf, -3.0))
    ub = np.where(rng.random(n) < 0.7, np.inf, lb + rng.integers(1, 6, n))
    ub = np.where(np.isfinite(ub), ub, np.inf)
    return LpProblem(c=c, A=A, b=b, senses=senses, lb=lb, ub=ub)
