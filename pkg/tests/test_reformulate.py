import json

import numpy as np
import pytest

from bslp.analysis import e1_problem
from bslp.model import BenchmarkSpec, DiscreteDistribution, Polyhedron, RiskSpec
from bslp.reformulate import (
    GenForm,
    UnsupportedSpec,
    big_m,
    build_table1,
    build_table2,
    dominance_thresholds,
    genform_json,
    kkt_reformulate,
    listing,
    outcome_bounds,
)
from bslp.solve import solve_eps_path, solve_global


def toy_form():
    """``min u`` over ``u in [0, 1]`` with follower ``min w`` subject to ``-w <= -u``."""
    return GenForm(g=[1.0], h=[0.0], t=[1.0], W=[[-1.0]], B=[[-1.0]], b=[0.0], U=Polyhedron.box([0.0], [1.0]))


def kkt_feasible(kkt, z, tol=1e-9):
    lhs = kkt.A @ z
    for a, b, s in zip(lhs, kkt.rhs, kkt.senses):
        if (s == "=" and abs(a - b) > tol) or (s == "<=" and a > b + tol):
            return False
    if np.any(z < kkt.lb - tol) or np.any(z > kkt.ub + tol):
        return False
    return float(np.sum(kkt.products(z))) <= kkt.eps + tol


def test_e1_expectation_form():
    p = e1_problem()
    gf = build_table1(p, RiskSpec.expectation())
    assert gf.l == 2
    np.testing.assert_allclose(gf.h, [0.5, 0.5])
    np.testing.assert_allclose(gf.g, [0.0])
    rep = solve_global(gf)
    from bslp.risk import q_risk

    assert rep.value == q_risk(p, RiskSpec.expectation(), rep.x)


def test_e1_kkt_blocks():
    gf = build_table1(e1_problem(), RiskSpec.expectation())
    kkt = kkt_reformulate(gf)
    assert kkt.pairs == 6
    assert [(r1 - r0) for r0, r1, _, _ in gf.blocks] == [3, 3]


@pytest.mark.parametrize("label", ["expectation", "ee:3.5", "ep:4", "worst"])
def test_block_diagonal(label):
    gf = build_table1(e1_problem(), RiskSpec.parse(label))
    mask = np.zeros_like(gf.W, dtype=bool)
    for r0, r1, c0, c1 in gf.blocks:
        mask[r0:r1, c0:c1] = True
    assert not np.any(gf.W[~mask])
    assert len(gf.blocks) == 2


def test_big_m_e1():
    M = big_m(e1_problem(), 4.0)
    assert M.value == 2.75
    lo, hi, _ = outcome_bounds(e1_problem())
    assert hi == 5.75


def test_entropic_unsupported():
    with pytest.raises(UnsupportedSpec):
        build_table1(e1_problem(), RiskSpec.entropic(1.0))


def test_pessimistic_unsupported():
    with pytest.raises(UnsupportedSpec):
        build_table1(e1_problem().with_sense("pessimistic"), RiskSpec.expectation())


def test_toy_kkt():
    kkt = kkt_reformulate(toy_form())
    assert kkt.pairs == 1
    rep = solve_global(kkt)
    assert rep.x[0] == 0.0 and rep.w[0] == 0.0 and rep.value == 0.0
    assert 1 <= rep.nodes <= 3


def test_relaxation_enlarges_feasible_set():
    exact = kkt_reformulate(toy_form())
    relaxed = kkt_reformulate(toy_form(), 0.1)
    z = np.array([0.0, 0.05, -1.0])
    assert kkt_feasible(relaxed, z) and not kkt_feasible(exact, z)
    assert solve_eps_path(toy_form(), [0.1]).final.value <= solve_global(exact).value


@pytest.mark.parametrize("label", ["expectation", "cvar:0.5", "sd:0.5", "worst"])
def test_eps_values_nonincreasing_in_eps(label):
    gf = build_table1(e1_problem(), RiskSpec.parse(label))
    path = solve_eps_path(gf, [1.0, 0.1, 0.01, 0.001])
    values = [r.value for r in path.reports]
    assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] <= solve_global(gf).value + 1e-12


def test_table2_probabilistic_single_block():
    p = e1_problem()
    gf = build_table2(p, [-1.0], levels=[(4.0, 0.5)])
    assert len(gf.integer) == p.K
    assert gf.e.size == p.K
    rep = solve_global(gf)
    # P[f(x) <= 4] >= 0.5 with the largest x: on the decreasing branch the lower atom -x + 8 <= 4
    assert rep.x[0] == pytest.approx(6.0)


def test_table2_probabilistic_binding():
    p = e1_problem()
    rep = solve_global(build_table2(p, [1.0], levels=[(4.0, 1.0)]))
    # both outcomes <= 4: x + 2.5 <= 4 on the increasing branch, so x = 1 is the smallest
    assert rep.x[0] == pytest.approx(1.0)
    rep = solve_global(build_table2(p, [-1.0], levels=[(3.0, 1.0)]))
    # -x + 9 <= 3 needs x >= 6
    assert rep.x[0] == pytest.approx(6.0)


def test_dominance_thresholds():
    bench = DiscreteDistribution([[3.0], [5.0]], [0.5, 0.5])
    a, d = dominance_thresholds(bench, "first")
    assert a.tolist() == [3.0, 5.0] and d.tolist() == [0.5, 0.0]
    a, d = dominance_thresholds(bench, "second")
    assert d.tolist() == [1.0, 0.0]


def test_table2_fsd_e1():
    p = e1_problem()
    bench = BenchmarkSpec(DiscreteDistribution([[3.4]], [1.0]), "first")
    rep = solve_global(build_table2(p, [-1.0], bench=bench))
    assert rep.x[0] == pytest.approx(6.0)


def test_listing_and_json():
    gf = build_table1(e1_problem(), RiskSpec.excess_probability(4.0))
    text = listing(gf)
    assert "binary: theta1, theta2" in text
    assert "y[1]_1 <= x1 + 1.5" in text
    assert "-0" not in text.replace("- 0", "")
    doc = json.loads(genform_json(gf, kkt_reformulate(gf)))
    assert doc["genform"]["integer"] == [1, 2]
    assert len(doc["kkt"]["complementarity"]) == gf.r
    assert doc["genform"]["meta"]["big_m"] == 2.75
