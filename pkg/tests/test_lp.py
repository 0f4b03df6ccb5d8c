import itertools

import numpy as np
import pytest
from instances import random_lp

from bslp.lower import eval_f
from bslp.lp import (
    LpProblem,
    LpStatus,
    check_dom_f,
    check_farkas,
    check_ray,
    gordan_complete_recourse,
    kkt_residuals,
    solve_lp,
)
from bslp.model import BilevelStochasticProblem, DiscreteDistribution, LowerLevel, Polyhedron


def interval_lp(c, upper, lower):
    """``min c*y`` subject to ``y <= u`` for each upper and ``y >= l`` for each lower bound."""
    A = np.array([[1.0]] * len(upper) + [[-1.0]] * len(lower))
    b = np.array(list(upper) + [-v for v in lower], dtype=float)
    return LpProblem(c=[c], A=A, b=b, senses=["<="] * len(b), lb=[-np.inf])


def test_follower_example_optimal():
    res = solve_lp(interval_lp(-1.0, [3.0, 7.5], [1.0]))
    assert res.status == LpStatus.OPTIMAL
    assert res.x[0] == 3.0 and res.value == -3.0


def test_empty_interval_infeasible():
    p = interval_lp(0.0, [-1.0], [1.0])
    res = solve_lp(p)
    assert res.status == LpStatus.INFEASIBLE
    assert check_farkas(p, res.farkas)


def test_ray_unbounded():
    p = LpProblem(c=[-1.0], A=np.zeros((1, 1)), b=[0.0], senses=["<="])
    res = solve_lp(p)
    assert res.status == LpStatus.UNBOUNDED
    assert check_ray(p, res.ray)
    assert res.ray[0] > 0


def test_strong_duality_textbook():
    # max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> 36 at (2, 6)
    p = LpProblem(c=[-3.0, -5.0], A=[[1, 0], [0, 2], [3, 2]], b=[4, 12, 18], senses=["<="] * 3)
    res = solve_lp(p)
    assert res.optimal
    np.testing.assert_allclose(res.x, [2.0, 6.0])
    assert res.value == pytest.approx(-36.0)
    assert res.dual_value == pytest.approx(-36.0)
    r = kkt_residuals(p, res)
    assert max(r.values()) < 1e-9


def test_determinism():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = random_lp(rng)
        a, b = solve_lp(p), solve_lp(p)
        assert a.status == b.status and a.basis == b.basis and a.iterations == b.iterations


def test_degenerate_cycling_example():
    # Beale's example cycles under the largest-coefficient rule without safeguards.
    c = [-0.75, 150.0, -0.02, 6.0]
    A = [[0.25, -60.0, -0.04, 9.0], [0.5, -90.0, -0.02, 3.0], [0.0, 0.0, 1.0, 0.0]]
    res = solve_lp(LpProblem(c=c, A=A, b=[0.0, 0.0, 1.0], senses=["<="] * 3))
    assert res.optimal
    assert res.value == pytest.approx(-0.05)


def test_random_certificates(rng):
    for _ in range(1500):
        p = random_lp(rng)
        res = solve_lp(p)
        if res.status == LpStatus.OPTIMAL:
            r = kkt_residuals(p, res)
            assert r["gap"] <= 1e-8 and r["primal"] <= 1e-8 and r["dual_sign"] <= 1e-8
        elif res.status == LpStatus.INFEASIBLE:
            assert check_farkas(p, res.farkas)
        else:
            assert check_ray(p, res.ray)


def test_agrees_with_scipy(rng):
    linprog = pytest.importorskip("scipy.optimize").linprog
    checked = 0
    for _ in range(400):
        p = random_lp(rng)
        res = solve_lp(p)
        A_ub, b_ub, A_eq, b_eq = [], [], [], []
        for row, rhs, s in zip(p.A, p.b, p.senses):
            if s == "<=":
                A_ub.append(row), b_ub.append(rhs)
            elif s == ">=":
                A_ub.append(-row), b_ub.append(-rhs)
            else:
                A_eq.append(row), b_eq.append(rhs)
        ref = linprog(
            p.c,
            A_ub=np.array(A_ub) if A_ub else None,
            b_ub=b_ub or None,
            A_eq=np.array(A_eq) if A_eq else None,
            b_eq=b_eq or None,
            bounds=[(None if not np.isfinite(l) else l, None if not np.isfinite(u) else u) for l, u in zip(p.lb, p.ub)],
            method="highs",
        )
        if ref.status == 0:
            assert res.optimal
            assert res.value == pytest.approx(ref.fun, rel=1e-7, abs=1e-7)
            checked += 1
        elif ref.status == 2:
            # HiGHS may report infeasible-or-unbounded as infeasible; ours is certified either way
            if res.status == LpStatus.UNBOUNDED:
                assert check_ray(p, res.ray)
            else:
                assert res.status == LpStatus.INFEASIBLE
        elif ref.status == 3:
            assert res.status == LpStatus.UNBOUNDED
    assert checked > 50


def test_farkas_rejects_bad_certificate():
    p = interval_lp(0.0, [-1.0], [1.0])
    cert = solve_lp(p).farkas
    cert.rows = -cert.rows
    assert not check_farkas(p, cert)


def test_gordan_e1_witness():
    rc = gordan_complete_recourse([[-1.0], [1.0], [1.0]])
    assert not rc.complete
    np.testing.assert_allclose(rc.witness, [0.5, 0.5, 0.0])


@pytest.mark.parametrize("A", [[[1.0]], [[1.0, 0.0], [0.0, 1.0]]])
def test_gordan_complete(A):
    assert gordan_complete_recourse(A).complete


def sign_enumeration(A: np.ndarray) -> bool:
    """Complete iff ``A y <= r`` is solvable for every ``r`` in ``{-1, 1}^s``.

    Solvable right-hand sides form a convex cone containing ``A y`` for all
    ``y`` plus the nonnegative orthant, so ``r = (-1, ..., -1)`` alone decides;
    all sign vectors are checked anyway, each by a feasibility LP.
    """
    s, m = A.shape
    for signs in itertools.product((-1.0, 1.0), repeat=s):
        r = np.array(signs)
        p = LpProblem(c=np.zeros(m), A=A, b=r, senses=["<="] * s, lb=np.full(m, -np.inf))
        if solve_lp(p).status == LpStatus.INFEASIBLE:
            return False
    return True


def test_gordan_exhaustive_small():
    for shape in [(2, 2), (3, 2)]:
        for entries in itertools.product((-1.0, 0.0, 1.0), repeat=shape[0] * shape[1]):
            A = np.array(entries).reshape(shape)
            assert gordan_complete_recourse(A).complete == sign_enumeration(A), A


def test_complete_recourse_means_feasible(rng):
    A = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0], [1.0, 2.0]])
    A = A[[0, 1, 3]]
    assert gordan_complete_recourse(A).complete
    for _ in range(100):
        r = rng.normal(size=3) * 10
        p = LpProblem(c=np.zeros(2), A=A, b=r, senses=["<="] * 3, lb=np.full(2, -np.inf))
        assert solve_lp(p).optimal


def test_dom_f_e1(e1):
    dom = check_dom_f(e1)
    assert dom.nonempty
    np.testing.assert_allclose(dom.u, [0.0, -1.0, 0.0])
    assert -dom.u[0] + dom.u[1] + dom.u[2] == -1.0


def _variant(e1, **changes):
    low = e1.lower
    kw = dict(A=low.A, T=low.T, b0=low.b0, d=low.d, q=low.q)
    kw.update(changes)
    return BilevelStochasticProblem(c=e1.c, lower=LowerLevel(**kw), X=e1.X, scenarios=e1.scenarios)


def test_dom_f_reversed_cost_still_bounded(e1):
    # min y over y >= 1 is bounded: u = (-1, 0, 0) solves A'u = d with u <= 0
    dom = check_dom_f(_variant(e1, d=[1.0]))
    assert dom.nonempty
    np.testing.assert_allclose(dom.u, [-1.0, 0.0, 0.0])


def test_dom_f_condition_b(e1):
    # with only upper bounds on y, minimising y is unbounded
    dom = check_dom_f(_variant(e1, A=[[1.0], [1.0], [1.0]], d=[1.0]))
    assert not dom.nonempty and dom.failed == "b"


def test_dom_f_condition_a():
    p = BilevelStochasticProblem(
        c=[0.0],
        lower=LowerLevel(A=[[0.0]], T=[[0.0]], b0=[-1.0], d=[0.0], q=[0.0]),
        X=Polyhedron.box([0.0], [1.0]),
        scenarios=DiscreteDistribution([[0.0]], [1.0]),
    )
    dom = check_dom_f(p)
    assert not dom.nonempty and dom.failed == "a"


def test_dom_f_condition_c():
    # follower indifferent along y, leader cost unbounded below in y
    p = BilevelStochasticProblem(
        c=[0.0],
        lower=LowerLevel(A=[[1.0]], T=[[0.0]], b0=[0.0], d=[0.0], q=[1.0]),
        X=Polyhedron.box([0.0], [1.0]),
        scenarios=DiscreteDistribution([[0.0]], [1.0]),
    )
    dom = check_dom_f(p)
    assert not dom.nonempty and dom.failed == "c"


def test_dom_f_witness_is_finite(e1):
    dom = check_dom_f(e1)
    assert np.isfinite(eval_f(e1, dom.x, dom.z).value)
