import numpy as np
import pytest

from bslp.analysis import e1_problem
from bslp.model import BilevelStochasticProblem, DiscreteDistribution, LowerLevel, Polyhedron


@pytest.fixture
def e1():
    return e1_problem()


def constant_outcome_problem() -> BilevelStochasticProblem:
    """Follower outcome fixed at 2 whatever ``x`` and ``z``."""
    return BilevelStochasticProblem(
        c=[0.0],
        lower=LowerLevel(A=[[1.0], [-1.0]], T=[[0.0], [0.0]], b0=[2.0, -2.0], d=[1.0], q=[1.0]),
        X=Polyhedron.box([0.0], [1.0]),
        scenarios=DiscreteDistribution([[0.0, 0.0]], [1.0]),
    )


@pytest.fixture
def flat():
    return constant_outcome_problem()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
