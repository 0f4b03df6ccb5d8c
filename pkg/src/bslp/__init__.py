"""Bilevel stochastic linear programs with random right-hand side and finite scenario sets."""

from .analysis import (
    FiniteSupport,
    UniformBox,
    counterexample_escaping_mass,
    e1_problem,
    lipschitz_estimate,
    oracle_e1,
    quadrature_e1,
    sample_empirical,
    stability_experiment,
)
from .dominance import fsd_check, fsd_feasible, solve_dominance, ssd_check, ssd_feasible
from .lower import eval_f, eval_outcomes, in_induced_set, induced_polyhedron
from .lp import LpProblem, check_dom_f, gordan_complete_recourse, solve_lp
from .model import (
    BenchmarkSpec,
    BilevelStochasticProblem,
    DiscreteDistribution,
    DominanceOrder,
    LowerLevel,
    ModelError,
    Polyhedron,
    RiskKind,
    RiskSpec,
    Sense,
    load_problem,
    parse_problem,
    serialize_problem,
)
from .reformulate import GenForm, KktSystem, build_table1, build_table2, kkt_reformulate
from .risk import q_risk, risk_eval
from .solve import SolveReport, SolveStatus, solve_eps_path, solve_global, solve_risk_model, stationarity_check

__all__ = [name for name in dir() if not name.startswith("_")]
