import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bslp.analysis import e1_problem
from bslp.model import (
    BilevelStochasticProblem,
    DiscreteDistribution,
    LowerLevel,
    ModelError,
    Polyhedron,
    RiskKind,
    RiskSpec,
    Sense,
    parse_problem,
    problem_to_dict,
    serialize_problem,
)


def e1_dict():
    return json.loads(serialize_problem(e1_problem()))


def test_e1_file_dimensions():
    p = parse_problem(serialize_problem(e1_problem()))
    assert (p.n, p.m, p.s, p.K) == (1, 1, 3, 2)


def test_probability_sum_error():
    d = e1_dict()
    d["scenarios"]["probs"] = [0.5, 0.6]
    with pytest.raises(ModelError) as err:
        parse_problem(json.dumps(d))
    assert err.value.code == "probability"


def test_dimension_error():
    d = e1_dict()
    d["d"] = [1.0, 2.0]
    with pytest.raises(ModelError) as err:
        parse_problem(json.dumps(d))
    assert err.value.code == "dimension"


@pytest.mark.parametrize(
    "mutate, code",
    [
        (lambda d: d.pop("A"), "schema"),
        (lambda d: d.update(extra=1), "schema"),
        (lambda d: d.update(n=0), "dimension"),
        (lambda d: d.update(n="one"), "type"),
        (lambda d: d["scenarios"].update(probs=[1.0, 0.0]), "probability"),
        (lambda d: d["scenarios"].update(atoms=[[0, 0], [0, 0]]), "dimension"),
        (lambda d: d.update(sense="neutral"), "schema"),
        (lambda d: d.update(c=[float("nan")]), "nonfinite"),
    ],
)
def test_validation_codes(mutate, code):
    d = e1_dict()
    mutate(d)
    with pytest.raises(ModelError) as err:
        parse_problem(json.dumps(d))
    assert err.value.code == code


def test_syntax_error_reports_position():
    with pytest.raises(ModelError) as err:
        parse_problem(b'{"n": 1,\n  "m": }')
    assert err.value.code == "syntax"
    assert "line 2" in str(err.value)


def test_invalid_utf8():
    with pytest.raises(ModelError) as err:
        parse_problem(b"\xff\xfe")
    assert err.value.code == "syntax"


def test_round_trip_e1():
    p = e1_problem()
    assert parse_problem(serialize_problem(p)) == p


def test_zero_b0_emitted():
    d = e1_dict()
    d["b0"] = [0.0, 0.0, 0.0]
    p = parse_problem(json.dumps(d))
    assert json.loads(serialize_problem(p))["b0"] == [0.0, 0.0, 0.0]


def test_pessimistic_sense_emitted():
    p = e1_problem().with_sense(Sense.PESSIMISTIC)
    assert json.loads(serialize_problem(p))["sense"] == "pessimistic"


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False)


@st.composite
def problems(draw):
    n = draw(st.integers(1, 3))
    m = draw(st.integers(1, 3))
    s = draw(st.integers(1, 4))
    K = draw(st.integers(1, 4))

    def mat(r, c):
        return np.array(draw(st.lists(finite, min_size=r * c, max_size=r * c))).reshape(r, c)

    w = np.array(draw(st.lists(st.integers(1, 9), min_size=K, max_size=K)), dtype=float)
    return BilevelStochasticProblem(
        c=mat(1, n)[0],
        lower=LowerLevel(A=mat(s, m), T=mat(s, n), b0=mat(1, s)[0], d=mat(1, m)[0], q=mat(1, m)[0]),
        X=Polyhedron(mat(2, n), mat(1, 2)[0]),
        scenarios=DiscreteDistribution(mat(K, s), w / w.sum()),
        sense=draw(st.sampled_from(list(Sense))),
    )


@settings(max_examples=60, deadline=None)
@given(problems())
def test_round_trip_property(p):
    text = serialize_problem(p)
    q = parse_problem(text)
    assert q == p
    assert serialize_problem(q) == text


def test_problem_to_dict_keys():
    assert set(problem_to_dict(e1_problem())) == {
        "n", "m", "s", "c", "q", "d", "A", "T", "b0", "X", "scenarios", "sense"
    }


@pytest.mark.parametrize(
    "text, kind",
    [
        ("expectation", RiskKind.EXPECTATION),
        ("cvar:0.9", RiskKind.CVAR),
        ("ee:4", RiskKind.EXPECTED_EXCESS),
        ("sd:0.5:2", RiskKind.SEMIDEVIATION),
        ("ep:4", RiskKind.EXCESS_PROBABILITY),
        ("var:0.5", RiskKind.VAR),
        ("entropic:1", RiskKind.ENTROPIC),
        ("worst", RiskKind.WORST_CASE),
        ("meanrisk:0.5:cvar:0.9", RiskKind.MEAN_RISK),
    ],
)
def test_spec_parse_and_label(text, kind):
    spec = RiskSpec.parse(text)
    assert spec.kind == kind
    assert RiskSpec.parse(spec.label()) == spec


@pytest.mark.parametrize(
    "text", ["cvar:1", "var:0", "sd:0", "sd:1.5", "entropic:0", "ee:1:0.5", "meanrisk:0.5:var:0.5", "bogus", "cvar"]
)
def test_spec_invalid(text):
    with pytest.raises(ModelError):
        RiskSpec.parse(text)


def test_distribution_renormalises():
    d = DiscreteDistribution([[0.0], [1.0], [2.0]], [0.1, 0.2, 0.7 + 5e-13])
    assert abs(sum(d.probs) - 1.0) < 1e-15


def test_problem_is_unhashable_but_comparable():
    p = e1_problem()
    with pytest.raises(TypeError):
        hash(p)
    assert p == e1_problem()
    assert p != p.with_sense("pessimistic")
