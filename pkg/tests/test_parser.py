"""Expression grammar and problem-document schema validation."""

import json
from fractions import Fraction

import pytest

from bilevelsos.parser import ParseError, parse_poly, parse_problem, parse_problem_doc
from bilevelsos.polyring import Polynomial, VarSpace

from conftest import load_doc, problem_bytes

XY = VarSpace.make(("x", 2), ("y", 2))


def _ev(text, pt):
    return parse_poly(text, XY).eval([Fraction(v) for v in pt])


def test_arithmetic_and_precedence():
    assert _ev("x1 + 2*x2^2", [1, 3, 0, 0]) == 19
    assert _ev("-x1^2", [2, 0, 0, 0]) == -4  # unary minus binds below power
    assert _ev("(x1 + x2)*(x1 - x2)", [5, 3, 0, 0]) == 16
    assert _ev("2 - 3 - 4", [0, 0, 0, 0]) == -5  # left associativity
    assert _ev("x1*y2 - x2*y1", [1, 2, 3, 4]) == 4 - 6


def test_rational_and_decimal_coefficients_are_exact():
    p = parse_poly("2000/333*x1 + 0.25", XY)
    assert p.terms[(1, 0, 0, 0)] == Fraction(2000, 333)
    assert p.terms[(0, 0, 0, 0)] == Fraction(1, 4)
    assert p.domain == "exact"


def test_tuple_expansion_not_in_grammar():
    with pytest.raises(ParseError):
        parse_poly("(x1, x2)", XY)


@pytest.mark.parametrize("bad", ["x3", "z1", "x1 +", "x1^x2", "((x1)", "x1^-2", ""])
def test_syntax_errors_raise(bad):
    with pytest.raises(ParseError):
        parse_poly(bad, XY)


def test_error_message_carries_position():
    with pytest.raises(ParseError) as ei:
        parse_poly("x1 + @", XY)
    assert "position" in str(ei.value) or "@" in str(ei.value)


def test_all_bundled_problems_parse():
    from conftest import PROBLEM_NAMES, load_problem

    for name in PROBLEM_NAMES:
        prob = load_problem(name)
        assert prob.n >= 1 and prob.p >= 1


def test_dims_mismatch_rejected():
    doc = json.loads(problem_bytes("sbop2"))
    doc["dims"]["p"] = 3  # lower objective mentions only z1, z2 but W shape breaks
    with pytest.raises(ParseError):
        parse_problem(json.dumps(doc).encode())


def test_unknown_top_level_field_rejected():
    doc = json.loads(problem_bytes("sbop1"))
    doc["extra"] = {}
    with pytest.raises(ParseError):
        parse_problem_doc(json.dumps(doc).encode())


def test_missing_objective_rejected():
    doc = json.loads(problem_bytes("sbop1"))
    del doc["upper"]["objective"]
    with pytest.raises(ParseError):
        parse_problem_doc(json.dumps(doc).encode())


def test_invalid_json_rejected():
    with pytest.raises(ParseError):
        parse_problem_doc(b"{not json")


def test_wrong_lme_shape_rejected():
    doc = json.loads(problem_bytes("ex41"))
    doc["lme"]["W"] = doc["lme"]["W"][:-1]
    with pytest.raises(ParseError):
        parse_problem_doc(json.dumps(doc).encode())


def test_invalid_lme_identity_rejected_on_assembly():
    doc = json.loads(problem_bytes("ex41"))
    doc["lme"]["W"][0][0] = "x1"
    with pytest.raises(ParseError):
        parse_problem(json.dumps(doc).encode())
