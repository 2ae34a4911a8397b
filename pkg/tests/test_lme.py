"""Lagrange multiplier expressions: the identity W.G = diag(d), the adjugate
construction, multiplier recovery, and the KKT-point set K."""

import json
from fractions import Fraction

import numpy as np
import pytest

from bilevelsos import lme as lme_mod
from bilevelsos.bilevel import BilevelProblem
from bilevelsos.parser import parse_problem_doc
from bilevelsos.polyring import Polynomial

from conftest import PROBLEM_NAMES, problem_bytes

LME_NAMES = PROBLEM_NAMES  # every bundled file carries a hand-crafted W, d


def _unvalidated(name):
    doc = parse_problem_doc(problem_bytes(name))
    prob = BilevelProblem(
        n=doc.n, p=doc.p,
        F=doc.upper_obj, upper_eq=doc.upper_eq, upper_ineq=doc.upper_ineq,
        lower_obj=doc.lower_obj, lower_eq=doc.lower_eq, lower_ineq=doc.lower_ineq,
        config=doc.config,
    )
    return doc, prob


@pytest.mark.parametrize("name", LME_NAMES)
def test_bundled_lme_identity_holds(name):
    doc, prob = _unvalidated(name)
    sys = lme_mod.build_kkt_system(prob)
    diag = lme_mod.lme_validate(doc.lme_W, doc.lme_d, sys)
    assert diag.ok, f"{name}: {diag.describe()}"
    assert not diag.zero_d


def test_corrupted_w_reports_entry_coordinates():
    doc, prob = _unvalidated("ex41")
    sys = lme_mod.build_kkt_system(prob)
    W = [list(row) for row in doc.lme_W]
    W[0][0] = W[0][0] + Polynomial.variable(sys.space, "y", 1)
    diag = lme_mod.lme_validate(W, doc.lme_d, sys)
    assert not diag.ok
    assert any(i == 0 for i, _, _ in diag.bad_entries)
    for _, _, resid in diag.bad_entries:
        assert not resid.is_zero()


def test_adjugate_lme_exists_and_validates():
    _, prob = _unvalidated("ex41")
    sys = lme_mod.build_kkt_system(prob)
    lme = lme_mod.lme_adjugate(sys)
    diag = lme_mod.lme_validate(lme.W, lme.d, sys)
    assert diag.ok
    assert lme.source == "adjugate"
    # all denominators equal det(G'G), so they share one class
    assert all(dj == lme.d[0] for dj in lme.d)


def _doc_from_text(text: str):
    return parse_problem_doc(json.dumps(json.loads(text)).encode())


# small convex lower level used for multiplier-recovery checks:
# f(x, z) = (z1 - x1)^2 with z1 >= 0; the KKT points are
#   x1 >= 0: y1 = x1, lambda = 0        x1 < 0: y1 = 0, lambda = -2 x1
_CONVEX1 = """
{
  "dims": {"n": 1, "p": 1},
  "upper": {"objective": "x1 + y1", "ineq": ["1 - x1^2"]},
  "lower": {"objective": "(z1 - x1)^2", "ineq": ["z1"]}
}
"""


def test_multiplier_recovery_at_kkt_points():
    doc = _doc_from_text(_CONVEX1)
    prob = BilevelProblem.from_doc(doc)
    sys = lme_mod.build_kkt_system(prob)
    lme = lme_mod.lme_adjugate(sys)
    rng = np.random.default_rng(3)
    for _ in range(20):
        x1 = float(rng.uniform(-1, 1))
        if x1 >= 0:
            pt, lam = [x1, x1], 0.0
        else:
            pt, lam = [x1, 0.0], -2.0 * x1
        row = np.array([pt])
        d_val = lme.d[0].to_float().eval_many(row)[0]
        if abs(d_val) < 1e-9:
            continue
        phi_val = lme.phi[0].to_float().eval_many(row)[0]
        assert abs(phi_val / d_val - lam) <= 1e-8 * (1.0 + abs(lam))


def test_build_k_contains_kkt_points_and_excludes_others():
    doc = _doc_from_text(_CONVEX1)
    prob = BilevelProblem.from_doc(doc)
    sys = lme_mod.build_kkt_system(prob)
    lme = lme_mod.lme_adjugate(sys)
    kset = lme_mod.build_K(sys, lme, prob)
    assert kset.eq or kset.ineq

    def in_k(pt):
        row = np.array([pt], dtype=float)
        for g in kset.eq:
            if abs(g.to_float().eval_many(row)[0]) > 1e-9:
                return False
        for g in kset.ineq:
            if g.to_float().eval_many(row)[0] < -1e-9:
                return False
        return True

    assert in_k([0.7, 0.7])      # interior stationary point
    assert in_k([-0.5, 0.0])     # boundary point with active multiplier
    assert not in_k([0.7, 0.2])  # not a lower-level KKT point
    assert not in_k([-0.5, 0.3])


def test_lme_search_sos_finds_low_degree_expression():
    doc = _doc_from_text(_CONVEX1)
    prob = BilevelProblem.from_doc(doc)
    found = lme_mod.lme_search_sos(prob, 2, [Fraction(1, 2), Fraction(1, 2)])
    assert found is not None
    sys = lme_mod.build_kkt_system(prob)
    diag = lme_mod.lme_validate(found.W, found.d, sys)
    assert diag.ok
    # degree bounds of the search: deg W <= 2l - deg G, deg d <= 2l
    assert max(e.degree() for row in found.W for e in row) <= 2 * 2 - 1
    assert max(e.degree() for e in found.d) <= 2 * 2
