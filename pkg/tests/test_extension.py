"""Polynomial extension rules: anchor interpolation, sampled feasibility,
and the exchange cut they generate."""

import json

import numpy as np
import pytest

from bilevelsos import extension as ext_mod
from bilevelsos.bilevel import BilevelProblem, add_cut
from bilevelsos.parser import parse_problem_doc
from bilevelsos.polyring import PolyError

from conftest import load_doc, load_problem, problem_bytes

RULED = ["simplex", "ring_lin", "ex41"]


def _anchor_for(prob):
    cfg = prob.config.get("ext_anchor")
    if cfg is not None and len(cfg) == prob.n + 2 * prob.p:
        return (list(cfg[: prob.n]),
                list(cfg[prob.n: prob.n + prob.p]),
                list(cfg[prob.n + prob.p:]))
    pts, _ = prob.sample_U(1, seed=0)
    assert len(pts), "no feasible sample point for the anchor"
    xh = [float(v) for v in pts[0][: prob.n]]
    yh = [float(v) for v in pts[0][prob.n:]]
    # the y-part of a U point satisfies the lower constraints, so z = y works
    return (xh, yh, list(yh))


@pytest.mark.parametrize("name", RULED)
def test_bundled_rules_anchor_and_feasibility(name):
    prob = load_problem(name)
    anchor = _anchor_for(prob)
    ext = ext_mod.build_extension(prob.extension_rule, prob, anchor)
    res = ext_mod.verify_extension(ext, prob, n_samples=500, seed=0)
    assert res["anchor_ok"], f"{name}: anchor error {res['anchor_error']:.2e}"
    assert res["samples_checked"] > 0
    assert res["feasible_ok"], f"{name}: witnesses {res['witnesses'][:2]}"


def test_simple_rule_is_the_constant_extension():
    # lower-level feasible set independent of x: q may be the constant z
    prob = load_problem("kkt_gap")
    rule = ext_mod.ExtensionRule("simple")
    anchor = ([0.5], [0.2], [0.7])
    ext = ext_mod.build_extension(rule, prob, anchor)
    pt = np.array([[3.0, -2.0]])
    vals = [q.to_float().eval_many(pt)[0] for q in ext.q]
    assert np.allclose(vals, [0.7])


def test_cut_excludes_iterate_and_keeps_optimum():
    prob = load_problem("kkt_gap")
    # the first iterate and its lower-level improvement
    x_k, y_k, z_k = [-1.0], [1.0], [0.0]
    ext = ext_mod.build_extension(ext_mod.ExtensionRule("simple"), prob, (x_k, y_k, z_k))
    cuts = []
    cut = add_cut(cuts, ext, prob, x_k, y_k, v_k=-0.5)
    assert len(cuts) == 1
    # negative at the excluded iterate, nonnegative where y solves the lower level
    at_iter = cut.eval_many(np.array([x_k + y_k]))[0]
    assert at_iter < -1e-6
    at_true = cut.eval_many(np.array([[0.0, 1.0]]))[0]
    assert at_true >= -1e-9


def test_cut_rejects_non_excluding_extension():
    prob = load_problem("kkt_gap")
    # an anchor whose constant extension does not improve on y_k
    x_k, y_k = [0.0], [1.0]
    ext = ext_mod.build_extension(
        ext_mod.ExtensionRule("simple"), prob, (x_k, y_k, list(y_k)))
    with pytest.raises(PolyError):
        add_cut([], ext, prob, x_k, y_k, v_k=0.0)


def test_missing_variant_rejected():
    prob = load_problem("kkt_gap")
    with pytest.raises(Exception):
        ext_mod.ExtensionRule.from_descriptor({"no_variant": 1}, prob)


def test_simple_rule_guard_for_x_dependent_lower_level():
    prob = load_problem("simplex")
    anchor = _anchor_for(prob)
    with pytest.raises(PolyError):
        ext_mod.build_extension(ext_mod.ExtensionRule("simple"), prob, anchor)


def test_verify_detects_broken_extension():
    # a constant map is not a valid extension when Z(x) moves with x:
    # the composed lower constraints must fail on some sampled point of U
    from bilevelsos.polyring import Polynomial

    prob = load_problem("simplex")
    anchor = _anchor_for(prob)
    q = [Polynomial.const(prob.space, float(z), "float") for z in anchor[2]]
    ext = ext_mod.Extension(q=q, rule=None, anchor=anchor)
    res = ext_mod.verify_extension(ext, prob, n_samples=500, seed=0)
    assert not res["feasible_ok"]
    assert res["witnesses"]
