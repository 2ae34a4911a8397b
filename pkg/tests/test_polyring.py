"""Ring axioms, calculus, and exact linear algebra of the polynomial core."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bilevelsos.polyring import (
    EXACT,
    PolyError,
    Polynomial,
    VarSpace,
    exact_div,
    grad,
    mat_det_adj,
    mat_mul,
    monomial_count,
    monomials,
    rename_block,
    substitute,
)

SP2 = VarSpace.make(("x", 2))
SP3 = VarSpace.make(("x", 2), ("y", 1))


@st.composite
def polys(draw, space=SP2, max_deg=3, max_terms=4):
    terms = {}
    for _ in range(draw(st.integers(0, max_terms))):
        e = tuple(draw(st.integers(0, max_deg)) for _ in range(space.dim))
        c = Fraction(draw(st.integers(-50, 50)), draw(st.integers(1, 9)))
        terms[e] = terms.get(e, Fraction(0)) + c
    return Polynomial(space, terms)


points = st.lists(
    st.fractions(min_value=-5, max_value=5), min_size=SP2.dim, max_size=SP2.dim
)


@settings(max_examples=60, deadline=None)
@given(polys(), polys(), polys(), points)
def test_ring_axioms(a, b, c, pt):
    # commutativity, associativity, distributivity, additive inverse
    assert a + b == b + a
    assert a * b == b * a
    assert (a + b) + c == a + (b + c)
    assert (a * b) * c == a * (b * c)
    assert a * (b + c) == a * b + a * c
    assert (a - a).is_zero()
    # evaluation is a ring homomorphism
    assert (a * b + c).eval(pt) == a.eval(pt) * b.eval(pt) + c.eval(pt)


@settings(max_examples=40, deadline=None)
@given(polys(), st.integers(0, 4), points)
def test_pow_matches_repeated_product(a, k, pt):
    prod = Polynomial.const(SP2, 1)
    for _ in range(k):
        prod = prod * a
    assert a ** k == prod
    assert (a ** k).eval(pt) == a.eval(pt) ** k


@settings(max_examples=40, deadline=None)
@given(polys(), polys(), st.integers(0, 1))
def test_diff_is_linear_and_leibniz(a, b, i):
    assert (a + b).diff(i) == a.diff(i) + b.diff(i)
    assert (a * b).diff(i) == a.diff(i) * b + a * b.diff(i)


@settings(max_examples=30, deadline=None)
@given(polys(max_deg=4))
def test_gradient_matches_finite_differences(p):
    pf = p.to_float()
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1.0, 1.0, size=(5, SP2.dim))
    h = 1e-6
    for i in range(SP2.dim):
        shift = np.zeros(SP2.dim)
        shift[i] = h
        fd = (pf.eval_many(pts + shift) - pf.eval_many(pts - shift)) / (2 * h)
        an = pf.diff(i).eval_many(pts)
        scale = 1.0 + np.max(np.abs(an)) + np.max(np.abs(pf.eval_many(pts)))
        assert np.max(np.abs(fd - an)) <= 1e-6 * scale


@settings(max_examples=40, deadline=None)
@given(polys(), polys())
def test_exact_div_roundtrip(a, b):
    if b.is_zero():
        return
    q = exact_div(a * b, b)
    assert q == a


def test_exact_div_rejects_nondivisor():
    x0 = Polynomial.var(SP2, 0)
    x1 = Polynomial.var(SP2, 1)
    with pytest.raises(PolyError):
        exact_div(x0 * x0 + 1, x1)


def test_substitute_numeric_and_polynomial():
    x = Polynomial.variable(SP3, "x", 1)
    y = Polynomial.variable(SP3, "y", 1)
    p = x * x + y * x + 2
    # numeric substitution of the y block
    q = substitute(p, "y", [Fraction(3)])
    assert q.eval([Fraction(2), Fraction(0), Fraction(0)]) == 4 + 6 + 2
    # polynomial substitution y -> x2^2, landing in the x-only space
    r = substitute(p, "y", [Polynomial.variable(SP2, "x", 2) ** 2])
    assert r.space == SP2
    assert r.eval([2, 3]) == 4 + 9 * 2 + 2


def test_rename_block_preserves_values():
    xz = VarSpace.make(("x", 1), ("z", 1))
    xy = VarSpace.make(("x", 1), ("y", 1))
    p = Polynomial.variable(xz, "x", 1) * Polynomial.variable(xz, "z", 1)
    q = rename_block(p, xy, {"z": "y"})
    assert q.space == xy
    assert q.eval([3, 5]) == 15


def test_grad_block_order():
    p = Polynomial.variable(SP3, "x", 2) ** 2 + Polynomial.variable(SP3, "y", 1)
    gx = grad(p, "x")
    gy = grad(p, "y")
    assert gx[0].is_zero()
    assert gx[1].eval([1, 4, 0]) == 8
    assert gy[0].eval([0, 0, 0]) == 1


def test_monomials_graded_count_and_order():
    ms = monomials(2, 2)
    assert len(ms) == monomial_count(2, 2) == 6
    assert ms[0] == (0, 0)
    degs = [sum(m) for m in ms]
    assert degs == sorted(degs)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.lists(st.integers(-4, 4), min_size=3, max_size=3),
                min_size=3, max_size=3))
def test_det_adj_matches_numeric(rows):
    M = [[Polynomial.const(SP2, v) for v in r] for r in rows]
    det, adj = mat_det_adj(M)
    npdet = round(float(np.linalg.det(np.array(rows, dtype=float))))
    assert det.constant_value() == npdet
    # adj(M) . M = det(M) I
    prod = mat_mul(adj, M)
    for i in range(3):
        for j in range(3):
            want = det if i == j else Polynomial.zero(SP2)
            assert prod[i][j] == want


def test_render_parse_roundtrip():
    from bilevelsos.parser import parse_poly

    p = Polynomial(SP3, {(2, 0, 1): Fraction(3, 7), (0, 1, 0): Fraction(-2), (0, 0, 0): Fraction(1, 2)})
    assert parse_poly(p.render(), SP3) == p
