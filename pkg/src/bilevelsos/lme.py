"""Lagrange multiplier expressions for the lower-level KKT system.

Given the lower problem min_z f(x,z) s.t. g(x,z) (eq then ineq), the KKT
stationarity and complementarity conditions are collected into G(x,y) and
fhat(x,y) with z replaced by y.  A Lagrange multiplier expression (LME) is
a pair (W, d) with W G = diag(d) as an exact polynomial identity; the
numerator polynomials phi = W fhat then express d_j * lambda_j, and the
KKT points embed into the polynomial set K built from them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .polyring import (
    EXACT,
    FLOAT,
    PolyError,
    Polynomial,
    VarSpace,
    exact_div,
    grad,
    mat_det_adj,
    mat_mul,
    monomials,
    rename_block,
)

__all__ = [
    "KktSystem",
    "LagrangeExpression",
    "KSet",
    "build_kkt_system",
    "lme_adjugate",
    "lme_validate",
    "lme_search_sos",
    "build_K",
]


@dataclass
class KktSystem:
    """G: (p + m2) x m2 over (x,y); fhat: length p + m2."""

    G: list  # rows of Polynomial
    fhat: list
    space: VarSpace  # (x, y)
    p: int
    m2: int
    g_eq: list  # lower equalities with z -> y
    g_ineq: list  # lower inequalities with z -> y
    f_lower: Polynomial  # lower objective with z -> y

    @property
    def g_all(self):
        return self.g_eq + self.g_ineq

    def max_degree(self) -> int:
        degs = [e.degree() for row in self.G for e in row] or [0]
        return max(degs)


@dataclass
class LagrangeExpression:
    W: list  # m2 x (p + m2)
    d: list  # length m2
    phi: list = field(default_factory=list)  # W . fhat
    source: str = "user"
    exact: bool = True
    diagnostics: dict = field(default_factory=dict)


@dataclass
class KSet:
    eq: list
    ineq: list


@dataclass
class LmeDiagnostics:
    ok: bool
    bad_entries: list  # (row, col, residual Polynomial)
    zero_d: list  # indices j with d_j identically zero
    residual_norm: float = 0.0

    def describe(self) -> str:
        if self.ok and not self.zero_d:
            return "LME identity W.G = diag(d) holds"
        lines = []
        for i, j, r in self.bad_entries:
            lines.append(f"entry ({i + 1},{j + 1}) residual {r.render()}")
        for j in self.zero_d:
            lines.append(f"d_{j + 1} is identically zero")
        return "; ".join(lines)


def build_kkt_system(prob) -> KktSystem:
    """Assemble G and fhat over (x, y) from the lower-level data."""
    space = prob.space  # (x, y)
    f_y = rename_block(prob.lower_obj, space, {"z": "y"})
    g_eq = [rename_block(g, space, {"z": "y"}) for g in prob.lower_eq]
    g_ineq = [rename_block(g, space, {"z": "y"}) for g in prob.lower_ineq]
    gs = g_eq + g_ineq
    p = prob.p
    m2 = len(gs)
    grads = [grad(g, "y") for g in gs]
    G = []
    for r in range(p):
        G.append([grads[j][r] for j in range(m2)])
    for j in range(m2):
        row = [Polynomial.zero(space) for _ in range(m2)]
        row[j] = gs[j]
        G.append(row)
    fhat = grad(f_y, "y") + [Polynomial.zero(space) for _ in range(m2)]
    return KktSystem(G=G, fhat=fhat, space=space, p=p, m2=m2,
                     g_eq=g_eq, g_ineq=g_ineq, f_lower=f_y)


def _transpose(M):
    return [list(col) for col in zip(*M)]


def _random_rational_point(dim: int, seed: int = 7):
    rng = np.random.default_rng(seed)
    return [Fraction(int(v), 17) for v in rng.integers(-60, 60, size=dim)]


def lme_adjugate(sys: KktSystem) -> LagrangeExpression:
    """Universal LME W = adj(G'G) G', d = det(G'G) 1 (often high degree)."""
    if sys.m2 == 0:
        return LagrangeExpression(W=[], d=[], phi=[], source="adjugate")
    Gt = _transpose(sys.G)
    H = mat_mul(Gt, sys.G)
    det, adj = mat_det_adj(H)
    singular = True
    for seed in range(5):
        pt = _random_rational_point(sys.space.dim, seed=11 + seed)
        if det.eval(pt) != 0:
            singular = False
            break
    if singular and det.is_zero():
        raise PolyError(
            "det(G'G) is identically zero; supply an LME or use lme_search_sos"
        )
    W = mat_mul(adj, Gt)
    d = [det for _ in range(sys.m2)]
    lme = LagrangeExpression(W=W, d=d, source="adjugate")
    diag = lme_validate(W, d, sys)
    if not diag.ok:
        raise PolyError(f"adjugate LME failed validation: {diag.describe()}")
    _finish(lme, sys)
    return lme


def _finish(lme: LagrangeExpression, sys: KktSystem):
    domain = lme.W[0][0].domain if lme.W else EXACT
    fhat = sys.fhat if domain == EXACT else [f.to_float() for f in sys.fhat]
    lme.phi = [
        sum((lme.W[j][r] * fhat[r] for r in range(len(fhat))),
            Polynomial.zero(sys.space, domain))
        for j in range(sys.m2)
    ]


def lme_validate(W, d, sys: KktSystem) -> LmeDiagnostics:
    """Check W.G = diag(d) exactly; report offending entries and zero d_j."""
    m2, p = sys.m2, sys.p
    if len(W) != m2 or any(len(row) != p + m2 for row in W):
        raise PolyError(f"W must be {m2} x {p + m2}")
    if len(d) != m2:
        raise PolyError(f"d must have {m2} entries")
    exact = all(e.domain == EXACT for row in W for e in row)
    bad = []
    resid = 0.0
    for i in range(m2):
        for j in range(m2):
            s = Polynomial.zero(sys.space, W[i][0].domain if W else EXACT)
            for r in range(p + m2):
                Grj = sys.G[r][j]
                s = s + W[i][r] * (Grj if s.domain == EXACT else Grj.to_float())
            tgt = d[i] if i == j else None
            if tgt is not None:
                s = s - (tgt if s.domain == EXACT else tgt.to_float())
            if exact:
                if not s.is_zero():
                    bad.append((i, j, s))
            else:
                r2 = max((abs(float(c)) for c in s.terms.values()), default=0.0)
                resid = max(resid, r2)
                if r2 > 1e-6:
                    bad.append((i, j, s))
    zero_d = [j for j in range(m2) if d[j].is_zero()]
    return LmeDiagnostics(ok=not bad, bad_entries=bad, zero_d=zero_d, residual_norm=resid)


def _scalar_ratio(a: Polynomial, b: Polynomial):
    """c with a = c*b, or None. Exact for exact domain, 1e-9-tolerant for float."""
    if a.is_zero() or b.is_zero():
        return None
    if set(a.terms) != set(b.terms):
        return None
    items = iter(b.terms.items())
    e0, c0 = next(items)
    ratio = a.terms[e0] / c0
    for e, c in b.terms.items():
        if a.domain == EXACT:
            if a.terms[e] != ratio * c:
                return None
        else:
            if abs(float(a.terms[e]) - float(ratio * c)) > 1e-9 * (1 + abs(float(ratio * c))):
                return None
    return ratio


def _d_classes(d):
    """Group the d_j into exact-scalar-multiple classes.

    Returns (reps, cls, ratios): d_j = ratios[j] * reps[cls[j]].
    """
    reps, cls, ratios = [], [], []
    for dj in d:
        found = False
        for ci, rep in enumerate(reps):
            r = _scalar_ratio(dj, rep)
            if r is not None:
                cls.append(ci)
                ratios.append(r)
                found = True
                break
        if not found:
            reps.append(dj)
            cls.append(len(reps) - 1)
            ratios.append(Fraction(1) if dj.domain == EXACT else 1.0)
    return reps, cls, ratios


def _try_div(a: Polynomial, b: Polynomial) -> Optional[Polynomial]:
    try:
        return exact_div(a, b)
    except PolyError:
        return None


def _clearing_factors(d):
    """A common multiple D of the d_j with quotients Dquot_j = D / d_j.

    Splits the d_j into multiplicative atoms by trial division (so shared
    factors are only counted once in D), then takes the max multiplicity of
    each atom.  Without shared-factor detection the product of the d_j can
    have far higher degree than their actual lcm, which makes the cleared
    stationarity conditions hopeless for the moment relaxation.
    """
    m2 = len(d)
    domain = d[0].domain
    one = Polynomial.const(d[0].space, 1, domain)
    reps, cls, ratios = _d_classes(d)

    def class_fallback():
        D = one
        for rep in reps:
            D = D * rep
        Dquot = []
        for j in range(m2):
            prod = one
            for ci, rep in enumerate(reps):
                if ci != cls[j]:
                    prod = prod * rep
            inv = (Fraction(1) / ratios[j]) if domain == EXACT else (1.0 / ratios[j])
            Dquot.append(prod.scale(inv))
        return D, Dquot

    if domain != EXACT:
        return class_fallback()

    # Split class representatives into atoms: whenever one rep divides
    # another with a non-constant quotient, keep the divisor and the quotient.
    atoms = [rep for rep in reps if rep.degree() >= 1]
    changed = True
    guard = 0
    while changed and guard < 50:
        changed = False
        guard += 1
        for i in range(len(atoms)):
            for j in range(len(atoms)):
                if i == j or atoms[j].degree() < 1:
                    continue
                if atoms[i].degree() <= atoms[j].degree():
                    continue
                q = _try_div(atoms[i], atoms[j])
                if q is not None and q.degree() >= 1:
                    atoms[i] = q
                    changed = True
        # drop scalar duplicates
        kept = []
        for a in atoms:
            if all(_scalar_ratio(a, b) is None for b in kept):
                kept.append(a)
        atoms = kept

    def factorize(dj):
        mult = [0] * len(atoms)
        rem = dj
        for ai in sorted(range(len(atoms)), key=lambda i: -atoms[i].degree()):
            while rem.degree() >= atoms[ai].degree():
                q = _try_div(rem, atoms[ai])
                if q is None:
                    break
                rem = q
                mult[ai] += 1
        return mult, rem

    mults = []
    for dj in d:
        for _ in range(m2 + 1):
            mult, rem = factorize(dj)
            if rem.is_constant():
                break
            atoms.append(rem)
            mults = [factorize(dk)[0] for dk in d[: len(mults)]]
        if not rem.is_constant():
            return class_fallback()
        mults.append(mult)
    consts = [factorize(dj)[1].constant_value() for dj in d]

    maxmult = [max(m[ai] for m in mults) for ai in range(len(atoms))]
    D = one
    for ai, a in enumerate(atoms):
        for _ in range(maxmult[ai]):
            D = D * a
    Dquot = []
    for j in range(m2):
        prod = one
        for ai, a in enumerate(atoms):
            for _ in range(maxmult[ai] - mults[j][ai]):
                prod = prod * a
        Dquot.append(prod.scale(Fraction(1) / consts[j]))
    for j in range(m2):
        if not (Dquot[j] * d[j] - D).is_zero():
            return class_fallback()
    return D, Dquot


def build_K(sys: KktSystem, lme: Optional[LagrangeExpression], prob) -> KSet:
    """Materialize the KKT-point set: stationarity cleared of denominators,
    complementarity for inequality multipliers, and their sign conditions."""
    space = sys.space
    if sys.m2 == 0:
        eqs = [g for g in grad(sys.f_lower, "y") if not g.is_zero()]
        return KSet(eq=eqs, ineq=[])
    if lme is None or not lme.phi:
        raise PolyError("build_K requires a finished LagrangeExpression")
    domain = lme.d[0].domain
    D, Dquot = _clearing_factors(lme.d)

    gs = sys.g_all
    grads = [grad(g, "y") for g in gs]
    f_grad = grad(sys.f_lower, "y")
    eqs = []
    for r in range(sys.p):
        s = D * (f_grad[r] if domain == EXACT else f_grad[r].to_float())
        for j in range(sys.m2):
            gj = grads[j][r] if domain == EXACT else grads[j][r].to_float()
            s = s - Dquot[j] * lme.phi[j] * gj
        if not s.is_zero():
            eqs.append(s)
    n_eq2 = len(sys.g_eq)
    ineqs = []
    for j in range(n_eq2, sys.m2):
        comp = lme.phi[j] * (gs[j] if domain == EXACT else gs[j].to_float())
        if not comp.is_zero():
            eqs.append(comp)
        if not lme.phi[j].is_zero():
            ineqs.append(lme.phi[j])
    return KSet(eq=eqs, ineq=ineqs)


# -- SOS search for low-degree LMEs ---------------------------------------


def _rationalize(p: Polynomial, max_den: int = 10**4) -> Polynomial:
    terms = {}
    for e, c in p.terms.items():
        fc = Fraction(float(c)).limit_denominator(max_den)
        if fc != 0:
            terms[e] = fc
    return Polynomial(p.space, terms, EXACT)


def lme_search_sos(prob, l: int, anchor) -> Optional[LagrangeExpression]:
    """Search a low-degree LME by convex optimization: maximize sum gamma_j
    subject to W G = diag(d), d(anchor) = 1, and d_j - gamma_j certified
    nonnegative on U via a degree-2l ideal/quadratic-module certificate.
    """
    from .momentsos import SosProgram, qmodule_monomials

    sys = build_kkt_system(prob)
    if 2 * l < sys.max_degree():
        raise PolyError("2l must be at least deg(G)")
    space = sys.space
    m2, p = sys.m2, sys.p
    Phi, Psi = prob.u_phi_psi()

    prog = SosProgram(space)
    degW = max(2 * l - sys.max_degree(), 0)
    W_lp = [[prog.unknown_poly(monomials(space, degW)) for _ in range(p + m2)] for _ in range(m2)]
    degd = min(2 * l, degW + sys.max_degree())
    d_lp = [prog.unknown_poly(monomials(space, degd)) for _ in range(m2)]
    gammas = [prog.nonneg_var() for _ in range(m2)]

    zero = Polynomial.zero(space, FLOAT)
    for i in range(m2):
        for j in range(m2):
            lp = {}
            for r in range(p + m2):
                if sys.G[r][j].is_zero():
                    continue
                lp = SosProgram.lp_add(lp, SosProgram.lp_mul_poly(W_lp[i][r], sys.G[r][j]))
            if i == j:
                lp = SosProgram.lp_add(lp, SosProgram.lp_scale(d_lp[i], -1.0))
            prog.require_equal(lp, zero)
    for i in range(m2):
        prog.require_linear(SosProgram.lp_eval_point(d_lp[i], anchor), 1.0)
    for j in range(m2):
        # d_j - gamma_j = sum lambda_i Phi_i + sigma_0 + sum sigma_t Psi_t
        lp = SosProgram.lp_scale(d_lp[j], -1.0)
        lp = SosProgram.lp_add(lp, SosProgram.lp_var(gammas[j], 1.0, dim=space.dim))
        for h in Phi:
            if h.degree() <= 2 * l:
                lam = prog.unknown_poly(monomials(space, 2 * l - h.degree()))
                lp = SosProgram.lp_add(lp, SosProgram.lp_mul_poly(lam, h))
        lp = SosProgram.lp_add(lp, prog.sos_lp(monomials(space, l)))
        for g in Psi:
            monos = qmodule_monomials(space, 2 * l, g.degree())
            if monos:
                lp = SosProgram.lp_add(lp, SosProgram.lp_mul_poly(prog.sos_lp(monos), g))
        prog.require_equal(lp, zero)
    prog.minimize({g: -1.0 for g in gammas})

    sol, cp = prog.solve()
    if sol.status not in ("optimal", "inaccurate"):
        return None

    W_f = [[prog.poly_value(W_lp[i][r], sol, cp) for r in range(p + m2)] for i in range(m2)]
    d_f = [prog.poly_value(d_lp[i], sol, cp) for i in range(m2)]

    def clean(q):
        scale = max((abs(float(c)) for c in q.terms.values()), default=1.0)
        return Polynomial(
            space,
            {e: c for e, c in q.terms.items() if abs(float(c)) > 1e-8 * max(1.0, scale)},
            FLOAT,
        )

    W_f = [[clean(e) for e in row] for row in W_f]
    d_f = [clean(e) for e in d_f]
    # attempt symbolic re-validation through rationalization
    W_x = [[_rationalize(e) for e in row] for row in W_f]
    d_x = [_rationalize(e) for e in d_f]
    diag = lme_validate(W_x, d_x, sys)
    if diag.ok and not diag.zero_d:
        lme = LagrangeExpression(W=W_x, d=d_x, source="search", exact=True)
    else:
        diag = lme_validate(W_f, d_f, sys)
        if not diag.ok:
            return None
        lme = LagrangeExpression(W=W_f, d=d_f, source="search", exact=False)
    lme.diagnostics = {"gammas": [float(sol.x[cp.nonneg_offset() + g[1]]) for g in gammas],
                       "residual": diag.residual_norm}
    _finish(lme, sys)
    return lme
