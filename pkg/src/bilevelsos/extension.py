"""Polynomial extensions of lower-level minimizers.

Given an iterate (x^, y^) and a lower-level minimizer z^, a polynomial
extension is a tuple q(x,y) with q(x^,y^) = z^ and q(x,y) feasible for the
lower level at every (x,y) in the constraint set U.  Closed-form rules are
available for box, simplex, annular, and mixed constraint structures; an
SOS search covers linear-in-z constraints without a recognized structure.
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
    monomials,
    rename_block,
    substitute,
)

__all__ = [
    "ExtensionRule",
    "Extension",
    "build_extension",
    "search_extension_sos",
    "verify_extension",
]


@dataclass
class ExtensionRule:
    """Validated rule descriptor. ``params`` holds parsed polynomials over x."""

    variant: str  # simple | box | linear_box | simplex | annular | mixed | sos_search
    params: dict = field(default_factory=dict)
    coords: Optional[list] = None  # 0-based z indices, for sub-rules of mixed

    @staticmethod
    def from_descriptor(desc: dict, prob, coords=None) -> "ExtensionRule":
        from .parser import ParseError, parse_poly

        if not isinstance(desc, dict) or "variant" not in desc:
            raise ParseError("extension descriptor needs a 'variant' field")
        variant = desc["variant"]
        space = prob.space  # parameters are functions of x; parsed over (x, y)
        p_here = len(coords) if coords is not None else prob.p

        def polys(key, count=None):
            vals = desc.get(key)
            if not isinstance(vals, list) or (count is not None and len(vals) != count):
                raise ParseError(f"extension.{key} must be a list of {count} expressions")
            return [parse_poly(t, space) for t in vals]

        def poly(key):
            if key not in desc:
                raise ParseError(f"extension.{key} missing")
            return parse_poly(desc[key], space)

        if variant == "simple":
            return ExtensionRule("simple", coords=coords)
        if variant == "box":
            return ExtensionRule(
                "box", {"l": polys("l", p_here), "u": polys("u", p_here)}, coords
            )
        if variant == "linear_box":
            A = np.array(desc["A"], dtype=float)
            B = np.array(desc["B"], dtype=float)
            m = len(A)
            if A.shape != (m, p_here) or B.shape != (p_here, m):
                raise ParseError("extension.linear_box: A must be m x p and B p x m")
            if not np.allclose(A @ B, np.eye(m), atol=1e-9):
                raise ParseError("extension.linear_box: B is not a right inverse of A")
            return ExtensionRule(
                "linear_box",
                {"A": A, "B": B, "l": polys("l", m), "u": polys("u", m)},
                coords,
            )
        if variant == "simplex":
            return ExtensionRule(
                "simplex",
                {"a": polys("a", p_here), "l": polys("l", p_here), "u": poly("u")},
                coords,
            )
        if variant == "annular":
            deg = desc.get("degree", 2)
            if not isinstance(deg, int) or deg <= 0 or deg % 2:
                raise ParseError("extension.annular: degree must be a positive even integer")
            return ExtensionRule(
                "annular",
                {"a": polys("a", p_here), "r": poly("r"), "R": poly("R"), "degree": deg},
                coords,
            )
        if variant == "mixed":
            parts = desc.get("parts")
            if not isinstance(parts, list) or not parts:
                raise ParseError("extension.mixed needs a nonempty 'parts' list")
            seen = set()
            sub = []
            for part in parts:
                cs = part.get("coords")
                if not isinstance(cs, list) or not cs:
                    raise ParseError("mixed part needs 1-based 'coords'")
                cs0 = [c - 1 for c in cs]
                if any(c < 0 or c >= prob.p for c in cs0) or seen & set(cs0):
                    raise ParseError("mixed parts must cover disjoint valid coordinates")
                seen |= set(cs0)
                sub.append(ExtensionRule.from_descriptor(part["rule"], prob, coords=cs0))
            if seen != set(range(prob.p)):
                raise ParseError("mixed parts must cover every z coordinate")
            return ExtensionRule("mixed", {"parts": sub}, coords)
        if variant == "sos_search":
            l = desc.get("l", 2)
            if not isinstance(l, int) or l < 1:
                raise ParseError("extension.sos_search: 'l' must be a positive integer")
            return ExtensionRule("sos_search", {"l": l}, coords)
        raise ParseError(f"unknown extension variant {variant!r}")


@dataclass
class Extension:
    q: list  # PolyVec of length p over (x, y)
    rule: Optional[ExtensionRule]
    anchor: tuple  # (x^, y^, z^)
    certificates: dict = field(default_factory=dict)


def _is_exact_anchor(anchor) -> bool:
    return all(
        isinstance(v, (int, Fraction)) for part in anchor for v in part
    )


def _num(v, exact: bool):
    return Fraction(v) if exact else float(v)


def _eval_at_x(p: Polynomial, xhat, exact: bool):
    """Evaluate a parameter polynomial (over (x,y), y-free) at x = xhat."""
    q = p if exact else p.to_float()
    vals = list(xhat) + [0] * (q.space.dim - len(xhat))
    return q.eval([_num(v, exact) for v in vals])


def _const(space, v, exact):
    return Polynomial.const(space, _num(v, exact), EXACT if exact else FLOAT)


def _match_constraint(target: Polynomial, pool) -> bool:
    """Is ``target`` a positive multiple of some pool polynomial?"""
    from .lme import _scalar_ratio

    for g in pool:
        r = _scalar_ratio(target.to_float(), g.to_float())
        if r is not None and float(r) > 0:
            return True
    return False


def _embedded_match(target: Polynomial, g: Polynomial, group_vars) -> bool:
    """Is ``g`` = c * target + (terms free of the group variables), c > 0?"""
    tf, gf = target.to_float(), g.to_float()
    c = None
    for e, tc in tf.terms.items():
        if any(e[i] for i in group_vars):
            gc = gf.terms.get(e)
            if gc is None:
                return False
            r = float(gc) / float(tc)
            if c is None:
                c = r
            elif abs(r - c) > 1e-9 * (1 + abs(c)):
                return False
    if c is None or c <= 0:
        return False
    resid = gf - tf.scale(c)
    return all(
        not any(e[i] for i in group_vars) for e in resid.terms
    )


def _structural_check(rule: ExtensionRule, prob, coords):
    """Syntactic match of the declared rule against the lower constraints."""
    zsp = prob.lower_space
    pool = list(prob.lower_ineq)

    def zvar(j):
        return Polynomial.variable(zsp, "z", coords[j] + 1)

    def as_xz(p_xy):
        return rename_block(p_xy, zsp, {"y": "z"})

    if rule.variant == "simple":
        for g in prob.lower_ineq + prob.lower_eq:
            if any(i in zsp.block_range("x") for i in g.variables_used()):
                raise PolyError("simple rule requires an x-free lower feasible set")
        return
    if rule.variant == "box":
        for j in range(len(coords)):
            lo = zvar(j) - as_xz(rule.params["l"][j])
            hi = as_xz(rule.params["u"][j]) - zvar(j)
            if not (_match_constraint(lo, pool) and _match_constraint(hi, pool)):
                raise PolyError(f"box rule does not match constraints of z{coords[j] + 1}")
        return
    if rule.variant == "simplex":
        a = [as_xz(t) for t in rule.params["a"]]
        cap = as_xz(rule.params["u"])
        for j in range(len(coords)):
            lo = zvar(j) - as_xz(rule.params["l"][j])
            if not _match_constraint(lo, pool):
                raise PolyError(f"simplex rule: missing z{coords[j] + 1} lower bound")
            cap = cap - a[j] * zvar(j)
        if not _match_constraint(cap, pool):
            raise PolyError("simplex rule: missing capacity constraint")
        return
    if rule.variant == "annular":
        d = rule.params["degree"]
        a = [as_xz(t) for t in rule.params["a"]]
        nd = Polynomial.zero(zsp)
        for j in range(len(coords)):
            nd = nd + (zvar(j) - a[j]) ** d
        lo = nd - as_xz(rule.params["r"]) ** d
        hi = as_xz(rule.params["R"]) ** d - nd
        # The norm bound may sit inside a joint constraint that also carries
        # coordinates outside this group (their contribution only tightens
        # it); accept such a pool constraint too.
        in_group = {zsp.var_index("z", c + 1) for c in coords}
        if not rule.params["r"].is_zero() and not _match_constraint(lo, pool):
            raise PolyError("annular rule does not match the inner norm constraint")
        if not (
            _match_constraint(hi, pool)
            or any(_embedded_match(hi, g, in_group) for g in pool)
        ):
            raise PolyError("annular rule does not match the outer norm constraint")
        return
    if rule.variant == "linear_box":
        A = rule.params["A"]
        for i in range(len(A)):
            az = Polynomial.zero(zsp)
            for j in range(len(coords)):
                az = az + _const(zsp, Fraction(A[i][j]).limit_denominator(10**6), True) * zvar(j)
            lo = az - as_xz(rule.params["l"][i])
            hi = as_xz(rule.params["u"][i]) - az
            if not (_match_constraint(lo, pool) and _match_constraint(hi, pool)):
                raise PolyError(f"linear_box rule: row {i + 1} not matched")
        return


def _anchor_feasible(prob, anchor, tol=1e-6):
    xh, yh, zh = anchor
    pt = np.array([float(v) for v in list(xh) + list(zh)])[None, :]
    for g in prob.lower_eq:
        if abs(g.to_float().eval_many(pt)[0]) > tol * (1 + _coef_scale(g, pt[0])):
            raise PolyError("anchor z is infeasible for Z(x): equality violated")
    for g in prob.lower_ineq:
        if g.to_float().eval_many(pt)[0] < -tol * (1 + _coef_scale(g, pt[0])):
            raise PolyError(f"anchor z is infeasible for Z(x): {g.render()} < 0")


def _coef_scale(p: Polynomial, pt) -> float:
    m = max(1.0, float(np.max(np.abs(pt))) if len(pt) else 1.0)
    return sum(abs(float(c)) * m ** sum(e) for e, c in p.terms.items())


def build_extension(rule: ExtensionRule, prob, anchor) -> Extension:
    """Instantiate a rule at an anchor (x^, y^, z^), with the degenerate
    fallbacks (zero weights) whenever an interpolation denominator vanishes."""
    xh, yh, zh = anchor
    _anchor_feasible(prob, anchor)
    exact = _is_exact_anchor(anchor)
    space = prob.space
    coords = rule.coords if rule.coords is not None else list(range(prob.p))

    if rule.variant == "mixed":
        q = [None] * prob.p
        for part in rule.params["parts"]:
            sub = build_extension(part, prob, anchor)
            for j, c in enumerate(part.coords):
                q[c] = sub.q[j]
        return Extension(q=q, rule=rule, anchor=anchor)

    _structural_check(rule, prob, coords)
    zh_c = [zh[c] for c in coords]

    if rule.variant == "simple":
        q = [_const(space, v, exact) for v in zh_c]
        return Extension(q=q, rule=rule, anchor=anchor)

    if rule.variant == "box":
        q = []
        for j in range(len(coords)):
            l, u = rule.params["l"][j], rule.params["u"][j]
            lh, uh = _eval_at_x(l, xh, exact), _eval_at_x(u, xh, exact)
            den = uh - lh
            mu = _num(0, exact) if _near_zero(den, exact) else (uh - _num(zh_c[j], exact)) / den
            lq = l if exact else l.to_float()
            uq = u if exact else u.to_float()
            q.append(lq.scale(mu) + uq.scale(_num(1, exact) - mu))
        return Extension(q=q, rule=rule, anchor=anchor)

    if rule.variant == "linear_box":
        A, B = rule.params["A"], rule.params["B"]
        m = len(A)
        ws = []
        Az = A @ np.array([float(v) for v in zh_c])
        for i in range(m):
            l, u = rule.params["l"][i], rule.params["u"][i]
            lh, uh = float(_eval_at_x(l, xh, False)), float(_eval_at_x(u, xh, False))
            den = uh - lh
            mu = 0.0 if abs(den) < 1e-12 else (uh - Az[i]) / den
            ws.append(l.to_float().scale(mu) + u.to_float().scale(1.0 - mu))
        shift = np.array([float(v) for v in zh_c]) - B @ Az
        q = []
        for j in range(len(coords)):
            qj = _const(space, shift[j], False)
            for i in range(m):
                qj = qj + ws[i].scale(float(B[j][i]))
            q.append(qj)
        return Extension(q=q, rule=rule, anchor=anchor)

    if rule.variant == "simplex":
        a, ls, u = rule.params["a"], rule.params["l"], rule.params["u"]
        slack = u
        for aj, lj in zip(a, ls):
            slack = slack - aj * lj
        q = []
        for j in range(len(coords)):
            # t_j = (u - a'l)/a_j must divide exactly; a_j t_j is the slack
            t_j = exact_div(slack, a[j])
            th = _eval_at_x(t_j, xh, exact)
            lh = _eval_at_x(ls[j], xh, exact)
            c_j = _num(0, exact) if _near_zero(th, exact) else (_num(zh_c[j], exact) - lh) / th
            lq = ls[j] if exact else ls[j].to_float()
            tq = t_j if exact else t_j.to_float()
            q.append(lq + tq.scale(c_j))
        return Extension(q=q, rule=rule, anchor=anchor)

    if rule.variant == "annular":
        a, r, R = rule.params["a"], rule.params["r"], rule.params["R"]
        deg = rule.params["degree"]
        pp = len(coords)
        diff = [float(zh_c[j]) - float(_eval_at_x(a[j], xh, False)) for j in range(pp)]
        nu = sum(abs(v) ** deg for v in diff) ** (1.0 / deg)
        rh = float(_eval_at_x(r, xh, False))
        Rh = float(_eval_at_x(R, xh, False))
        if nu <= 1e-6 * (1.0 + abs(Rh)):
            nu = 0.0
            s = [pp ** (-1.0 / deg)] * pp
        else:
            s = [v / nu for v in diff]
        den = Rh - rh
        mu = 0.0 if abs(den) < 1e-12 else (Rh - nu) / den
        qprime = r.to_float().scale(mu) + R.to_float().scale(1.0 - mu)
        q = [a[j].to_float() + qprime.scale(s[j]) for j in range(pp)]
        return Extension(q=q, rule=rule, anchor=anchor)

    if rule.variant == "sos_search":
        return search_extension_sos(prob, rule.params["l"], anchor)

    raise PolyError(f"unhandled extension variant {rule.variant!r}")


def _near_zero(v, exact: bool) -> bool:
    return v == 0 if exact else abs(float(v)) < 1e-9


# -- SOS search ------------------------------------------------------------


def search_extension_sos(prob, l: int, anchor) -> Optional[Extension]:
    """Find q with q(anchor) = z^ and g_j(x, q) in Ideal(Phi) + Qmod(Psi)
    of degree 2l.  Requires lower constraints linear in z (equalities must
    have been eliminated beforehand)."""
    from .momentsos import SosProgram, qmodule_monomials

    if prob.lower_eq:
        raise PolyError("eliminate lower-level equalities before the SOS search")
    space = prob.space
    xh, yh, zh = anchor
    pt = [float(v) for v in list(xh) + list(yh)]
    zsp = prob.lower_space
    # linearity in z: each g_j must have z-degree <= 1
    zrange = zsp.block_range("z")
    for g in prob.lower_ineq:
        for e in g.terms:
            if sum(e[i] for i in zrange) > 1:
                raise PolyError("SOS extension search needs constraints linear in z")
    if l < 1:
        raise PolyError("l must be at least 1")

    Phi, Psi = prob.u_phi_psi()
    prog = SosProgram(space)
    deg_q = l
    q_lp = [prog.unknown_poly(monomials(space, deg_q)) for _ in range(prob.p)]
    zero = Polynomial.zero(space, FLOAT)

    for g in prob.lower_ineq:
        # g(x, z) = g0(x) + sum_r c_r(x) z_r with c_r = dg/dz_r
        g0 = rename_block(substitute(g, "z", [0] * prob.p), space, {"z": "y"})
        lp = SosProgram.lp_from_poly(g0)
        for r in range(prob.p):
            c_r = rename_block(g.diff(zsp.var_index("z", r + 1)), space, {"z": "y"})
            if not c_r.is_zero():
                lp = SosProgram.lp_add(lp, SosProgram.lp_mul_poly(q_lp[r], c_r))
        # membership: g(x, q) - sigma0 - sum sigma_t Psi_t - sum lam_i Phi_i = 0
        lp = SosProgram.lp_add(lp, SosProgram.lp_scale(prog.sos_lp(monomials(space, l)), -1.0))
        for psi in Psi:
            monos = qmodule_monomials(space, 2 * l, psi.degree())
            if monos:
                lp = SosProgram.lp_add(
                    lp, SosProgram.lp_scale(SosProgram.lp_mul_poly(prog.sos_lp(monos), psi), -1.0)
                )
        for phi in Phi:
            if phi.degree() <= 2 * l:
                lam = prog.unknown_poly(monomials(space, 2 * l - phi.degree()))
                lp = SosProgram.lp_add(lp, SosProgram.lp_mul_poly(lam, phi))
        prog.require_equal(lp, zero)

    for r in range(prob.p):
        prog.require_linear(SosProgram.lp_eval_point(q_lp[r], pt), float(zh[r]))

    sol, cp = prog.solve()
    if sol.status not in ("optimal", "inaccurate"):
        return None
    q = []
    for r in range(prob.p):
        poly = prog.poly_value(q_lp[r], sol, cp)
        scale = max((abs(float(c)) for c in poly.terms.values()), default=1.0)
        poly = Polynomial(
            space,
            {e: c for e, c in poly.terms.items() if abs(float(c)) > 1e-8 * max(1.0, scale)},
            FLOAT,
        )
        q.append(poly)
    return Extension(q=q, rule=ExtensionRule("sos_search", {"l": l}), anchor=anchor,
                     certificates={"status": sol.status})


# -- verification ----------------------------------------------------------


def verify_extension(ext: Extension, prob, anchor=None, n_samples: int = 500, seed: int = 0):
    """Diagnostic check of the extension contract.

    (i) q(x^, y^) = z^; (ii) on sampled points of U, the composed lower
    constraints hold: g_j(x, q) >= -1e-8 (inequalities), |g_i| <= 1e-8
    (equalities), with magnitude-aware scaling.  Returns a dict with pass
    flags and failure witnesses.
    """
    anchor = anchor or ext.anchor
    xh, yh, zh = anchor
    pt = np.array([float(v) for v in list(xh) + list(yh)])[None, :]
    qvals = np.array([q.to_float().eval_many(pt)[0] for q in ext.q])
    anchor_err = float(np.max(np.abs(qvals - np.array([float(v) for v in zh]))))
    anchor_ok = anchor_err <= 1e-9 * (1.0 + float(np.max(np.abs(qvals))))

    comp_ineq = [substitute(g.to_float(), "z", [q.to_float() for q in ext.q])
                 for g in prob.lower_ineq]
    comp_eq = [substitute(g.to_float(), "z", [q.to_float() for q in ext.q])
               for g in prob.lower_eq]

    pts, requested = prob.sample_U(n_samples, seed=seed)
    witnesses = []
    n_checked = len(pts)
    if n_checked:
        for g in comp_ineq:
            vals = g.eval_many(pts)
            for i in np.where(vals < -1e-8 * (1.0 + _coef_scale(g, pts[np.argmin(vals)])))[0][:3]:
                witnesses.append((pts[i], float(vals[i]), g.render()))
        for g in comp_eq:
            vals = np.abs(g.eval_many(pts))
            for i in np.where(vals > 1e-8 * (1.0 + _coef_scale(g, pts[np.argmax(vals)])))[0][:3]:
                witnesses.append((pts[i], float(vals[i]), g.render()))
    return {
        "anchor_ok": anchor_ok,
        "anchor_error": anchor_err,
        "samples_checked": int(n_checked),
        "samples_requested": int(requested),
        "feasible_ok": not witnesses,
        "witnesses": witnesses,
        "ok": anchor_ok and not witnesses and n_checked > 0,
    }
