"""Exchange-loop driver for global bilevel polynomial optimization.

The loop solves the single-level KKT relaxation (P_k) over U_k = U ∩ K,
checks the candidate by solving the lower level (Q_k) at the iterate, and
when the check fails appends the cut f(x, q(x,y)) - f(x,y) >= 0 built from
a polynomial extension q of the lower-level minimizer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from . import extension as ext_mod
from . import lme as lme_mod
from .momentsos import Pop, PopConfig, PopResult, solve_pop, _point_feasible
from .polyring import (
    EXACT,
    PolyError,
    Polynomial,
    VarSpace,
    grad,
    rename_block,
    substitute,
)

__all__ = [
    "BilevelProblem",
    "IterateRecord",
    "SolveReport",
    "RunConfig",
    "assemble_P0",
    "assemble_Qk",
    "add_cut",
    "run",
    "check_cq",
]


@dataclass
class RunConfig:
    """Driver and relaxation settings; None fields fall back to the problem
    file's config block, then to the documented defaults."""

    eps: float = 1e-6
    max_loops: int = 20
    min_order: Optional[int] = None
    max_order: Optional[int] = None
    rank_tol: float = 1e-6
    feas_tol: float = 1e-6
    solver_tol: float = 1e-8
    seed: int = 0
    report_format: str = "text"


@dataclass
class BilevelProblem:
    n: int
    p: int
    F: Polynomial  # upper objective over (x, y)
    upper_eq: list
    upper_ineq: list
    lower_obj: Polynomial  # over (x, z)
    lower_eq: list
    lower_ineq: list
    lme: Optional[lme_mod.LagrangeExpression] = None
    extension_rule: Optional[ext_mod.ExtensionRule] = None
    config: dict = field(default_factory=dict)

    @property
    def space(self) -> VarSpace:
        return VarSpace.make(("x", self.n), ("y", self.p))

    @property
    def lower_space(self) -> VarSpace:
        return VarSpace.make(("x", self.n), ("z", self.p))

    @staticmethod
    def from_doc(doc) -> "BilevelProblem":
        prob = BilevelProblem(
            n=doc.n, p=doc.p,
            F=doc.upper_obj, upper_eq=doc.upper_eq, upper_ineq=doc.upper_ineq,
            lower_obj=doc.lower_obj, lower_eq=doc.lower_eq, lower_ineq=doc.lower_ineq,
            config=doc.config,
        )
        if doc.lme_W is not None:
            sys = lme_mod.build_kkt_system(prob)
            diag = lme_mod.lme_validate(doc.lme_W, doc.lme_d, sys)
            if not diag.ok or diag.zero_d:
                raise PolyError(f"supplied LME rejected: {diag.describe()}")
            prob.lme = lme_mod.LagrangeExpression(W=doc.lme_W, d=doc.lme_d, source="user")
            lme_mod._finish(prob.lme, sys)
        if doc.extension is not None:
            prob.extension_rule = ext_mod.ExtensionRule.from_descriptor(doc.extension, prob)
        return prob

    # -- constraint views --------------------------------------------------

    def lower_at_y(self):
        sp = self.space
        return (
            [rename_block(g, sp, {"z": "y"}) for g in self.lower_eq],
            [rename_block(g, sp, {"z": "y"}) for g in self.lower_ineq],
        )

    def u_phi_psi(self):
        """U of the single-level reformulation: (equalities, inequalities)."""
        le, li = self.lower_at_y()
        return list(self.upper_eq) + le, list(self.upper_ineq) + li

    def is_sbop(self) -> bool:
        """Z(x) independent of x: no lower constraint mentions x."""
        xr = set(self.lower_space.block_range("x"))
        return all(
            not (set(g.variables_used()) & xr)
            for g in self.lower_eq + self.lower_ineq
        )

    def sample_box(self):
        box = self.config.get("sample_box", [-10.0, 10.0])
        return float(box[0]), float(box[1])

    def sample_U(self, n_samples: int, seed: int = 0):
        """Rejection-sample U inside the configured bounding box.

        Equality constraints (measure-zero) are not used for rejection; the
        returned points satisfy all inequality constraints of U.  Returns
        (points array, number requested).
        """
        lo, hi = self.sample_box()
        Phi, Psi = self.u_phi_psi()
        psis = [g.to_float() for g in Psi]
        rng = np.random.default_rng(seed)
        dim = self.n + self.p
        found = []
        for _ in range(60):
            batch = rng.uniform(lo, hi, size=(max(40 * n_samples, 10000), dim))
            mask = np.ones(len(batch), dtype=bool)
            for g in psis:
                mask &= g.eval_many(batch) >= 0
                if not mask.any():
                    break
            found.append(batch[mask])
            if sum(len(f) for f in found) >= n_samples:
                break
        pts = np.concatenate(found) if found else np.zeros((0, dim))
        return pts[:n_samples], n_samples


@dataclass
class IterateRecord:
    k: int
    x: list
    y: list
    F_k: float
    v_k: Optional[float] = None
    z: Optional[list] = None
    q: Optional[list] = None  # rendered extension polynomials
    p_diag: Optional[dict] = None
    q_diag: Optional[dict] = None


@dataclass
class SolveReport:
    status: str  # optimal | infeasible_or_no_kkt | max_loops | relaxation_unresolved
    F_star: Optional[float]
    x_star: Optional[list]
    y_star: Optional[list]
    loops: list
    wall_time: float
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "status": self.status,
            "F_star": self.F_star,
            "x_star": self.x_star,
            "y_star": self.y_star,
            "wall_time": self.wall_time,
            "message": self.message,
            "loops": [asdict(r) for r in self.loops],
        }


def _pop_diag(res: PopResult) -> dict:
    return {
        "status": res.status,
        "value": res.value,
        "order": res.order_used,
        "flat": res.flat,
        "ranks": list(res.ranks),
        "n_minimizers": len(res.minimizers),
    }


def assemble_P0(prob: BilevelProblem, kset: lme_mod.KSet) -> Pop:
    """(P_0): min F over U ∩ K in the (x, y) space."""
    le, li = prob.lower_at_y()
    eq = list(prob.upper_eq) + le + list(kset.eq)
    ineq = list(prob.upper_ineq) + li + list(kset.ineq)
    f = prob.F.to_float()
    return Pop(
        f,
        tuple(g.to_float() for g in eq),
        tuple(g.to_float() for g in ineq),
        prob.space,
    )


def _restrict_to_z(p_xy: Polynomial, x_k, zspace: VarSpace) -> Polynomial:
    """Fix x = x_k in a polynomial over (x, y) and re-home y as z."""
    fixed = substitute(p_xy.to_float(), "x", [float(v) for v in x_k])
    return _drop_x(fixed, zspace)


def _drop_x(p_fixed: Polynomial, zspace: VarSpace) -> Polynomial:
    """After numeric x-substitution only y (or z) exponents remain; re-home."""
    src = p_fixed.space
    out = {}
    yr = list(src.block_range("y")) if src.has_block("y") else list(src.block_range("z"))
    for e, c in p_fixed.terms.items():
        ne = tuple(e[i] for i in yr)
        out[ne] = out.get(ne, 0.0) + c
    return Polynomial(zspace, out, p_fixed.domain)


def assemble_Qk(prob: BilevelProblem, kset: lme_mod.KSet, x_k, y_k) -> Pop:
    """(Q_k): min_z f(x_k, z) - f(x_k, y_k) over Z(x_k) ∩ K(x_k, .)."""
    zspace = VarSpace.make(("z", prob.p))
    f_xz = prob.lower_obj.to_float()
    fz = _drop_x(substitute(f_xz, "x", [float(v) for v in x_k]), zspace)
    shift = float(f_xz.eval_many(np.array([list(map(float, x_k)) + list(map(float, y_k))]))[0])
    fz = fz - shift

    eq = []
    ineq = []
    for g in prob.lower_eq:
        eq.append(_drop_x(substitute(g.to_float(), "x", [float(v) for v in x_k]), zspace))
    for g in prob.lower_ineq:
        ineq.append(_drop_x(substitute(g.to_float(), "x", [float(v) for v in x_k]), zspace))
    for g in kset.eq:
        eq.append(_restrict_to_z(g, x_k, zspace))
    for g in kset.ineq:
        ineq.append(_restrict_to_z(g, x_k, zspace))
    eq = [g for g in eq if not g.is_constant() or abs(float(g.constant_value())) > 0]
    ineq = [g for g in ineq if not g.is_constant()]
    return Pop(fz, tuple(eq), tuple(ineq), zspace)


def _refine_lower(prob: BilevelProblem, pk: Pop, bound: float,
                  x_k, y_k, feas_tol: float = 1e-6, val_tol: float = 1e-4):
    """Nudge y_k to an exact lower-level minimizer at x_k.

    The bilevel solution requires y in S(x); extraction noise along flat
    faces of (P_k) leaves y_k slightly off it, which shows up as a tiny
    spurious negative v_k.  A local solve of the lower problem started at
    y_k removes that, and the refinement is kept only when (x_k, y') stays
    feasible for (P_k) with no worse upper objective.
    """
    from scipy.optimize import minimize

    zspace = VarSpace.make(("z", prob.p))
    fz = _drop_x(substitute(prob.lower_obj.to_float(), "x", [float(v) for v in x_k]), zspace)
    gz = [
        _drop_x(substitute(g.to_float(), "x", [float(v) for v in x_k]), zspace)
        for g in prob.lower_ineq
    ]
    hz = [
        _drop_x(substitute(g.to_float(), "x", [float(v) for v in x_k]), zspace)
        for g in prob.lower_eq
    ]
    y0 = np.asarray([float(v) for v in y_k])

    def val(p, w):
        return p.eval_many(np.asarray(w, dtype=float)[None, :])[0]

    cons = [{"type": "ineq", "fun": (lambda w, g=g: val(g, w))} for g in gz]
    cons += [{"type": "eq", "fun": (lambda w, g=g: val(g, w))} for g in hz]
    try:
        r = minimize(lambda w: val(fz, w), y0, method="SLSQP",
                     constraints=cons, options={"maxiter": 200, "ftol": 1e-14})
    except Exception:
        return y_k
    if not np.all(np.isfinite(r.x)) or val(fz, r.x) > val(fz, y0) + 1e-12:
        return y_k
    cand = np.concatenate([np.asarray([float(v) for v in x_k]), r.x])
    if not _point_feasible(pk, cand, feas_tol):
        return y_k
    if pk.f.eval_many(cand[None, :])[0] > bound + val_tol * (1.0 + abs(bound)):
        return y_k
    return [float(v) for v in r.x]


def add_cut(state: list, ext: ext_mod.Extension, prob: BilevelProblem,
            x_k, y_k, v_k: float, eps: float = 1e-6) -> Polynomial:
    """Append the cut f(x, q(x,y)) - f(x,y) >= 0; it must exclude the iterate."""
    q_float = [q.to_float() for q in ext.q]
    f_comp = substitute(prob.lower_obj.to_float(), "z", q_float)
    f_at_y = rename_block(prob.lower_obj, prob.space, {"z": "y"}).to_float()
    cut = f_comp - f_at_y
    pt = np.array([list(map(float, x_k)) + list(map(float, y_k))])
    val = float(cut.eval_many(pt)[0])
    if val >= -eps:
        raise PolyError(
            f"extension cut fails to exclude the iterate (value {val:.3e}); "
            "the declared extension rule is wrong for this problem"
        )
    state.append(cut)
    return cut


def _pop_config(prob: BilevelProblem, cfg: RunConfig, which: str) -> PopConfig:
    """Relaxation settings for the (P) or (Q) sub-solves.

    The problem file's config block may set min_order/max_order/scale at the
    top level (applies to P) or under "P"/"Q" sub-objects; explicit RunConfig
    orders override both.
    """
    c = dict(prob.config)
    sub = c.get(which, {})
    top = c if which == "P" else {}
    min_order = cfg.min_order if cfg.min_order is not None else sub.get(
        "min_order", top.get("min_order"))
    max_order = cfg.max_order if cfg.max_order is not None else sub.get(
        "max_order", top.get("max_order"))
    return PopConfig(
        min_order=min_order,
        max_order=max_order,
        rank_tol=cfg.rank_tol,
        feas_tol=cfg.feas_tol,
        solver_tol=cfg.solver_tol,
        seed=cfg.seed,
        scale=sub.get("scale", top.get("scale")),
    )


def _obtain_lme(prob: BilevelProblem):
    sys = lme_mod.build_kkt_system(prob)
    if sys.m2 == 0:
        return sys, None
    if prob.lme is not None:
        return sys, prob.lme
    l = prob.config.get("lme_search_l")
    if l:
        anchor = prob.config.get("lme_anchor")
        if anchor is None:
            pts, _ = prob.sample_U(1, seed=1)
            if not len(pts):
                raise PolyError("no U point found for the LME search anchor")
            anchor = list(pts[0])
        found = lme_mod.lme_search_sos(prob, int(l), anchor)
        if found is not None:
            return sys, found
    return sys, lme_mod.lme_adjugate(sys)


def run(prob: BilevelProblem, cfg: RunConfig = None) -> SolveReport:
    """Algorithm: solve (P_k), certify via (Q_k), cut, repeat."""
    t0 = time.monotonic()
    cfg = cfg or RunConfig()
    eps = prob.config.get("eps", cfg.eps)
    max_loops = int(prob.config.get("max_loops", cfg.max_loops))

    sys = lme_mod.build_kkt_system(prob)
    _, lme = _obtain_lme(prob)
    kset = lme_mod.build_K(sys, lme, prob)

    cuts = []
    loops = []
    for k in range(max_loops):
        p0 = assemble_P0(prob, kset)
        pk = Pop(p0.f, p0.eq, p0.ineq + tuple(cuts), p0.space)
        res_p = solve_pop(pk, _pop_config(prob, cfg, "P"))
        if res_p.status == "infeasible":
            return SolveReport(
                "infeasible_or_no_kkt", None, None, None, loops,
                time.monotonic() - t0,
                message="(P_k) infeasible: either the problem has no optimizer "
                        "or no optimizer satisfies the lower-level KKT condition",
            )
        if res_p.status != "optimal":
            return SolveReport(
                "relaxation_unresolved", res_p.value, None, None, loops,
                time.monotonic() - t0,
                message=f"(P_{k}) not resolved by flat truncation: {res_p.message}",
            )
        m = res_p.minimizers[0]
        x_k, y_k = list(m[: prob.n]), list(m[prob.n:])
        y_k = _refine_lower(prob, pk, res_p.value, x_k, y_k)
        rec = IterateRecord(k=k, x=x_k, y=y_k, F_k=res_p.value, p_diag=_pop_diag(res_p))
        loops.append(rec)

        qk = assemble_Qk(prob, kset, x_k, y_k)
        res_q = solve_pop(qk, _pop_config(prob, cfg, "Q"))
        if res_q.status != "optimal":
            return SolveReport(
                "relaxation_unresolved", res_p.value, x_k, y_k, loops,
                time.monotonic() - t0,
                message=f"(Q_{k}) not resolved: {res_q.status} {res_q.message}",
            )
        v_k = min(res_q.value, 0.0)
        rec.v_k = v_k
        rec.q_diag = _pop_diag(res_q)

        if v_k >= -eps:
            return SolveReport(
                "optimal", res_p.value, x_k, y_k, loops, time.monotonic() - t0
            )

        z_k = list(res_q.minimizers[0])
        rec.z = z_k
        rule = prob.extension_rule
        if rule is None:
            if not prob.is_sbop():
                return SolveReport(
                    "relaxation_unresolved", res_p.value, x_k, y_k, loops,
                    time.monotonic() - t0,
                    message="no extension rule declared and the lower level depends on x",
                )
            rule = ext_mod.ExtensionRule("simple")
        ext = ext_mod.build_extension(rule, prob, (x_k, y_k, z_k))
        rec.q = [q.render() for q in ext.q]
        add_cut(cuts, ext, prob, x_k, y_k, v_k, eps)

    best = loops[-1] if loops else None
    return SolveReport(
        "max_loops",
        best.F_k if best else None,
        best.x if best else None,
        best.y if best else None,
        loops,
        time.monotonic() - t0,
        message=f"loop budget {max_loops} exhausted",
    )


# -- constraint qualification diagnostics ----------------------------------


def check_cq(point, eq, ineq, space: VarSpace, act_tol: float = 1e-6) -> dict:
    """Numeric LICQ/MFCQ check at a feasible point."""
    pt = np.array([float(v) for v in point])
    row = pt[None, :]

    def gradient(g):
        return np.array([g.to_float().diff(i).eval_many(row)[0] for i in range(space.dim)])

    eq_grads = [gradient(g) for g in eq]
    active = [g for g in ineq if abs(float(g.to_float().eval_many(row)[0])) <= act_tol]
    act_grads = [gradient(g) for g in active]

    all_g = eq_grads + act_grads
    if all_g:
        A = np.stack(all_g)
        licq = np.linalg.matrix_rank(A, tol=1e-8) == len(all_g)
    else:
        licq = True

    # MFCQ: equality gradients independent and some direction d with
    # grad h . d = 0, grad g_active . d > 0
    if eq_grads:
        E = np.stack(eq_grads)
        eq_indep = np.linalg.matrix_rank(E, tol=1e-8) == len(eq_grads)
    else:
        eq_indep = True
    mfcq = eq_indep
    if mfcq and act_grads:
        dim = space.dim
        # variables: d (free, bounded) and t; maximize t
        c = np.zeros(dim + 1)
        c[-1] = -1.0
        A_ub = np.hstack([-np.stack(act_grads), np.ones((len(act_grads), 1))])
        b_ub = np.zeros(len(act_grads))
        A_eq = np.hstack([np.stack(eq_grads), np.zeros((len(eq_grads), 1))]) if eq_grads else None
        b_eq = np.zeros(len(eq_grads)) if eq_grads else None
        bounds = [(-1, 1)] * dim + [(0, 1)]
        lp = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                     method="highs")
        mfcq = bool(lp.success and -lp.fun > 1e-9)
    return {
        "licq": bool(licq),
        "mfcq": bool(mfcq),
        "n_active_ineq": len(active),
        "n_eq": len(eq),
    }
