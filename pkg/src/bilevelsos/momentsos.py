"""Moment-SOS hierarchy: relaxations, flat truncation, minimizer extraction,
and truncated ideal/quadratic-module membership.

The moment side is canonical: order-k relaxation has the full pseudo-moment
vector as free variables, the moment matrix and localizing matrices as PSD
blocks linked by equality rows, and ideal rows for equality constraints.
The SOS bound is available from the dual of the same conic problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import linalg as sla

from . import accel, sdp
from .polyring import (
    Polynomial,
    PolyError,
    VarSpace,
    monomial_count,
    monomials,
)

__all__ = [
    "Pop",
    "MomentSeq",
    "PopResult",
    "PopConfig",
    "build_relaxation",
    "check_flat",
    "extract",
    "solve_pop",
    "sos_membership",
    "SosProgram",
]


@dataclass
class Pop:
    """min f over { p_i = 0 } ∩ { q_j >= 0 } in a common VarSpace."""

    f: Polynomial
    eq: tuple
    ineq: tuple
    space: VarSpace

    def __post_init__(self):
        for g in (self.f, *self.eq, *self.ineq):
            if g.space != self.space:
                raise PolyError("Pop polynomials must share one VarSpace")

    def max_degree(self) -> int:
        return max(g.degree() for g in (self.f, *self.eq, *self.ineq))

    def scaled(self, s) -> "Pop":
        """Change of variables v = diag(s) v~ applied to every polynomial."""
        return Pop(
            _scale_poly(self.f, s),
            tuple(_scale_poly(g, s) for g in self.eq),
            tuple(_scale_poly(g, s) for g in self.ineq),
            self.space,
        )


def _scale_poly(p: Polynomial, s) -> Polynomial:
    terms = {}
    for e, c in p.to_float().terms.items():
        v = float(c)
        for i, k in enumerate(e):
            if k:
                v *= float(s[i]) ** k
        terms[e] = terms.get(e, 0.0) + v
    return Polynomial(p.space, terms, "float")


@dataclass
class MomentSeq:
    """Pseudo-moments indexed by graded-lex ranked monomials of degree <= order."""

    dim: int
    order: int  # 2k
    y: np.ndarray

    def __post_init__(self):
        expected = monomial_count(self.dim, self.order)
        if len(self.y) != expected:
            raise PolyError(f"moment vector length {len(self.y)} != {expected}")

    def moment_matrix(self, t: int) -> np.ndarray:
        if 2 * t > self.order:
            raise PolyError("moment matrix order exceeds available moments")
        E = np.array(monomials(self.dim, t), dtype=np.int64)
        idx = accel.pair_ranks(E)
        return self.y[idx]


@dataclass
class PopResult:
    status: str  # optimal | infeasible | bound_only | failed
    value: Optional[float]
    minimizers: list
    order_used: Optional[int]
    flat: bool
    ranks: tuple  # (r_low, r_high)
    message: str = ""
    moments: Optional[MomentSeq] = None


@dataclass
class PopConfig:
    min_order: Optional[int] = None
    max_order: Optional[int] = None
    rank_tol: float = 1e-6
    feas_tol: float = 1e-6
    val_tol: float = 1e-4
    solver_tol: float = 1e-8
    seed: int = 0
    scale: Optional[list] = None  # per-variable scaling for conditioning


# -- relaxation construction ----------------------------------------------


@dataclass
class RelaxationIndex:
    """Metadata tying conic variables back to moments and matrix blocks."""

    k: int
    dim: int
    n_moments: int
    basis: np.ndarray  # exponents of the order-k moment-matrix basis
    loc_bases: list  # per PSD localizer: (ineq index, exponent matrix)
    scalar_locs: list  # ineq indices realized as nonnegative scalars


def _poly_rank_terms(p: Polynomial, C):
    E = np.array(list(p.terms.keys()), dtype=np.int64)
    coeffs = np.array([float(c) for c in p.terms.values()])
    return accel.rank_exponents(E, C), coeffs


def build_relaxation(pop: Pop, k: int):
    """Order-k moment relaxation as a ConicProblem plus index metadata."""
    d = pop.max_degree()
    if 2 * k < d:
        raise PolyError(f"relaxation order {k} too small for degree {d}")
    dim = pop.space.dim
    C = accel.binom_table(2 * k + dim + 2)
    n_mom = monomial_count(dim, 2 * k)

    basis = np.array(monomials(dim, k), dtype=np.int64)
    psd_dims = [len(basis)]
    loc_bases = []
    scalar_locs = []
    for j, q in enumerate(pop.ineq):
        kj = k - (q.degree() + 1) // 2
        if kj >= 1:
            B = np.array(monomials(dim, kj), dtype=np.int64)
            psd_dims.append(len(B))
            loc_bases.append((j, B))
        else:
            scalar_locs.append(j)

    prob = sdp.ConicProblem(free_dim=n_mom, nonneg_dim=len(scalar_locs), psd_dims=psd_dims)

    # normalization <1, y> = 1
    prob.add_eq({0: 1.0}, 1.0)

    # ideal rows: <p_i * m, y> = 0 for all monomials m with deg(p_i m) <= 2k
    for p in pop.eq:
        ranks_p, coeffs_p = _poly_rank_terms(p, C)
        E = np.array(list(p.terms.keys()), dtype=np.int64)
        for m in monomials(dim, 2 * k - p.degree()):
            shifted = E + np.array(m, dtype=np.int64)
            r = accel.rank_exponents(shifted, C)
            row = {}
            for rr, cc in zip(r, coeffs_p):
                row[int(rr)] = row.get(int(rr), 0.0) + cc
            prob.add_eq(row, 0.0)

    # moment matrix linkage: svec entry = scale * sum_g q_g y_{a+b+g}
    def link_block(blk: int, B: np.ndarray, q: Optional[Polynomial]):
        terms = (
            [((0,) * dim, 1.0)]
            if q is None
            else [(e, float(c)) for e, c in q.terms.items()]
        )
        rank_maps = [(accel.pair_ranks(B, np.array(e, dtype=np.int64), C), c) for e, c in terms]
        m = len(B)
        for j in range(m):
            for i in range(j + 1):
                s = sdp.ConicProblem.psd_scale(i, j)
                row = {prob.psd_var(blk, i, j): 1.0}
                for idx, c in rank_maps:
                    mi = int(idx[i, j])
                    row[mi] = row.get(mi, 0.0) - s * c
                prob.add_eq(row, 0.0)

    link_block(0, basis, None)
    for blk, (j, B) in enumerate(loc_bases, start=1):
        link_block(blk, B, pop.ineq[j].to_float())

    # scalar localizers: v_j = <q_j, y> with v_j >= 0
    for slot, j in enumerate(scalar_locs):
        ranks_q, coeffs_q = _poly_rank_terms(pop.ineq[j], C)
        row = {prob.nonneg_offset() + slot: 1.0}
        for rr, cc in zip(ranks_q, coeffs_q):
            row[int(rr)] = row.get(int(rr), 0.0) - cc
        prob.add_eq(row, 0.0)

    # objective min <f, y>
    ranks_f, coeffs_f = _poly_rank_terms(pop.f, C)
    for rr, cc in zip(ranks_f, coeffs_f):
        prob.set_obj(int(rr), cc)

    meta = RelaxationIndex(
        k=k, dim=dim, n_moments=n_mom, basis=basis,
        loc_bases=loc_bases, scalar_locs=scalar_locs,
    )
    return prob, meta


# -- flatness and extraction -----------------------------------------------


def _numeric_rank(M: np.ndarray, rank_tol: float) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] <= 0:
        return 0
    return int(np.sum(sv > rank_tol * sv[0]))


def check_flat(ms: MomentSeq, t: int, d0: int, rank_tol: float = 1e-6):
    """Flat truncation test: rank M_t == rank M_{t-d0}."""
    if t - d0 < 0:
        raise PolyError("truncation too short: t - d0 < 0")
    if 2 * t > ms.order:
        raise PolyError("t exceeds half the moment order")
    r_hi = _numeric_rank(ms.moment_matrix(t), rank_tol)
    r_lo = _numeric_rank(ms.moment_matrix(t - d0), rank_tol)
    return r_lo == r_hi, r_lo


def _rref_basis(VT: np.ndarray, tol: float):
    """Row-reduce with left-to-right (graded-lex) column pivoting.

    Returns (pivot column indices, reduced coordinate matrix R) with
    R[:, pivots] = I, so every column of VT is expressed in the pivot basis.
    """
    R = VT.copy()
    r, n = R.shape
    pivots = []
    row = 0
    scale = max(np.abs(R).max(), 1.0)
    for col in range(n):
        if row >= r:
            break
        piv = row + int(np.argmax(np.abs(R[row:, col])))
        if abs(R[piv, col]) <= tol * scale:
            continue
        R[[row, piv]] = R[[piv, row]]
        R[row] /= R[row, col]
        mask = np.arange(r) != row
        R[mask] -= np.outer(R[mask, col], R[row])
        pivots.append(col)
        row += 1
    return pivots, R[: len(pivots)]


def extract(ms: MomentSeq, t: int, r: int, rank_tol: float = 1e-6, seed: int = 0, d0: int = 1):
    """Henrion–Lasserre extraction of an r-atomic representing measure.

    Returns a list of points, or None when the eigen-structure stays
    defective after bounded retries.
    """
    M = ms.moment_matrix(t)
    w, U = np.linalg.eigh(M)
    order = np.argsort(w)[::-1][:r]
    V = U[:, order] * np.sqrt(np.clip(w[order], 0.0, None))
    pivots, R = _rref_basis(V.T, max(rank_tol, 1e-10))
    if len(pivots) < r:
        return None

    dim = ms.dim
    E = np.array(monomials(dim, t), dtype=np.int64)
    C = accel.binom_table(2 * t + dim + 2)
    max_rank = len(E)
    # multiplication matrices N_i: (N_i)[:, j] = coords of x_i * b_j
    Ns = []
    for i in range(dim):
        shift = np.zeros(dim, dtype=np.int64)
        shift[i] = 1
        tgt = accel.rank_exponents(E[pivots] + shift, C)
        if tgt.max() >= max_rank:
            return None  # a pivot monomial of degree t cannot be multiplied up
        Ns.append(R[:, tgt])

    rng = np.random.default_rng(seed)
    for _ in range(8):
        c = rng.random(dim)
        c /= c.sum()
        N = sum(ci * Ni for ci, Ni in zip(c, Ns))
        T, Q = sla.schur(N, output="real")
        off = np.tril(T, -1)
        if np.abs(off).max() > 1e-7 * max(1.0, np.abs(T).max()):
            continue  # complex eigenvalues: retry a fresh combination
        pts = []
        for s in range(r):
            q = Q[:, s]
            pts.append(np.array([q @ Ni @ q for Ni in Ns]))
        pts.sort(key=lambda z: tuple(z))
        if _moments_consistent(ms, t, d0, pts, rank_tol):
            return pts
    return None


def _moments_consistent(ms: MomentSeq, t: int, d0: int, pts, rank_tol: float) -> bool:
    """Weighted atomic measure on ``pts`` must reproduce M_{t-d0}."""
    tl = t - d0
    E = np.array(monomials(ms.dim, 2 * tl), dtype=np.int64)
    C = accel.binom_table(2 * t + ms.dim + 2)
    ranks = accel.rank_exponents(E, C)
    A = np.stack([np.prod(np.array(p)[None, :] ** E, axis=1) for p in pts], axis=1)
    yt = ms.y[ranks]
    wts, *_ = np.linalg.lstsq(A, yt, rcond=None)
    resid = np.linalg.norm(A @ wts - yt)
    Ml = ms.moment_matrix(tl)
    return resid <= 10 * max(rank_tol, 1e-8) * max(1.0, np.linalg.norm(Ml))


# -- driver ----------------------------------------------------------------


def _feas_scale(p: Polynomial, pt: np.ndarray) -> float:
    m = max(1.0, float(np.max(np.abs(pt))) if len(pt) else 1.0)
    return sum(abs(float(c)) * m ** sum(e) for e, c in p.terms.items())


def _point_feasible(pop: Pop, pt: np.ndarray, feas_tol: float) -> bool:
    x = np.asarray(pt, dtype=float)[None, :]
    for p in pop.eq:
        if abs(p.eval_many(x)[0]) > feas_tol * (1.0 + _feas_scale(p, pt)):
            return False
    for q in pop.ineq:
        if q.eval_many(x)[0] < -feas_tol * (1.0 + _feas_scale(q, pt)):
            return False
    return True


def _violation(pop: Pop, pt: np.ndarray) -> float:
    x = np.asarray(pt, dtype=float)[None, :]
    v = 0.0
    for p in pop.eq:
        v = max(v, abs(p.eval_many(x)[0]) / (1.0 + _feas_scale(p, pt)))
    for q in pop.ineq:
        v = max(v, max(0.0, -q.eval_many(x)[0]) / (1.0 + _feas_scale(q, pt)))
    return v


def _polish(pop: Pop, pt: np.ndarray, bound: float) -> np.ndarray:
    """Local least-squares refinement of an extracted candidate.

    SDP moments carry interior-point noise (~1e-5 in the coordinates); a few
    Gauss-Newton steps on the constraint residuals, with the objective
    tethered to the relaxation bound, sharpens the point by several digits.
    The caller re-validates, so a polish that wanders off is simply dropped.
    """
    from scipy.optimize import least_squares

    tether = 0.1 / (1.0 + abs(bound))

    def resid(w):
        row = w[None, :]
        out = [p.eval_many(row)[0] for p in pop.eq]
        out += [min(0.0, q.eval_many(row)[0]) for q in pop.ineq]
        out.append(tether * (pop.f.eval_many(row)[0] - bound))
        return np.asarray(out)

    try:
        sol = least_squares(resid, np.asarray(pt, dtype=float), xtol=1e-14,
                            ftol=1e-14, gtol=1e-12, max_nfev=200)
    except Exception:
        return pt
    cand = sol.x
    if _violation(pop, cand) <= _violation(pop, pt):
        return cand
    return pt


def _extract_at_order(work, ms, meta, bound, cfg, scale, k, d0, solmsg):
    """Extraction ladder for one relaxation order; None when nothing passes.

    The strict rank test at rank_tol is the certificate; interior-point
    moments are noisy, so when it just misses we still attempt the
    extraction at looser tolerances and let the feasibility/objective
    validation arbitrate.
    """
    rtols = sorted({cfg.rank_tol, 1e-5, 1e-4, 1e-3})
    for t in range(d0, k + 1):
        for rtol in rtols:
            flat, r = check_flat(ms, t, d0, rtol)
            if not flat or r == 0:
                continue
            pts = extract(ms, t, r, rtol, cfg.seed, d0)
            if pts is None:
                continue
            pts = [_polish(work, p, bound) for p in pts]
            good = [p for p in pts if _point_feasible(work, p, cfg.feas_tol)]
            good = [
                p for p in good
                if work.f.eval_many(np.asarray(p)[None, :])[0]
                <= bound + cfg.val_tol * (1.0 + abs(bound))
            ]
            if not good:
                continue
            if scale is not None:
                good = [np.asarray(p) * scale for p in good]
            good.sort(key=lambda z: tuple(z))
            strict = rtol == cfg.rank_tol
            return PopResult(
                "optimal", bound, good, k, strict, (r, r),
                message=solmsg, moments=ms,
            )

    # No flat truncation.  When the measure is a single atom the first-order
    # moments are that atom, so accept the mean point, but only when the
    # degree-1 moment matrix really is numerically rank one — the mean of a
    # spread measure points nowhere useful.
    if ms.y[0] > 1e-12:
        M1 = ms.moment_matrix(1)
        sv = np.linalg.svd(M1, compute_uv=False)
        if sv[0] > 0 and sv[1] <= 1e-5 * sv[0]:
            cand = ms.y[1 : meta.dim + 1] / ms.y[0]
            cand = _polish(work, cand, bound)
            ok = _point_feasible(work, cand, cfg.feas_tol) and (
                work.f.eval_many(np.asarray(cand)[None, :])[0]
                <= bound + cfg.val_tol * (1.0 + abs(bound))
            )
            if ok:
                if scale is not None:
                    cand = np.asarray(cand) * scale
                return PopResult(
                    "optimal", bound, [cand], k, False, (1, 1),
                    message=solmsg + " (mean-point extraction)", moments=ms,
                )
    return None


def _min_trace_resolve(work, k, bound, sol, cfg):
    """Re-solve order k on the optimal face, minimizing the moment trace."""
    prob, meta = build_relaxation(work, k)
    delta = max(1e-7, 2.0 * (sol.r_prim + sol.r_dual)) * (1.0 + abs(bound))
    # pin the non-constant part only; y_0 is already fixed by normalization,
    # so keeping the constant would contradict the pin (and a constant
    # objective needs no pin at all: the whole feasible set is the face)
    shift = prob.c.pop(0, 0.0)
    if prob.c:
        prob.add_eq(dict(prob.c), bound - shift + delta)
    prob.c = {}
    for i in range(prob.psd_dims[0]):
        prob.set_obj(prob.psd_var(0, i, i), 1.0)
    sol2 = sdp.solve_conic(prob, tol=cfg.solver_tol)
    if sol2.status not in (sdp.OPTIMAL, sdp.INACCURATE):
        return None
    return MomentSeq(meta.dim, 2 * k, np.asarray(sol2.x[: meta.n_moments]))


def solve_pop(pop: Pop, cfg: PopConfig = PopConfig()) -> PopResult:
    """Hierarchy loop: solve orders min..max, stop at the first flat order."""
    work = pop
    scale = None
    if cfg.scale is not None:
        scale = np.asarray(cfg.scale, dtype=float)
        if scale.ndim == 0:
            scale = np.full(pop.space.dim, float(scale))
        work = pop.scaled(scale)
    d = work.max_degree()
    base = max(1, (d + 1) // 2)
    k_min = cfg.min_order if cfg.min_order is not None else base
    k_max = cfg.max_order if cfg.max_order is not None else base + 3
    if k_min < base:
        k_min = base
    d0 = max([(q.degree() + 1) // 2 for q in work.ineq], default=1)
    d0 = max(d0, 1)

    best_bound = None
    last_msg = ""
    for k in range(k_min, k_max + 1):
        if monomial_count(work.space.dim, 2 * k) > 20000 or \
                monomial_count(work.space.dim, k) > 600:
            last_msg = f"order {k} relaxation too large; stopping the hierarchy"
            break
        prob, meta = build_relaxation(work, k)
        sol = sdp.solve_conic(prob, tol=cfg.solver_tol)
        if sol.status == sdp.INFEASIBLE:
            return PopResult("infeasible", None, [], k, False, (0, 0), message=sol.message)
        if sol.status == sdp.UNBOUNDED:
            best_bound = -math.inf
            last_msg = "relaxation unbounded"
            continue
        if sol.status not in (sdp.OPTIMAL, sdp.INACCURATE):
            last_msg = f"order {k}: solver {sol.status} ({sol.message})"
            continue
        bound = sol.obj_primal
        best_bound = bound if best_bound is None else max(best_bound, bound)
        ms = MomentSeq(meta.dim, 2 * k, np.asarray(sol.x[: meta.n_moments]))
        res = _extract_at_order(work, ms, meta, bound, cfg, scale, k, d0, sol.message)
        if res is not None:
            return res

        # Extraction failed: the optimal face of the relaxation may contain
        # non-atomic moment vectors and the interior-point solution sits in
        # its middle.  Re-solve restricted to that face while minimizing the
        # trace of the moment matrix, which pulls toward an extreme (atomic)
        # point of the face, then retry the extraction.
        ms2 = _min_trace_resolve(work, k, bound, sol, cfg)
        if ms2 is not None:
            res = _extract_at_order(
                work, ms2, meta, bound, cfg, scale, k, d0,
                sol.message + " (min-trace resolve)",
            )
            if res is not None:
                return res
    status = "bound_only" if best_bound is not None else "failed"
    return PopResult(status, best_bound, [], None, False, (0, 0), message=last_msg)


# -- SOS-side linear-coefficient programs ----------------------------------


class SosProgram:
    """Feasibility/optimization over polynomial identities with SOS blocks.

    Linear polynomial expressions ("lp") are dicts monomial -> {var: coeff}.
    Var keys: -1 for the constant part, ints for free coefficients,
    ("nn", i) for nonnegative scalars, ("psd", blk, i, j) for Gram entries.
    """

    def __init__(self, space: VarSpace):
        self.space = space
        self.n_free = 0
        self.n_nonneg = 0
        self.gram_bases = []  # list of monomial lists
        self.identities = []  # (LinPoly, target Polynomial)
        self.obj = {}  # var -> coeff (minimized)

    # variable allocation -------------------------------------------------

    def free_var(self) -> int:
        v = self.n_free
        self.n_free += 1
        return v

    def nonneg_var(self):
        v = self.n_nonneg
        self.n_nonneg += 1
        return ("nn", v)

    def unknown_poly(self, monos) -> dict:
        return {tuple(m): {self.free_var(): 1.0} for m in monos}

    def sos_lp(self, monos) -> dict:
        """Fresh SOS unknown sigma over basis ``monos``, as a linear poly."""
        basis = [tuple(m) for m in monos]
        blk = len(self.gram_bases)
        self.gram_bases.append(basis)
        lp = {}
        for j in range(len(basis)):
            for i in range(j + 1):
                e = tuple(a + b for a, b in zip(basis[i], basis[j]))
                # sigma's coefficient at e picks up M_ij (+ M_ji off-diagonal);
                # in svec variables that is 1 on the diagonal, 2/sqrt(2) off it
                coeff = 1.0 if i == j else 2.0 / sdp.SQRT2
                dst = lp.setdefault(e, {})
                key = ("psd", blk, i, j)
                dst[key] = dst.get(key, 0.0) + coeff
        return lp

    # linear-poly algebra --------------------------------------------------

    @staticmethod
    def lp_from_poly(p: Polynomial) -> dict:
        return {e: {-1: float(c)} for e, c in p.to_float().terms.items()}

    @staticmethod
    def lp_var(var, coeff: float = 1.0, mono=None, dim: int = 0) -> dict:
        e = tuple(mono) if mono is not None else (0,) * dim
        return {e: {var: coeff}}

    @staticmethod
    def lp_add(a: dict, b: dict) -> dict:
        out = {e: dict(t) for e, t in a.items()}
        for e, t in b.items():
            dst = out.setdefault(e, {})
            for v, c in t.items():
                dst[v] = dst.get(v, 0.0) + c
        return out

    @staticmethod
    def lp_scale(a: dict, s: float) -> dict:
        return {e: {v: c * s for v, c in t.items()} for e, t in a.items()}

    @staticmethod
    def lp_mul_poly(a: dict, p: Polynomial) -> dict:
        out = {}
        for e1, t in a.items():
            for e2, c2 in p.to_float().terms.items():
                e = tuple(x + y for x, y in zip(e1, e2))
                dst = out.setdefault(e, {})
                for v, c in t.items():
                    dst[v] = dst.get(v, 0.0) + c * float(c2)
        return out

    @staticmethod
    def lp_eval_point(a: dict, point) -> dict:
        """Collapse an lp to a scalar linear form by evaluating monomials."""
        out = {}
        pt = np.asarray(point, dtype=float)
        for e, t in a.items():
            m = float(np.prod(pt ** np.array(e)))
            for v, c in t.items():
                out[v] = out.get(v, 0.0) + c * m
        return out

    def require_equal(self, lp: dict, target: Polynomial):
        self.identities.append((lp, target.to_float()))

    def require_linear(self, linform: dict, rhs: float):
        """Scalar equality sum coeff*var = rhs (vars by program keys)."""
        self.identities.append(({"__scalar__": linform}, rhs))

    def minimize(self, terms: dict):
        self.obj = dict(terms)

    # assembly and solve ---------------------------------------------------

    def _var_index(self, v, prob: sdp.ConicProblem):
        if isinstance(v, tuple) and v[0] == "nn":
            return prob.nonneg_offset() + v[1]
        if isinstance(v, tuple) and v[0] == "psd":
            return prob.psd_var(v[1], v[2], v[3])
        return v

    def solve(self, tol: float = 1e-8):
        prob = sdp.ConicProblem(
            free_dim=self.n_free,
            nonneg_dim=self.n_nonneg,
            psd_dims=[len(b) for b in self.gram_bases],
        )
        for lp, target in self.identities:
            if isinstance(lp, dict) and "__scalar__" in lp:
                row = {}
                for v, c in lp["__scalar__"].items():
                    i = self._var_index(v, prob)
                    row[i] = row.get(i, 0.0) + c
                prob.add_eq(row, float(target))
                continue
            monos = set(lp) | set(target.terms)
            for e in monos:
                row = {}
                rhs = float(target.terms.get(e, 0.0))
                for v, c in lp.get(e, {}).items():
                    if v == -1:
                        rhs -= c
                    else:
                        i = self._var_index(v, prob)
                        row[i] = row.get(i, 0.0) + c
                prob.add_eq(row, rhs)
        for v, c in self.obj.items():
            prob.set_obj(self._var_index(v, prob), c)
        sol = sdp.solve_conic(prob, tol=tol)
        return sol, prob

    def poly_value(self, lp: dict, sol, prob) -> Polynomial:
        terms = {}
        for e, t in lp.items():
            v = 0.0
            for var, c in t.items():
                v += c if var == -1 else c * sol.x[self._var_index(var, prob)]
            terms[e] = v
        return Polynomial(self.space, terms, "float")


def qmodule_monomials(space: VarSpace, two_l: int, gdeg: int):
    """Gram basis monomials for a multiplier of a degree-``gdeg`` factor."""
    half = (two_l - gdeg) // 2
    if half < 0:
        return None
    return monomials(space, half)


def sos_membership(f: Polynomial, Phi, Psi, two_l: int, tol: float = 1e-8):
    """Decide f ∈ Ideal(Phi)_{2l} + Qmod(Psi)_{2l}; returns a certificate or None.

    Certificate: {"sigma": [Polynomial...], "lambda": [Polynomial...],
    "grams": [ndarray...], "residual": float}.
    """
    if two_l % 2 or two_l < f.degree():
        raise PolyError("two_l must be even and at least deg f")
    phi_used = [h.to_float() for h in Phi if h.degree() <= two_l]
    psi_used = [g.to_float() for g in Psi if qmodule_monomials(f.space, two_l, g.degree())]
    return _sos_membership_direct(f, phi_used, psi_used, two_l, tol)


def _sos_membership_direct(f, Phi, Psi, two_l, tol):
    """Direct assembly: one conic problem, Gram blocks multiplied explicitly."""
    space = f.space
    n_free = 0
    lam_coeffs = []  # (monomial list, var offset) per Phi
    for h in Phi:
        monos = monomials(space, two_l - h.degree())
        lam_coeffs.append((monos, n_free))
        n_free += len(monos)

    bases = [monomials(space, two_l // 2)]
    factors = [Polynomial.const(space, 1.0, "float")]
    for g in Psi:
        monos = qmodule_monomials(space, two_l, g.degree())
        bases.append(monos)
        factors.append(g)

    prob = sdp.ConicProblem(free_dim=n_free, nonneg_dim=0, psd_dims=[len(b) for b in bases])

    rows = {}  # monomial -> {var: coeff}
    def bump(e, var, c):
        rows.setdefault(e, {}).setdefault(var, 0.0)
        rows[e][var] += c

    for (monos, off), h in zip(lam_coeffs, Phi):
        for a, m in enumerate(monos):
            for e2, c2 in h.terms.items():
                bump(tuple(x + y for x, y in zip(m, e2)), off + a, float(c2))
    for blk, (basis, g) in enumerate(zip(bases, factors)):
        m = len(basis)
        for j in range(m):
            for i in range(j + 1):
                base_e = tuple(a + b for a, b in zip(basis[i], basis[j]))
                coeff = 1.0 if i == j else 2.0 / sdp.SQRT2
                var = prob.psd_var(blk, i, j)
                for e2, c2 in g.terms.items():
                    bump(tuple(x + y for x, y in zip(base_e, e2)), var, coeff * float(c2))

    ff = f.to_float()
    all_monos = set(rows) | set(ff.terms)
    for e in all_monos:
        prob.add_eq(rows.get(e, {}), float(ff.terms.get(e, 0.0)))

    sol = sdp.solve_conic(prob, tol=tol)
    if sol.status == sdp.INFEASIBLE:
        return None
    if sol.status not in (sdp.OPTIMAL, sdp.INACCURATE):
        return None

    grams = [sol.unpack_psd(prob, blk) for blk in range(len(bases))]
    sigmas = []
    for basis, G in zip(bases, grams):
        terms = {}
        for j in range(len(basis)):
            for i in range(len(basis)):
                e = tuple(a + b for a, b in zip(basis[i], basis[j]))
                terms[e] = terms.get(e, 0.0) + G[i, j]
        sigmas.append(Polynomial(space, terms, "float"))
    lams = []
    for (monos, off), h in zip(lam_coeffs, Phi):
        terms = {tuple(m): float(sol.x[off + a]) for a, m in enumerate(monos)}
        lams.append(Polynomial(space, terms, "float"))

    recon = Polynomial.zero(space, "float")
    for sig, g in zip(sigmas, factors):
        recon = recon + sig * g
    for lam, h in zip(lams, Phi):
        recon = recon + lam * h
    diff = recon - ff
    residual = max((abs(c) for c in diff.terms.values()), default=0.0)
    if residual > 1e-6 * (1.0 + max((abs(c) for c in ff.terms.values()), default=1.0)):
        return None
    return {"sigma": sigmas, "lambda": lams, "grams": grams, "residual": residual}
