"""Conic-program contract and the Clarabel backend.

A ConicProblem is: minimize c'v over v = (free | nonneg | svec(PSD_1) | ...)
subject to A v = b, the nonnegative block >= 0 and each PSD block PSD.
Symmetric matrices are stored as the upper triangle read column by column
with off-diagonal entries scaled by sqrt(2) (so the packed inner product
equals the matrix inner product); this matches Clarabel's triangle cone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

__all__ = ["ConicProblem", "ConicSolution", "solve_conic", "svec_len", "svec_index"]

SQRT2 = math.sqrt(2.0)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
INACCURATE = "inaccurate"
FAILED = "failed"


def svec_len(n: int) -> int:
    return n * (n + 1) // 2


def svec_index(i: int, j: int) -> int:
    """Packed position of entry (i, j), i <= j, upper triangle column-major."""
    if i > j:
        i, j = j, i
    return j * (j + 1) // 2 + i


@dataclass
class ConicProblem:
    """min c'v s.t. A v = b, cone memberships per block layout."""

    free_dim: int
    nonneg_dim: int
    psd_dims: list  # side lengths of the PSD blocks, in variable order

    rows: list = field(default_factory=list)  # sparse equality triplets
    cols: list = field(default_factory=list)
    vals: list = field(default_factory=list)
    b: list = field(default_factory=list)
    c: dict = field(default_factory=dict)  # var index -> objective coefficient

    @property
    def total_vars(self) -> int:
        return self.free_dim + self.nonneg_dim + sum(svec_len(n) for n in self.psd_dims)

    @property
    def n_eq(self) -> int:
        return len(self.b)

    def nonneg_offset(self) -> int:
        return self.free_dim

    def psd_offset(self, blk: int) -> int:
        off = self.free_dim + self.nonneg_dim
        for m in self.psd_dims[:blk]:
            off += svec_len(m)
        return off

    def psd_var(self, blk: int, i: int, j: int) -> int:
        """Variable index of packed PSD entry (i, j) of block ``blk``."""
        return self.psd_offset(blk) + svec_index(i, j)

    @staticmethod
    def psd_scale(i: int, j: int) -> float:
        """svec entry = scale * M_ij; scale is sqrt(2) off the diagonal."""
        return 1.0 if i == j else SQRT2

    def add_eq(self, coeffs: dict, rhs: float) -> int:
        """Append one equality row; coeffs maps variable index -> coefficient."""
        r = len(self.b)
        for c, v in coeffs.items():
            if v != 0.0:
                self.rows.append(r)
                self.cols.append(c)
                self.vals.append(float(v))
        self.b.append(float(rhs))
        return r

    def set_obj(self, var: int, coeff: float):
        if coeff != 0.0:
            self.c[var] = self.c.get(var, 0.0) + float(coeff)

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.total_vars)
        for i, v in self.c.items():
            c[i] = v
        return c

    def dump(self) -> str:
        """Debug text dump: one triplet per line, for external cross-checks."""
        lines = [f"vars free={self.free_dim} nonneg={self.nonneg_dim} psd={self.psd_dims}"]
        lines += [f"A {r} {c} {v!r}" for r, c, v in zip(self.rows, self.cols, self.vals)]
        lines += [f"b {i} {v!r}" for i, v in enumerate(self.b)]
        lines += [f"c {i} {v!r}" for i, v in sorted(self.c.items())]
        return "\n".join(lines) + "\n"


@dataclass
class ConicSolution:
    status: str
    x: Optional[np.ndarray]
    z: Optional[np.ndarray]  # duals of the equality rows
    obj_primal: Optional[float]
    obj_dual: Optional[float]
    r_prim: float
    r_dual: float
    message: str = ""

    def unpack_psd(self, p: ConicProblem, blk: int) -> np.ndarray:
        """Recover the dense symmetric matrix of a PSD block."""
        n = p.psd_dims[blk]
        off = p.psd_offset(blk)
        M = np.zeros((n, n))
        for j in range(n):
            for i in range(j + 1):
                v = self.x[off + svec_index(i, j)]
                if i == j:
                    M[i, i] = v
                else:
                    M[i, j] = M[j, i] = v / SQRT2
        return M


def _build_clarabel(p: ConicProblem):
    import clarabel

    nv = p.total_vars
    # equality rows: A v = b  ->  s = b - A v in Zero cone
    rows = list(p.rows)
    cols = list(p.cols)
    vals = list(p.vals)
    b = list(p.b)
    cones = [clarabel.ZeroConeT(p.n_eq)] if p.n_eq else []
    r = p.n_eq
    # cone memberships: s = v_block  ->  rows of -I, rhs 0
    if p.nonneg_dim:
        off = p.nonneg_offset()
        for k in range(p.nonneg_dim):
            rows.append(r)
            cols.append(off + k)
            vals.append(-1.0)
            b.append(0.0)
            r += 1
        cones.append(clarabel.NonnegativeConeT(p.nonneg_dim))
    for blk, n in enumerate(p.psd_dims):
        off = p.psd_offset(blk)
        m = svec_len(n)
        for k in range(m):
            rows.append(r)
            cols.append(off + k)
            vals.append(-1.0)
            b.append(0.0)
            r += 1
        cones.append(clarabel.PSDTriangleConeT(n))
    A = sparse.csc_matrix(
        (np.array(vals), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(r, nv),
    )
    P = sparse.csc_matrix((nv, nv))
    q = p.objective_vector()
    return P, q, A, np.array(b), cones


def _build_scs(p: ConicProblem):
    """Same slack construction as Clarabel but with SCS's PSD packing order.

    SCS stacks the lower triangle column by column (off-diagonal scaled by
    sqrt(2), same scaling as ours); our packing is the upper triangle column
    by column, so the -I slack rows are emitted in SCS order but point at
    our packed variables.
    """
    rows = list(p.rows)
    cols = list(p.cols)
    vals = list(p.vals)
    b = list(p.b)
    r = p.n_eq
    if p.nonneg_dim:
        off = p.nonneg_offset()
        for k in range(p.nonneg_dim):
            rows.append(r)
            cols.append(off + k)
            vals.append(-1.0)
            b.append(0.0)
            r += 1
    for blk, n in enumerate(p.psd_dims):
        off = p.psd_offset(blk)
        for j in range(n):
            for i in range(j, n):
                rows.append(r)
                cols.append(off + svec_index(j, i))
                vals.append(-1.0)
                b.append(0.0)
                r += 1
    A = sparse.csc_matrix(
        (np.array(vals), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(r, p.total_vars),
    )
    cone = {"z": p.n_eq, "l": p.nonneg_dim, "s": list(p.psd_dims)}
    return A, np.array(b), p.objective_vector(), cone


def _solve_scs(p: ConicProblem, tol: float) -> ConicSolution:
    import scs

    try:
        A, b, c, cone = _build_scs(p)
        sol = scs.solve(
            {"A": A, "b": b, "c": c},
            cone,
            verbose=False,
            eps_abs=tol,
            eps_rel=tol,
            eps_infeas=1e-9,
            max_iters=200000,
            time_limit_secs=110.0,
            acceleration_lookback=10,
        )
    except BaseException as e:
        return ConicSolution(FAILED, None, None, None, None, np.inf, np.inf, message=str(e))

    info = sol["info"]
    st = info["status"]
    out = ConicSolution(
        status=FAILED,
        x=np.asarray(sol["x"]),
        z=np.asarray(sol["y"])[: p.n_eq] if p.n_eq else np.zeros(0),
        obj_primal=float(info["pobj"]),
        obj_dual=float(info["dobj"]),
        r_prim=float(info["res_pri"]),
        r_dual=float(info["res_dual"]),
        message=f"scs: {st}",
    )
    if st == "solved":
        out.status = OPTIMAL
    elif "infeasible" in st:
        out.status = INFEASIBLE
        out.x = out.z = None
        out.obj_primal = out.obj_dual = None
    elif "unbounded" in st:
        out.status = UNBOUNDED
    elif "inaccurate" in st:
        # First-order iterates are validated downstream by polishing plus
        # feasibility/objective gates, so a moderate residual is acceptable.
        if max(out.r_prim, out.r_dual) <= 1e-4 * (1.0 + abs(out.obj_primal)):
            out.status = INACCURATE
        else:
            out.status = FAILED
    if out.status in (OPTIMAL, INACCURATE):
        gap_ok = out.obj_primal >= out.obj_dual - 10 * max(tol, 1e-6) * (1 + abs(out.obj_primal))
        if not gap_ok:
            out.status = FAILED
            out.message += " (weak duality violated)"
    return out


# Clarabel densifies each PSD block in its KKT system, so memory grows like
# the square of the packed block length; beyond this budget the Rust side
# aborts the whole process on allocation failure, so route to SCS instead.
_CLARABEL_DENSE_BUDGET = 3.0e7


def _clarabel_dense_cost(p: ConicProblem) -> float:
    return float(sum(svec_len(n) ** 2 for n in p.psd_dims))


def solve_conic(p: ConicProblem, tol: float = 1e-8, max_iter: int = 400) -> ConicSolution:
    """Solve with Clarabel, or SCS for instances too large for a direct method.

    Failures surface as status=failed, never a crash.
    """
    import clarabel

    if _clarabel_dense_cost(p) > _CLARABEL_DENSE_BUDGET:
        return _solve_scs(p, max(tol, 1e-7))

    try:
        P, q, A, b, cones = _build_clarabel(p)
        sol = None
        # Retry with stronger static regularization: near-degenerate moment
        # relaxations can abort with NumericalError on the first factorization.
        for reg in (None, 1e-7):
            settings = clarabel.DefaultSettings()
            settings.verbose = False
            settings.max_iter = max_iter
            settings.tol_gap_abs = tol
            settings.tol_gap_rel = tol
            settings.tol_feas = tol
            if reg is not None:
                settings.static_regularization_constant = reg
            solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
            sol = solver.solve()
            if "NumericalError" not in str(sol.status):
                break
    except BaseException as e:  # Rust panics surface as pyo3 exceptions
        return ConicSolution(FAILED, None, None, None, None, np.inf, np.inf, message=str(e))

    st = str(sol.status)
    x = np.asarray(sol.x)
    z = np.asarray(sol.z)[: p.n_eq] if p.n_eq else np.zeros(0)
    out = ConicSolution(
        status=FAILED,
        x=x,
        z=z,
        obj_primal=float(sol.obj_val),
        obj_dual=float(sol.obj_val_dual),
        r_prim=float(sol.r_prim),
        r_dual=float(sol.r_dual),
        message=st,
    )
    if st == "SolverStatus.Solved" or st == "Solved":
        out.status = OPTIMAL
    elif "PrimalInfeasible" in st:
        out.status = INFEASIBLE
        out.x = out.z = None
        out.obj_primal = out.obj_dual = None
    elif "DualInfeasible" in st:
        out.status = UNBOUNDED
    elif "AlmostSolved" in st or "MaxIterations" in st or "InsufficientProgress" in st:
        # accept as inaccurate only when residuals are still tight enough
        if max(out.r_prim, out.r_dual) <= 1e-6:
            out.status = INACCURATE
        else:
            out.status = FAILED
    # weak-duality sanity (minimization): primal >= dual - 10 tol
    if out.status in (OPTIMAL, INACCURATE):
        gap_ok = out.obj_primal >= out.obj_dual - 10 * max(tol, 1e-7) * (1 + abs(out.obj_primal))
        if not gap_ok:
            out.status = FAILED
            out.message += " (weak duality violated)"
    return out
