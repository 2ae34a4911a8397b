"""Graded-lex monomial ranking kernels for moment-matrix assembly.

The hot path ranks large batches of exponent sums (pairwise basis products,
optionally shifted by a constraint monomial).  A numba ``@njit`` kernel is
used when available; setting ``BILEVELSOS_NO_NUMBA=1`` (or any numba import
failure) selects a pure-numpy fallback computing the same combinatorial
formula.  Both paths are exercised by the test suite and the benchmark
script under ``benchmarks/``.
"""

from __future__ import annotations

import math
import os

import numpy as np

__all__ = ["USING_NUMBA", "binom_table", "rank_exponents", "pair_ranks"]

_want_numba = os.environ.get("BILEVELSOS_NO_NUMBA", "") not in ("1", "true", "yes")

if _want_numba:
    try:
        from numba import njit, prange

        USING_NUMBA = True
    except ImportError:  # pragma: no cover - depends on environment
        USING_NUMBA = False
else:
    USING_NUMBA = False

if not USING_NUMBA:
    def njit(*args, **kwargs):  # noqa: D103 - decorator shim
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

    prange = range


def binom_table(nmax: int) -> np.ndarray:
    """Pascal triangle C[i, j] = binomial(i, j) for i, j <= nmax."""
    C = np.zeros((nmax + 1, nmax + 1), dtype=np.int64)
    for i in range(nmax + 1):
        C[i, 0] = 1
        for j in range(1, i + 1):
            C[i, j] = C[i - 1, j - 1] + C[i - 1, j]
    return C


@njit(cache=True)
def _rank_one(e, nv, C):
    d = 0
    for i in range(nv):
        d += e[i]
    # monomials of degree < d come first
    rank = C[d - 1 + nv, nv] if d > 0 else 0
    rem = d
    for i in range(nv):
        # within the degree block, count tuples agreeing on e[:i] with a
        # larger i-th exponent: those of degree <= rem - e[i] - 1 in the tail
        t = rem - e[i] - 1
        if t >= 0 and nv - i - 1 >= 0:
            rank += C[t + nv - i - 1, nv - i - 1]
        rem -= e[i]
    return rank


@njit(cache=True)
def _rank_batch_njit(E, C):
    n, nv = E.shape
    out = np.empty(n, dtype=np.int64)
    for r in prange(n):
        out[r] = _rank_one(E[r], nv, C)
    return out


@njit(cache=True)
def _pair_ranks_njit(E, shift, C):
    n, nv = E.shape
    out = np.empty((n, n), dtype=np.int64)
    e = np.empty(nv, dtype=np.int64)
    for i in range(n):
        for j in range(i, n):
            for v in range(nv):
                e[v] = E[i, v] + E[j, v] + shift[v]
            r = _rank_one(e, nv, C)
            out[i, j] = r
            out[j, i] = r
    return out


def _rank_batch_numpy(E: np.ndarray, C: np.ndarray) -> np.ndarray:
    n, nv = E.shape
    d = E.sum(axis=1)
    rank = np.where(d > 0, C[np.maximum(d - 1 + nv, 0), nv], 0).astype(np.int64)
    rem = d.copy()
    for i in range(nv):
        t = rem - E[:, i] - 1
        ok = t >= 0
        rank[ok] += C[t[ok] + nv - i - 1, nv - i - 1]
        rem -= E[:, i]
    return rank


def rank_exponents(E: np.ndarray, C: np.ndarray | None = None) -> np.ndarray:
    """Graded-lex ranks of the rows of an (N, nv) exponent matrix.

    Rank 0 is the constant monomial; within a degree block the first
    variable's exponent descends first.
    """
    E = np.ascontiguousarray(E, dtype=np.int64)
    if E.size == 0:
        return np.zeros(len(E), dtype=np.int64)
    if C is None:
        C = binom_table(int(E.sum(axis=1).max()) + E.shape[1] + 1)
    if USING_NUMBA:
        return _rank_batch_njit(E, C)
    return _rank_batch_numpy(E, C)


def pair_ranks(E: np.ndarray, shift=None, C: np.ndarray | None = None) -> np.ndarray:
    """(N, N) matrix of ranks of E[i] + E[j] + shift over all basis pairs."""
    E = np.ascontiguousarray(E, dtype=np.int64)
    n, nv = E.shape
    if shift is None:
        shift = np.zeros(nv, dtype=np.int64)
    shift = np.ascontiguousarray(shift, dtype=np.int64)
    if C is None:
        dmax = int(2 * E.sum(axis=1).max() + shift.sum()) if n else 0
        C = binom_table(dmax + nv + 1)
    if USING_NUMBA:
        return _pair_ranks_njit(E, shift, C)
    out = np.empty((n, n), dtype=np.int64)
    for i in range(n):
        block = E[i:] + E[i] + shift
        row = _rank_batch_numpy(block, C)
        out[i, i:] = row
        out[i:, i] = row
    return out
