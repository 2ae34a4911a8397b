"""Sparse multivariate polynomial arithmetic over named variable blocks.

Coefficients live in one of two domains: exact rationals (``Fraction``) for
symbolic identities, or float64 for numeric assembly.  Promotion from exact
to float is explicit and lossy; mixing domains without promotion is an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "VarSpace",
    "Polynomial",
    "PolyError",
    "arith",
    "grad",
    "substitute",
    "monomials",
    "monomial_count",
    "mat_det_adj",
    "mat_mul",
    "exact_div",
    "rename_block",
    "tuple_degree",
]

EXACT = "exact"
FLOAT = "float"

Exponents = tuple  # packed exponent vector, one entry per variable
Coeff = Union[Fraction, float]


class PolyError(ValueError):
    """Raised on domain/space mismatches and failed exact operations."""


@dataclass(frozen=True)
class VarSpace:
    """Ordered named variable blocks, e.g. (x: n, y: p)."""

    blocks: tuple

    def __post_init__(self):
        names = [b[0] for b in self.blocks]
        if len(set(names)) != len(names):
            raise PolyError(f"duplicate block names in {names}")
        for name, size in self.blocks:
            if size < 0:
                raise PolyError(f"negative block size {name}:{size}")

    @staticmethod
    def make(*blocks) -> "VarSpace":
        return VarSpace(tuple((str(n), int(s)) for n, s in blocks))

    @property
    def dim(self) -> int:
        return sum(s for _, s in self.blocks)

    def has_block(self, name: str) -> bool:
        return any(n == name for n, _ in self.blocks)

    def block_size(self, name: str) -> int:
        for n, s in self.blocks:
            if n == name:
                return s
        raise PolyError(f"unknown block {name!r}")

    def block_offset(self, name: str) -> int:
        off = 0
        for n, s in self.blocks:
            if n == name:
                return off
            off += s
        raise PolyError(f"unknown block {name!r}")

    def block_range(self, name: str) -> range:
        off = self.block_offset(name)
        return range(off, off + self.block_size(name))

    def var_index(self, name: str, j: int) -> int:
        """Index of the 1-based j-th variable of a block."""
        if not 1 <= j <= self.block_size(name):
            raise PolyError(f"variable {name}{j} out of range")
        return self.block_offset(name) + j - 1

    def var_name(self, i: int) -> str:
        off = 0
        for n, s in self.blocks:
            if i < off + s:
                return f"{n}{i - off + 1}"
            off += s
        raise PolyError(f"variable index {i} out of range")

    def var_names(self):
        return [self.var_name(i) for i in range(self.dim)]


def _zero(domain: str) -> Coeff:
    return Fraction(0) if domain == EXACT else 0.0


def _as_coeff(c, domain: str) -> Coeff:
    if domain == EXACT:
        if isinstance(c, float):
            raise PolyError("float coefficient in exact domain (promote first)")
        return Fraction(c)
    return float(c)


class Polynomial:
    """Immutable sparse polynomial: dict of exponent tuple -> coefficient."""

    __slots__ = ("space", "terms", "domain")

    def __init__(self, space: VarSpace, terms: Mapping[Exponents, Coeff], domain: str = EXACT):
        if domain not in (EXACT, FLOAT):
            raise PolyError(f"bad domain {domain!r}")
        clean = {}
        for exps, c in terms.items():
            c = _as_coeff(c, domain)
            if c == 0:
                continue
            if len(exps) != space.dim:
                raise PolyError("exponent tuple length != space dimension")
            clean[tuple(exps)] = c
        self.space = space
        self.terms = clean
        self.domain = domain

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero(space: VarSpace, domain: str = EXACT) -> "Polynomial":
        return Polynomial(space, {}, domain)

    @staticmethod
    def const(space: VarSpace, c, domain: str = EXACT) -> "Polynomial":
        return Polynomial(space, {(0,) * space.dim: c}, domain)

    @staticmethod
    def var(space: VarSpace, i: int, domain: str = EXACT) -> "Polynomial":
        e = [0] * space.dim
        e[i] = 1
        return Polynomial(space, {tuple(e): 1 if domain == EXACT else 1.0}, domain)

    @staticmethod
    def variable(space: VarSpace, block: str, j: int, domain: str = EXACT) -> "Polynomial":
        return Polynomial.var(space, space.var_index(block, j), domain)

    # -- basic queries -----------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return all(sum(e) == 0 for e in self.terms)

    def constant_value(self) -> Coeff:
        if not self.terms:
            return _zero(self.domain)
        if not self.is_constant():
            raise PolyError("not a constant polynomial")
        return next(iter(self.terms.values()))

    def degree(self) -> int:
        """Total degree; the zero polynomial reports degree 0."""
        if not self.terms:
            return 0
        return max(sum(e) for e in self.terms)

    def variables_used(self):
        used = set()
        for e in self.terms:
            for i, p in enumerate(e):
                if p:
                    used.add(i)
        return used

    def __eq__(self, other):
        return (
            isinstance(other, Polynomial)
            and self.space == other.space
            and self.domain == other.domain
            and self.terms == other.terms
        )

    def __hash__(self):
        return hash((self.space, self.domain, frozenset(self.terms.items())))

    # -- arithmetic --------------------------------------------------------

    def _check(self, other: "Polynomial"):
        if self.space != other.space:
            raise PolyError("operands live in different variable spaces")
        if self.domain != other.domain:
            raise PolyError("mixed coefficient domains (promote explicitly)")

    def __add__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.const(self.space, other, self.domain)
        self._check(other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, _zero(self.domain)) + c
        return Polynomial(self.space, terms, self.domain)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.space, {e: -c for e, c in self.terms.items()}, self.domain)

    def __sub__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.const(self.space, other, self.domain)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return self.scale(other)
        self._check(other)
        terms = {}
        z = _zero(self.domain)
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, z) + c1 * c2
        return Polynomial(self.space, terms, self.domain)

    __rmul__ = __mul__

    def scale(self, s) -> "Polynomial":
        s = _as_coeff(s, self.domain)
        return Polynomial(self.space, {e: c * s for e, c in self.terms.items()}, self.domain)

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise PolyError("pow exponent must be a nonnegative integer")
        out = Polynomial.const(self.space, 1, self.domain)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base if k > 1 else base
            k >>= 1
        return out

    def to_float(self) -> "Polynomial":
        """Lossy promotion to the float64 coefficient domain."""
        if self.domain == FLOAT:
            return self
        return Polynomial(self.space, {e: float(c) for e, c in self.terms.items()}, FLOAT)

    # -- calculus / substitution ------------------------------------------

    def diff(self, i: int) -> "Polynomial":
        terms = {}
        z = _zero(self.domain)
        for e, c in self.terms.items():
            if e[i] == 0:
                continue
            ne = list(e)
            k = ne[i]
            ne[i] -= 1
            ne = tuple(ne)
            terms[ne] = terms.get(ne, z) + c * k
        return Polynomial(self.space, terms, self.domain)

    def eval(self, point: Sequence) -> Coeff:
        """Evaluate at a full-dimension point."""
        if len(point) != self.space.dim:
            raise PolyError("point length != space dimension")
        total = _zero(self.domain) if self.domain == EXACT else 0.0
        for e, c in self.terms.items():
            v = c
            for i, p in enumerate(e):
                if p:
                    v = v * point[i] ** p
            total = total + v
        return total

    def eval_many(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized float evaluation at rows of ``pts`` (N x dim)."""
        if not self.terms:
            return np.zeros(len(pts))
        E = np.array(list(self.terms.keys()), dtype=np.int64)
        C = np.array([float(c) for c in self.terms.values()])
        return np.power(pts[:, None, :], E[None, :, :]).prod(axis=2) @ C

    # -- rendering ---------------------------------------------------------

    def render(self) -> str:
        """Expression string parseable by the bundled grammar."""
        if not self.terms:
            return "0"
        items = sorted(self.terms.items(), key=lambda t: (sum(t[0]), tuple(-x for x in t[0])))
        parts = []
        for e, c in items:
            factors = []
            for i, p in enumerate(e):
                if p == 1:
                    factors.append(self.space.var_name(i))
                elif p > 1:
                    factors.append(f"{self.space.var_name(i)}^{p}")
            neg = c < 0
            ac = -c if neg else c
            cs = str(ac) if self.domain == EXACT else repr(float(ac))
            if factors and ac == 1:
                body = "*".join(factors)
            elif factors:
                body = cs + "*" + "*".join(factors)
            else:
                body = cs
            if not parts:
                parts.append(("-" if neg else "") + body)
            else:
                parts.append((" - " if neg else " + ") + body)
        return "".join(parts)

    def __repr__(self):
        return f"Polynomial({self.render()})"


# -- spec-surface operations ----------------------------------------------


def arith(kind: str, a: Polynomial, b=None) -> Polynomial:
    """Dispatch wrapper over the arithmetic dunders."""
    if kind == "add":
        return a + b
    if kind == "sub":
        return a - b
    if kind == "mul":
        return a * b
    if kind == "scale":
        return a.scale(b)
    if kind == "pow":
        return a**b
    raise PolyError(f"unknown arith kind {kind!r}")


def grad(p: Polynomial, block: str):
    """Partial gradient with respect to a named block, in block order."""
    return [p.diff(i) for i in p.space.block_range(block)]


def _map_exponents(e: Exponents, src: VarSpace, dst: VarSpace, skip: range):
    """Re-home the non-substituted exponents of ``e`` into ``dst`` by block name."""
    out = [0] * dst.dim
    off = 0
    for name, size in src.blocks:
        for j in range(size):
            i = off + j
            if i in skip:
                continue
            if e[i]:
                if not dst.has_block(name) or dst.block_size(name) < j + 1:
                    raise PolyError(f"target space lacks variable {name}{j + 1}")
                out[dst.block_offset(name) + j] += e[i]
        off += size
    return tuple(out)


def substitute(p: Polynomial, block: str, values) -> Polynomial:
    """Substitute a block by numbers (partial evaluation) or polynomials.

    Polynomial values must all live in one common space; the result lives
    there, with p's remaining blocks mapped over by name.
    """
    rng = p.space.block_range(block)
    if len(values) != len(rng):
        raise PolyError(f"substitute: expected {len(rng)} values, got {len(values)}")
    if values and isinstance(values[0], Polynomial):
        target = values[0].space
        for q in values:
            if q.space != target or q.domain != p.domain:
                raise PolyError("substitute: inconsistent value polynomials")
        if target.has_block(block) and target.block_range(block) == rng and target == p.space:
            raise PolyError("substitute: target space still contains the block")
        out = Polynomial.zero(target, p.domain)
        for e, c in p.terms.items():
            base = Polynomial(target, {_map_exponents(e, p.space, target, rng): c}, p.domain)
            for k, i in enumerate(rng):
                if e[i]:
                    base = base * values[k] ** e[i]
            out = out + base
        return out
    # numeric substitution: stay in the same space with the block zeroed out
    out_terms = {}
    z = _zero(p.domain)
    for e, c in p.terms.items():
        v = c
        for k, i in enumerate(rng):
            if e[i]:
                val = _as_coeff(values[k], p.domain)
                v = v * val ** e[i]
        ne = list(e)
        for i in rng:
            ne[i] = 0
        ne = tuple(ne)
        out_terms[ne] = out_terms.get(ne, z) + v
    return Polynomial(p.space, out_terms, p.domain)


def rename_block(p: Polynomial, target: VarSpace, mapping: Mapping[str, str]) -> Polynomial:
    """Move p into ``target``, renaming blocks per ``mapping`` (others keep names)."""
    out = {}
    for e, c in p.terms.items():
        ne = [0] * target.dim
        off = 0
        for name, size in p.space.blocks:
            tname = mapping.get(name, name)
            for j in range(size):
                if e[off + j]:
                    ne[target.block_offset(tname) + j] += e[off + j]
            off += size
        out[tuple(ne)] = c
    return Polynomial(target, out, p.domain)


# -- monomial enumeration --------------------------------------------------


def monomial_count(dim: int, k: int) -> int:
    return math.comb(dim + k, k)


def _degree_block(dim: int, d: int):
    """Exponent tuples of total degree d, first variable's power descending."""
    if dim == 1:
        yield (d,)
        return
    for lead in range(d, -1, -1):
        for rest in _degree_block(dim - 1, d - lead):
            yield (lead,) + rest


def monomials(space_or_dim, k: int):
    """All monomials of degree <= k in graded lexicographic order."""
    dim = space_or_dim if isinstance(space_or_dim, int) else space_or_dim.dim
    if k < 0:
        raise PolyError("degree bound must be >= 0")
    out = []
    for d in range(k + 1):
        out.extend(_degree_block(dim, d))
    return out


# -- exact division / determinant / adjugate -------------------------------


def _grlex_key(e: Exponents):
    return (sum(e), tuple(-x for x in e))


def _leading(p: Polynomial):
    return max(p.terms.items(), key=lambda t: _grlex_key(t[0]))


def exact_div(a: Polynomial, b: Polynomial) -> Polynomial:
    """Exact polynomial quotient a/b; raises if b does not divide a."""
    if a.domain != EXACT or b.domain != EXACT:
        raise PolyError("exact_div requires the exact domain")
    if b.is_zero():
        raise PolyError("division by the zero polynomial")
    q = Polynomial.zero(a.space, EXACT)
    r = a
    eb, cb = _leading(b)
    while not r.is_zero():
        er, cr = _leading(r)
        de = tuple(x - y for x, y in zip(er, eb))
        if any(x < 0 for x in de):
            raise PolyError("exact_div: not divisible")
        t = Polynomial(a.space, {de: cr / cb}, EXACT)
        q = q + t
        r = r - t * b
    return q


def _minor(M, i, j):
    return [[M[r][c] for c in range(len(M)) if c != j] for r in range(len(M)) if r != i]


def _det_bareiss(M) -> Polynomial:
    n = len(M)
    space = M[0][0].space
    if n == 0:
        return Polynomial.const(space, 1)
    A = [row[:] for row in M]
    prev = Polynomial.const(space, 1)
    sign = 1
    for k in range(n - 1):
        if A[k][k].is_zero():
            for r in range(k + 1, n):
                if not A[r][k].is_zero():
                    A[k], A[r] = A[r], A[k]
                    sign = -sign
                    break
            else:
                return Polynomial.zero(space)
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                A[i][j] = exact_div(A[k][k] * A[i][j] - A[i][k] * A[k][j], prev)
        prev = A[k][k]
    det = A[n - 1][n - 1]
    return det if sign == 1 else -det


def mat_det_adj(M):
    """Determinant and adjugate of a square polynomial matrix (exact domain).

    Returns (det, adj) with adj @ M == det * I as an exact identity.
    """
    n = len(M)
    for row in M:
        if len(row) != n:
            raise PolyError("mat_det_adj: matrix not square")
        for p in row:
            if p.domain != EXACT:
                raise PolyError("mat_det_adj: float-domain input rejected")
    det = _det_bareiss(M)
    adj = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            m = _det_bareiss(_minor(M, j, i)) if n > 1 else Polynomial.const(M[0][0].space, 1)
            adj[i][j] = m if (i + j) % 2 == 0 else -m
    return det, adj


def mat_mul(A, B):
    rows, inner, cols = len(A), len(B), len(B[0])
    out = []
    for i in range(rows):
        row = []
        for j in range(cols):
            s = Polynomial.zero(A[0][0].space, A[0][0].domain)
            for k in range(inner):
                s = s + A[i][k] * B[k][j]
            row.append(s)
        out.append(row)
    return out


def tuple_degree(polys: Iterable[Polynomial]) -> int:
    """Highest degree among a tuple of polynomials (0 for an empty tuple)."""
    degs = [p.degree() for p in polys]
    return max(degs) if degs else 0
