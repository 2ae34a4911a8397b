"""Expression and problem-file parsing.

Grammar (infix): ``+ - * / ^``, unary minus, parentheses.  ``^`` takes a
nonnegative integer literal; ``/`` divides by a nonzero constant
subexpression.  Implicit multiplication is disallowed.  Variables are
``<block><index>`` with a 1-based index, e.g. ``x1``, ``y2``, ``z3``.
Decimal literals are converted exactly (0.25 -> 1/4).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .polyring import PolyError, Polynomial, VarSpace

__all__ = ["ParseError", "parse_poly", "parse_problem", "ProblemDoc"]


class ParseError(ValueError):
    """Syntax or schema error, carrying a human-readable position."""


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+(?:\.\d+)?)
  | (?P<var>[A-Za-z]+\d+)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r} at column {pos + 1}")
        if m.lastgroup == "num":
            out.append(("num", m.group(), pos))
        elif m.lastgroup == "var":
            out.append(("var", m.group(), pos))
        elif m.lastgroup == "op":
            out.append(("op", m.group(), pos))
        pos = m.end()
    out.append(("end", "", pos))
    return out


class _Parser:
    def __init__(self, text: str, space: VarSpace):
        self.text = text
        self.space = space
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def advance(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise ParseError(f"{msg} at column {tok[2] + 1} in {self.text!r}")

    def parse(self) -> Polynomial:
        p = self.expr()
        if self.peek()[0] != "end":
            self.fail("trailing input")
        return p

    def expr(self) -> Polynomial:
        kind, val, _ = self.peek()
        neg = False
        if kind == "op" and val in "+-":
            self.advance()
            neg = val == "-"
        p = self.term()
        if neg:
            p = -p
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                rhs = self.term()
                p = p - rhs if val == "-" else p + rhs
            else:
                return p

    def term(self) -> Polynomial:
        p = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                tok = self.advance()
                rhs = self.factor()
                if val == "*":
                    p = p * rhs
                else:
                    if not rhs.is_constant():
                        self.fail("division only by a constant", tok)
                    c = rhs.constant_value()
                    if c == 0:
                        self.fail("division by zero", tok)
                    p = p.scale(Fraction(1, 1) / c)
            else:
                return p

    def factor(self) -> Polynomial:
        kind, val, tok_pos = self.peek()
        if kind == "op" and val in "+-":
            self.advance()
            p = self.factor()
            return -p if val == "-" else p
        p = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            ekind, eval_, _ = self.peek()
            if ekind != "num" or "." in eval_:
                self.fail("exponent must be a nonnegative integer literal")
            self.advance()
            p = p ** int(eval_)
        return p

    def atom(self) -> Polynomial:
        kind, val, pos = self.peek()
        if kind == "num":
            self.advance()
            return Polynomial.const(self.space, Fraction(val))
        if kind == "var":
            self.advance()
            m = re.fullmatch(r"([A-Za-z]+)(\d+)", val)
            name, idx = m.group(1), int(m.group(2))
            if not self.space.has_block(name) or not (1 <= idx <= self.space.block_size(name)):
                self.fail(f"unknown variable {val!r}", (kind, val, pos))
            return Polynomial.variable(self.space, name, idx)
        if kind == "op" and val == "(":
            self.advance()
            p = self.expr()
            k2, v2, _ = self.peek()
            if not (k2 == "op" and v2 == ")"):
                self.fail("expected ')'")
            self.advance()
            return p
        self.fail("expected number, variable, or '('")


def parse_poly(text: str, space: VarSpace) -> Polynomial:
    """Parse an expression into an exact-rational Polynomial over ``space``."""
    if not isinstance(text, str):
        raise ParseError(f"expression must be a string, got {type(text).__name__}")
    return _Parser(text, space).parse()


# -- problem documents -----------------------------------------------------


@dataclass
class ProblemDoc:
    """Raw parsed document prior to semantic assembly."""

    n: int
    p: int
    upper_obj: Polynomial
    upper_eq: list
    upper_ineq: list
    lower_obj: Polynomial
    lower_eq: list
    lower_ineq: list
    lme_W: Optional[list] = None  # rows of Polynomial over (x, y)
    lme_d: Optional[list] = None
    extension: Optional[dict] = None  # raw rule descriptor, validated later
    config: dict = field(default_factory=dict)


_TOP_FIELDS = {"dims", "upper", "lower", "lme", "extension", "config"}


def _require(cond, msg):
    if not cond:
        raise ParseError(msg)


def _parse_group(obj, name, space, obj_required=True):
    _require(isinstance(obj, dict), f"{name!r} must be an object")
    for k in obj:
        _require(k in ("objective", "eq", "ineq"), f"unknown field {name}.{k}")
    _require("objective" in obj, f"{name}.objective missing")
    try:
        fobj = parse_poly(obj["objective"], space)
        eqs = [parse_poly(t, space) for t in obj.get("eq", [])]
        ineqs = [parse_poly(t, space) for t in obj.get("ineq", [])]
    except ParseError as e:
        raise ParseError(f"in {name}: {e}") from None
    return fobj, eqs, ineqs


def parse_problem_doc(doc: bytes) -> ProblemDoc:
    try:
        data = json.loads(doc)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e}") from None
    _require(isinstance(data, dict), "document root must be an object")
    for k in data:
        _require(k in _TOP_FIELDS, f"unknown top-level field {k!r}")
    dims = data.get("dims")
    _require(isinstance(dims, dict), "'dims' object required")
    _require(set(dims) == {"n", "p"}, "dims must have exactly fields n, p")
    n, p = dims["n"], dims["p"]
    _require(isinstance(n, int) and n >= 1, "dims.n must be a positive integer")
    _require(isinstance(p, int) and p >= 1, "dims.p must be a positive integer")

    xy = VarSpace.make(("x", n), ("y", p))
    xz = VarSpace.make(("x", n), ("z", p))

    _require("upper" in data, "'upper' object required")
    _require("lower" in data, "'lower' object required")
    F, h_eq, h_ineq = _parse_group(data["upper"], "upper", xy)
    f, g_eq, g_ineq = _parse_group(data["lower"], "lower", xz)

    W = d = None
    if "lme" in data:
        lme = data["lme"]
        _require(isinstance(lme, dict) and set(lme) == {"W", "d"}, "lme must have fields W, d")
        m2 = len(g_eq) + len(g_ineq)
        rows = lme["W"]
        _require(isinstance(rows, list) and len(rows) == m2, f"lme.W must have {m2} rows")
        W = []
        for i, row in enumerate(rows):
            _require(
                isinstance(row, list) and len(row) == p + m2,
                f"lme.W row {i + 1} must have {p + m2} entries",
            )
            W.append([parse_poly(t, xy) for t in row])
        _require(isinstance(lme["d"], list) and len(lme["d"]) == m2, f"lme.d must have {m2} entries")
        d = [parse_poly(t, xy) for t in lme["d"]]

    ext = data.get("extension")
    if ext is not None:
        _require(isinstance(ext, dict), "'extension' must be an object")

    cfg = data.get("config", {})
    _require(isinstance(cfg, dict), "'config' must be an object")

    return ProblemDoc(
        n=n, p=p,
        upper_obj=F, upper_eq=h_eq, upper_ineq=h_ineq,
        lower_obj=f, lower_eq=g_eq, lower_ineq=g_ineq,
        lme_W=W, lme_d=d, extension=ext, config=dict(cfg),
    )


def parse_problem(doc: bytes):
    """Parse and assemble a fully validated BilevelProblem from JSON bytes."""
    from .bilevel import BilevelProblem  # deferred: bilevel imports lme which uses polyring

    pd = parse_problem_doc(doc)
    try:
        return BilevelProblem.from_doc(pd)
    except PolyError as e:
        raise ParseError(str(e)) from None
