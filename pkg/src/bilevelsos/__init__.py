"""Global bilevel polynomial optimization.

Solves bilevel programs with polynomial data by reformulating the lower
level through Lagrange multiplier expressions, relaxing the resulting
single-level program with the Moment-SOS hierarchy, and refining with
exchange-style polynomial-extension cuts.
"""

from .polyring import Polynomial, VarSpace
from .parser import parse_poly, parse_problem

__all__ = ["Polynomial", "VarSpace", "parse_poly", "parse_problem"]
__version__ = "0.1.0"
