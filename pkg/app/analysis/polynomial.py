"""Multivariate polynomials over Q.

Coefficients are kept as exact ``Fraction`` values so parsing, printing and
initial forms are exact; ``CompiledPolynomial`` is the float path used by the
samplers.
"""
from __future__ import annotations

import re
from itertools import combinations
from fractions import Fraction
from functools import cached_property
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
import sympy

from app.core.errors import AnalysisError, ParseError

ALIASES = ("x", "y", "z", "t")

Monomial = tuple[int, ...]


def variable_names(n: int) -> list[str]:
    return list(ALIASES[:n]) if n <= len(ALIASES) else [f"x{i + 1}" for i in range(n)]


def accepted_names(n: int) -> dict[str, int]:
    names = {f"x{i + 1}": i for i in range(n)}
    if n <= len(ALIASES):
        names.update({alias: i for i, alias in enumerate(ALIASES[:n])})
    return names


class Polynomial:
    def __init__(self, n: int, terms: Mapping[Monomial, Fraction | int] | None = None):
        if n < 1:
            raise ValueError("ambient dimension must be positive")
        clean: dict[Monomial, Fraction] = {}
        for mono, coeff in (terms or {}).items():
            mono = tuple(int(e) for e in mono)
            if len(mono) != n or any(e < 0 for e in mono):
                raise ValueError(f"invalid exponent {mono} for n={n}")
            coeff = Fraction(coeff)
            if coeff != 0:
                clean[mono] = coeff
        self.n = n
        self.terms = MappingProxyType(clean)

    @classmethod
    def zero(cls, n: int) -> "Polynomial":
        return cls(n)

    @classmethod
    def constant(cls, n: int, c) -> "Polynomial":
        return cls(n, {(0,) * n: Fraction(c)})

    @classmethod
    def variable(cls, n: int, i: int) -> "Polynomial":
        mono = [0] * n
        mono[i] = 1
        return cls(n, {tuple(mono): 1})

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def is_constant(self) -> bool:
        return all(sum(m) == 0 for m in self.terms)

    @property
    def degree(self) -> int:
        return max((sum(m) for m in self.terms), default=-1)

    @property
    def min_degree(self) -> int:
        return min((sum(m) for m in self.terms), default=-1)

    def constant_term(self) -> Fraction:
        return self.terms.get((0,) * self.n, Fraction(0))

    def _check(self, other: "Polynomial") -> None:
        if other.n != self.n:
            raise ValueError(f"ambient dimensions differ: {self.n} vs {other.n}")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, Fraction)):
            return Polynomial.constant(self.n, other)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, Fraction(0)) + c
        return Polynomial(self.n, out)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.n, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[Monomial, Fraction] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                out[m] = out.get(m, Fraction(0)) + c1 * c2
        return Polynomial(self.n, out)

    __rmul__ = __mul__

    def __pow__(self, power: int) -> "Polynomial":
        if power < 0:
            raise ValueError("negative powers are not polynomial")
        result = Polynomial.constant(self.n, 1)
        base = self
        while power:
            if power & 1:
                result = result * base
            base = base * base
            power >>= 1
        return result

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.n == other.n and dict(self.terms) == dict(other.terms)

    def __hash__(self) -> int:
        return hash((self.n, frozenset(self.terms.items())))

    def __reduce__(self):
        # mappingproxy does not pickle; --jobs workers get a plain dict
        return (Polynomial, (self.n, dict(self.terms)))

    def partial(self, i: int) -> "Polynomial":
        out = {}
        for m, c in self.terms.items():
            if m[i] > 0:
                lowered = list(m)
                lowered[i] -= 1
                out[tuple(lowered)] = c * m[i]
        return Polynomial(self.n, out)

    @cached_property
    def partials(self) -> tuple["Polynomial", ...]:
        return tuple(self.partial(i) for i in range(self.n))

    def homogeneous_part(self, degree: int) -> "Polynomial":
        return Polynomial(self.n, {m: c for m, c in self.terms.items() if sum(m) == degree})

    def initial_form(self) -> "Polynomial":
        """Lowest-degree homogeneous part."""
        if self.is_zero:
            raise AnalysisError("the zero polynomial has no initial form")
        return self.homogeneous_part(self.min_degree)

    def evaluate_exact(self, x: Sequence) -> Fraction:
        if len(x) != self.n:
            raise ValueError(f"expected {self.n} coordinates, got {len(x)}")
        xs = [v if isinstance(v, Fraction) else Fraction(float(v)) for v in x]
        total = Fraction(0)
        for m, c in self.terms.items():
            term = c
            for xi, e in zip(xs, m):
                if e:
                    term *= xi ** e
            total += term
        return total

    def eval(self, x: Sequence) -> float:
        return float(self.evaluate_exact(x))

    def grad(self, x: Sequence) -> np.ndarray:
        xs = [Fraction(float(v)) for v in x]
        return np.array([float(p.evaluate_exact(xs)) for p in self.partials])

    def to_sympy(self, symbols: Sequence[sympy.Symbol] | None = None) -> sympy.Expr:
        symbols = symbols or sympy.symbols(variable_names(self.n))
        return sympy.Add(*[
            sympy.Rational(c.numerator, c.denominator) * sympy.Mul(*[s ** e for s, e in zip(symbols, m)])
            for m, c in self.terms.items()
        ])

    @classmethod
    def from_sympy(cls, expr: sympy.Expr, symbols: Sequence[sympy.Symbol]) -> "Polynomial":
        poly = sympy.Poly(sympy.expand(expr), *symbols, domain="QQ")
        terms = {}
        for mono, coeff in poly.terms():
            coeff = sympy.Rational(coeff)
            terms[tuple(mono)] = Fraction(int(coeff.p), int(coeff.q))
        return cls(len(symbols), terms)

    def format(self, names: Sequence[str] | None = None) -> str:
        names = list(names or variable_names(self.n))
        if self.is_zero:
            return "0"
        ordered = sorted(self.terms, key=lambda m: (-sum(m), tuple(-e for e in m)))
        pieces = []
        for index, mono in enumerate(ordered):
            coeff = self.terms[mono]
            factors = [f"{names[i]}^{e}" if e > 1 else names[i] for i, e in enumerate(mono) if e]
            magnitude = abs(coeff)
            if not factors:
                body = str(magnitude)
            elif magnitude == 1:
                body = "*".join(factors)
            else:
                body = f"{magnitude}*" + "*".join(factors)
            if index == 0:
                pieces.append(f"-{body}" if coeff < 0 else body)
            else:
                pieces.append(f" - {body}" if coeff < 0 else f" + {body}")
        return "".join(pieces)

    def __str__(self) -> str:
        return self.format()

    def __repr__(self) -> str:
        return f"Polynomial(n={self.n}, '{self.format()}')"

    @cached_property
    def compiled(self) -> "CompiledPolynomial":
        return CompiledPolynomial(self)


class CompiledPolynomial:
    """Float evaluation of a polynomial and its gradient over many points at once."""

    def __init__(self, poly: Polynomial):
        monos = list(poly.terms)
        self.n = poly.n
        self.exponents = np.array(monos, dtype=int).reshape(len(monos), poly.n)
        self.coefficients = np.array([float(c) for c in poly.terms.values()], dtype=float)
        self.degrees = self.exponents.sum(axis=1)
        self._partials = [CompiledPolynomial(p) for p in poly.partials] if poly.degree > 0 else None

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.coefficients.size:
            return np.zeros(len(X))
        monomials = np.prod(X[:, None, :] ** self.exponents[None, :, :], axis=2)
        return monomials @ self.coefficients

    def gradient(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self._partials is None:
            return np.zeros_like(X)
        return np.stack([p(X) for p in self._partials], axis=1)

    def gradient_scale(self, X: np.ndarray) -> np.ndarray:
        """sum |c| deg ||x||^(deg-1): a bound on ||grad|| used to normalise Jacobian rows."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        active = self.degrees >= 1
        if not np.any(active):
            return np.zeros(len(X))
        norms = np.linalg.norm(X, axis=1)
        deg = self.degrees[active]
        weights = np.abs(self.coefficients[active]) * deg
        return (norms[:, None] ** (deg - 1)[None, :]) @ weights


_TOKEN = re.compile(r"(?P<num>\d+)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>\*\*|[-+*/^()])")


class _Parser:
    """Recursive-descent reader for the polynomial grammar.

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' integer)*
    atom   := integer | variable | '(' expr ')'
    """

    def __init__(self, text: str, n: int):
        self.text = text
        self.n = n
        self.names = accepted_names(n)
        self.tokens = self._tokenize(text)
        self.index = 0

    def _tokenize(self, text: str) -> list[tuple[str, str, int]]:
        tokens = []
        pos = 0
        while pos < len(text):
            if text[pos].isspace():
                pos += 1
                continue
            match = _TOKEN.match(text, pos)
            if not match:
                raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
            kind = match.lastgroup
            value = match.group(kind)
            if kind == "name" and value not in self.names:
                raise ParseError(f"unknown variable '{value}' for n={self.n}", pos, text)
            if value == "**":
                kind, value = "op", "^"
            tokens.append((kind, value, pos))
            pos = match.end()
        return tokens

    def _peek(self):
        return self.tokens[self.index] if self.index < len(self.tokens) else None

    def _position(self) -> int:
        tok = self._peek()
        return tok[2] if tok else len(self.text)

    def _accept(self, *ops: str):
        tok = self._peek()
        if tok and tok[0] == "op" and tok[1] in ops:
            self.index += 1
            return tok
        return None

    def parse(self) -> Polynomial:
        if not self.tokens:
            raise ParseError("empty polynomial", 0, self.text)
        result = self._expr()
        if self._peek() is not None:
            raise ParseError(f"unexpected token '{self._peek()[1]}'", self._position(), self.text)
        return result

    def _expr(self) -> Polynomial:
        result = self._term()
        while True:
            op = self._accept("+", "-")
            if not op:
                return result
            rhs = self._term()
            result = result + rhs if op[1] == "+" else result - rhs

    def _term(self) -> Polynomial:
        result = self._unary()
        while True:
            op = self._accept("*", "/")
            if not op:
                return result
            position = self._position()
            rhs = self._unary()
            if op[1] == "*":
                result = result * rhs
                continue
            if not rhs.is_constant or rhs.is_zero:
                raise ParseError("division is only allowed by a nonzero constant", position, self.text)
            result = result * Polynomial.constant(self.n, 1 / rhs.constant_term())

    def _unary(self) -> Polynomial:
        if self._accept("-"):
            return -self._unary()
        if self._accept("+"):
            return self._unary()
        return self._power()

    def _power(self) -> Polynomial:
        base = self._atom()
        while self._accept("^"):
            tok = self._peek()
            if tok is None or tok[0] != "num":
                raise ParseError("exponent must be a nonnegative integer", self._position(), self.text)
            self.index += 1
            base = base ** int(tok[1])
        return base

    def _atom(self) -> Polynomial:
        tok = self._peek()
        if tok is None:
            raise ParseError("unexpected end of input", len(self.text), self.text)
        kind, value, pos = tok
        if kind == "num":
            self.index += 1
            return Polynomial.constant(self.n, int(value))
        if kind == "name":
            self.index += 1
            return Polynomial.variable(self.n, self.names[value])
        if value == "(":
            self.index += 1
            inner = self._expr()
            if not self._accept(")"):
                raise ParseError("missing closing parenthesis", self._position(), self.text)
            return inner
        raise ParseError(f"unexpected token '{value}'", pos, self.text)


def parse_polynomial(text: str, n: int) -> Polynomial:
    return _Parser(text, n).parse()


def jacobian_minors(polys: Sequence[Polynomial], size: int) -> list[Polynomial]:
    """All size x size minors of the Jacobian of ``polys``, computed exactly with sympy."""
    if not polys:
        return []
    n = polys[0].n
    symbols = sympy.symbols(variable_names(n))
    J = sympy.Matrix([[p.partial(i).to_sympy(symbols) for i in range(n)] for p in polys])
    minors = []
    for rows in combinations(range(J.rows), size):
        for cols in combinations(range(n), size):
            det = J.extract(list(rows), list(cols)).det(method="berkowitz")
            poly = Polynomial.from_sympy(det, symbols)
            if not poly.is_zero and poly not in minors:
                minors.append(poly)
    return minors
