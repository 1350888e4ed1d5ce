"""Exact polynomial maps R^n -> R^n.

Coefficients are held as :class:`fractions.Fraction` so that derivative data
(Jacobians, symmetric Taylor tensors) carry no finite-difference error. Float
evaluation converts each coefficient once and sums monomials in a fixed order.

Map files use a small line-oriented grammar::

    dim 2
    f1 = x1^2 - x2^2
    f2 = 2*x1*x2

Blank lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "MapSyntaxError",
    "Monomial",
    "PolynomialMap",
    "parse_map",
    "format_map",
    "load_map",
    "exact_expansion",
    "taylor_shift",
]

Exponents = tuple[int, ...]
Poly = dict[Exponents, Fraction]


class MapSyntaxError(ValueError):
    """Raised for malformed map text; carries the line/column of the problem."""

    def __init__(self, message: str, line: int = 0, column: int = 0, expected: str | None = None):
        self.line = line
        self.column = column
        self.expected = expected
        where = f"line {line}, column {column}: " if line else ""
        tail = f" (expected {expected})" if expected else ""
        super().__init__(f"{where}{message}{tail}")


@dataclass(frozen=True, order=True)
class Monomial:
    exponents: Exponents
    coefficient: Fraction

    def __post_init__(self):
        if any(e < 0 for e in self.exponents):
            raise ValueError("negative exponent")
        # Fraction already keeps gcd-reduced form with a positive denominator
        object.__setattr__(self, "coefficient", Fraction(self.coefficient))
        object.__setattr__(self, "exponents", tuple(int(e) for e in self.exponents))

    @property
    def degree(self) -> int:
        return sum(self.exponents)


def _lex_key(exps: Exponents) -> tuple[int, ...]:
    # descending lexicographic order: x1^2 before x1*x2 before x2^2 before constants
    return tuple(-e for e in exps)


def _normalize(poly: Poly) -> tuple[Monomial, ...]:
    items = [(e, c) for e, c in poly.items() if c != 0]
    items.sort(key=lambda ec: _lex_key(ec[0]))
    return tuple(Monomial(e, c) for e, c in items)


@dataclass(frozen=True)
class PolynomialMap:
    """A polynomial map with ``dim`` variables and ``dim`` components."""

    dim: int
    components: tuple[tuple[Monomial, ...], ...]
    _float_terms: list = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if len(self.components) != self.dim:
            raise ValueError(f"expected {self.dim} components, got {len(self.components)}")
        normalized = []
        for comp in self.components:
            poly: Poly = {}
            for mono in comp:
                if len(mono.exponents) != self.dim:
                    raise ValueError("monomial exponent length does not match dimension")
                if mono.exponents in poly:
                    raise ValueError(f"repeated exponent vector {mono.exponents} in one component")
                poly[mono.exponents] = mono.coefficient
            normalized.append(_normalize(poly))
        object.__setattr__(self, "components", tuple(normalized))
        terms = [
            [(float(m.coefficient), m.exponents) for m in comp] for comp in self.components
        ]
        object.__setattr__(self, "_float_terms", terms)

    @classmethod
    def from_polys(cls, dim: int, polys: Sequence[Poly]) -> "PolynomialMap":
        comps = tuple(tuple(Monomial(e, c) for e, c in p.items() if c != 0) for p in polys)
        return cls(dim, comps)

    def polys(self) -> list[Poly]:
        return [{m.exponents: m.coefficient for m in comp} for comp in self.components]

    @property
    def degree(self) -> int:
        return max((m.degree for comp in self.components for m in comp), default=0)

    # -- evaluation -----------------------------------------------------

    def evaluate_many(self, points) -> np.ndarray:
        """Evaluate at each row of ``points`` (shape ``(N, dim)``)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise ValueError(f"points must have shape (N, {self.dim}), got {pts.shape}")
        out = np.zeros((pts.shape[0], self.dim))
        for i, terms in enumerate(self._float_terms):
            acc = np.zeros(pts.shape[0])
            for coef, exps in terms:
                term = np.full(pts.shape[0], coef)
                for j, e in enumerate(exps):
                    if e:
                        term = term * pts[:, j] ** e
                acc = acc + term
            out[:, i] = acc
        return out

    def evaluate(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=float)
        if p.shape != (self.dim,):
            raise ValueError(f"point must have length {self.dim}, got shape {p.shape}")
        return self.evaluate_many(p[None, :])[0]

    __call__ = evaluate

    def evaluate_exact(self, point: Sequence) -> list[Fraction]:
        """Rational evaluation; float inputs are converted exactly."""
        if len(point) != self.dim:
            raise ValueError(f"point must have length {self.dim}")
        q = [Fraction(p) for p in point]
        out = []
        for comp in self.components:
            acc = Fraction(0)
            for m in comp:
                term = m.coefficient
                for qj, e in zip(q, m.exponents):
                    if e:
                        term *= qj**e
                acc += term
            out.append(acc)
        return out

    # -- calculus -------------------------------------------------------

    def derivative(self, j: int) -> "PolynomialMap":
        """Componentwise partial derivative with respect to x_{j+1}."""
        polys = []
        for comp in self.components:
            p: Poly = {}
            for m in comp:
                e = m.exponents[j]
                if e:
                    ex = list(m.exponents)
                    ex[j] -= 1
                    p[tuple(ex)] = p.get(tuple(ex), Fraction(0)) + m.coefficient * e
            polys.append(p)
        return PolynomialMap.from_polys(self.dim, polys)

    @cached_property
    def _partials(self) -> list["PolynomialMap"]:
        return [self.derivative(j) for j in range(self.dim)]

    def jacobian(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=float)
        return np.column_stack([d.evaluate(p) for d in self._partials])

    def jacobian_many(self, points) -> np.ndarray:
        """Jacobians at each row, shape ``(N, dim, dim)``."""
        return np.stack([d.evaluate_many(points) for d in self._partials], axis=-1)

    def __str__(self) -> str:
        return format_map(self)


# -- printing -----------------------------------------------------------


def _format_coef(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


def _format_poly(comp: Iterable[Monomial]) -> str:
    parts: list[str] = []
    for m in comp:
        factors = [
            f"x{j + 1}" if e == 1 else f"x{j + 1}^{e}" for j, e in enumerate(m.exponents) if e
        ]
        mag = abs(m.coefficient)
        if not factors:
            body = _format_coef(mag)
        elif mag == 1:
            body = "*".join(factors)
        else:
            body = "*".join([_format_coef(mag)] + factors)
        if not parts:
            parts.append(("-" if m.coefficient < 0 else "") + body)
        else:
            parts.append(("- " if m.coefficient < 0 else "+ ") + body)
    return " ".join(parts) if parts else "0"


def format_map(pmap: PolynomialMap) -> str:
    lines = [f"dim {pmap.dim}"]
    for i, comp in enumerate(pmap.components):
        lines.append(f"f{i + 1} = {_format_poly(comp)}")
    return "\n".join(lines) + "\n"


# -- parsing ------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<dec>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)"
    r"|(?P<int>\d+)"
    r"|(?P<var>x\d+)"
    r"|(?P<op>[-+*/^()=])"
    r")"
)


class _Parser:
    def __init__(self, text: str, line: int, dim: int):
        self.line = line
        self.dim = dim
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        text = text.rstrip()
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if not m or m.end() == pos:
                raise MapSyntaxError(f"unexpected character {text[pos]!r}", line, pos + 1)
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start + 1))
            pos = m.end()
        self.i = 0
        self.end_col = len(text) + 1

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("eof", "", self.end_col)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def error(self, expected: str):
        kind, val, col = self.peek()
        found = "end of line" if kind == "eof" else repr(val)
        raise MapSyntaxError(f"unexpected {found}", self.line, col, expected)

    def expect_op(self, op: str):
        kind, val, _ = self.peek()
        if kind != "op" or val != op:
            self.error(repr(op))
        self.take()

    def parse_int(self) -> int:
        kind, val, _ = self.peek()
        if kind != "int":
            self.error("integer")
        self.take()
        return int(val)

    def expr(self) -> Poly:
        sign = 1
        kind, val, _ = self.peek()
        if kind == "op" and val in "+-":
            self.take()
            sign = -1 if val == "-" else 1
        acc = _scale(self.term(), sign)
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                acc = _add(acc, _scale(self.term(), -1 if val == "-" else 1))
            else:
                return acc

    def term(self) -> Poly:
        acc = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "*":
                self.take()
                acc = _mul(acc, self.factor(), self.dim)
            else:
                return acc

    def factor(self) -> Poly:
        kind, val, col = self.peek()
        zero = (0,) * self.dim
        if kind == "int":
            self.take()
            num = int(val)
            k2, v2, _ = self.peek()
            if k2 == "op" and v2 == "/":
                self.take()
                den = self.parse_int()
                if den == 0:
                    raise MapSyntaxError("zero denominator", self.line, col)
                return {zero: Fraction(num, den)}
            return {zero: Fraction(num)}
        if kind == "dec":
            self.take()
            return {zero: Fraction(val)}
        if kind == "var":
            self.take()
            idx = int(val[1:])
            if idx < 1 or idx > self.dim:
                raise MapSyntaxError(
                    f"variable index {idx} exceeds dimension {self.dim}", self.line, col
                )
            power = 1
            k2, v2, _ = self.peek()
            if k2 == "op" and v2 == "^":
                self.take()
                power = self.parse_int()
            ex = [0] * self.dim
            ex[idx - 1] = power
            return {tuple(ex): Fraction(1)}
        if kind == "op" and val == "(":
            self.take()
            inner = self.expr()
            self.expect_op(")")
            return inner
        self.error("coefficient, variable or '('")


def _add(a: Poly, b: Poly) -> Poly:
    out = dict(a)
    for e, c in b.items():
        out[e] = out.get(e, Fraction(0)) + c
    return out


def _scale(a: Poly, s) -> Poly:
    return {e: c * s for e, c in a.items()}


def _mul(a: Poly, b: Poly, dim: int) -> Poly:
    out: Poly = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            out[e] = out.get(e, Fraction(0)) + ca * cb
    return out


_COMP_RE = re.compile(r"\s*f(\d+)\s*=")


def parse_map(text: str) -> PolynomialMap:
    """Parse map-file text into a normalized :class:`PolynomialMap`."""
    lines = text.splitlines()
    dim = None
    comps: dict[int, Poly] = {}
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if dim is None:
            m = re.fullmatch(r"dim\s+(\d+)", stripped)
            if not m:
                raise MapSyntaxError("missing dimension header", lineno, 1, "'dim' INT")
            dim = int(m.group(1))
            if dim < 1:
                raise MapSyntaxError("dimension must be >= 1", lineno, 5)
            continue
        m = _COMP_RE.match(raw)
        if not m:
            raise MapSyntaxError("malformed component definition", lineno, 1, "'f' INT '='")
        idx = int(m.group(1))
        if idx < 1 or idx > dim:
            raise MapSyntaxError(f"component index {idx} exceeds dimension {dim}", lineno, 1)
        if idx in comps:
            raise MapSyntaxError(f"duplicate definition of f{idx}", lineno, 1)
        body = raw[m.end():]
        parser = _Parser(body, lineno, dim)
        # shift reported columns to account for the "fN =" prefix
        parser.tokens = [(k, v, c + m.end()) for k, v, c in parser.tokens]
        parser.end_col += m.end()
        poly = parser.expr()
        if parser.peek()[0] != "eof":
            parser.error("'+', '-', '*' or end of line")
        comps[idx] = poly
    if dim is None:
        raise MapSyntaxError("empty map file", 0, 0, "'dim' INT")
    missing = [i for i in range(1, dim + 1) if i not in comps]
    if missing:
        raise MapSyntaxError(f"missing component definition f{missing[0]}", len(lines), 1)
    return PolynomialMap.from_polys(dim, [comps[i] for i in range(1, dim + 1)])


def load_map(path) -> PolynomialMap:
    with open(path, encoding="utf-8") as fh:
        return parse_map(fh.read())


# -- Taylor data --------------------------------------------------------


def taylor_shift(pmap: PolynomialMap, point: Sequence) -> PolynomialMap:
    """Exact polynomial ``v -> f(point + v)``, with ``point`` converted exactly."""
    if len(point) != pmap.dim:
        raise ValueError(f"point must have length {pmap.dim}")
    q = [Fraction(p) for p in point]
    polys = []
    for comp in pmap.components:
        p: Poly = {}
        for m in comp:
            # prod_j (q_j + v_j)^{e_j} expanded by the binomial theorem
            per_var = [
                [(a, math.comb(e, a) * qj ** (e - a)) for a in range(e + 1)]
                for qj, e in zip(q, m.exponents)
            ]
            for combo in itertools.product(*per_var):
                ex = tuple(a for a, _ in combo)
                c = m.coefficient
                for _, w in combo:
                    c *= w
                if c:
                    p[ex] = p.get(ex, Fraction(0)) + c
        polys.append(p)
    return PolynomialMap.from_polys(pmap.dim, polys)


def _multiset_count(idx: tuple[int, ...]) -> int:
    counts = {}
    for i in idx:
        counts[i] = counts.get(i, 0) + 1
    out = math.factorial(len(idx))
    for c in counts.values():
        out //= math.factorial(c)
    return out


def exact_expansion(pmap: PolynomialMap, point, order: int):
    """Taylor data of ``pmap`` at ``point`` up to ``order`` (1, 2 or 3).

    The j-th symmetric part is ``D^j f / j!`` so that ``f(x + v)`` equals
    ``f(x) + L v + S2(v, v) + S3(v, v, v)`` exactly for maps of degree <= order.
    """
    from .magnification import Expansion
    from .symalg import QuadDifferential

    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    n = pmap.dim
    shifted = taylor_shift(pmap, list(np.asarray(point, dtype=float)))
    value = np.zeros(n)
    linear = np.zeros((n, n))
    quad = np.zeros((n, n, n))
    cubic = np.zeros((n, n, n, n))
    for i, comp in enumerate(shifted.components):
        for m in comp:
            deg = m.degree
            if deg > order:
                continue
            idx = tuple(j for j, e in enumerate(m.exponents) for _ in range(e))
            if deg == 0:
                value[i] = float(m.coefficient)
            elif deg == 1:
                linear[i, idx[0]] = float(m.coefficient)
            else:
                share = float(m.coefficient / _multiset_count(idx))
                target = quad[i] if deg == 2 else cubic[i]
                for perm in set(itertools.permutations(idx)):
                    target[perm] = share
    return Expansion(
        point=np.asarray(point, dtype=float).copy(),
        order=order,
        value=value,
        linear=linear,
        quadratic=QuadDifferential(quad) if order >= 2 else None,
        cubic=cubic if order == 3 else None,
    )
