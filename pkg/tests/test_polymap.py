from fractions import Fraction
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from magnify.polymap import (
    MapSyntaxError,
    Monomial,
    PolynomialMap,
    exact_expansion,
    format_map,
    parse_map,
    taylor_shift,
)

from conftest import SUITE


def test_parse_csq():
    m = parse_map("dim 2\nf1 = x1^2 - x2^2\nf2 = 2*x1*x2")
    assert m.dim == 2
    assert m.components[0] == (Monomial((2, 0), Fraction(1)), Monomial((0, 2), Fraction(-1)))
    assert m.components[1] == (Monomial((1, 1), Fraction(2)),)


def test_parse_1d():
    m = parse_map("dim 1\nf1 = x1 + x1^2")
    assert {mono.exponents: mono.coefficient for mono in m.components[0]} == {(1,): 1, (2,): 1}


def test_variable_index_exceeds_dimension():
    with pytest.raises(MapSyntaxError, match="exceeds dimension") as err:
        parse_map("dim 2\nf1 = x3")
    assert err.value.line == 2


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("dim 1\nf1 = x1\nf1 = x1^2", "duplicate"),
        ("dim 1\nf1 = x1 +", "expected"),
        ("dim 1\nf1 = x1 $ 2", "unexpected character"),
        ("f1 = x1", "dimension header"),
        ("dim 2\nf1 = x1", "missing component"),
        ("dim 1\nf1 = 1/0", "zero denominator"),
        ("dim 1\nf1 = (x1 + 1", r"'\)'"),
    ],
)
def test_syntax_errors(text, fragment):
    with pytest.raises(MapSyntaxError, match=fragment):
        parse_map(text)


def test_decimal_coefficients_are_exact():
    m = parse_map("dim 1\nf1 = 0.1*x1 + 2.5e-3")
    coefs = {mono.exponents: mono.coefficient for mono in m.components[0]}
    assert coefs == {(1,): Fraction(1, 10), (0,): Fraction(1, 400)}


def test_parentheses_expand_and_collect():
    m = parse_map("dim 2\nf1 = (x1 + x2)*(x1 - x2)\nf2 = x1*x2 - x2*x1")
    assert m == parse_map("dim 2\nf1 = x1^2 - x2^2\nf2 = 0")


def test_duplicate_exponents_rejected_in_constructor():
    with pytest.raises(ValueError):
        PolynomialMap(1, ((Monomial((1,), Fraction(1)), Monomial((1,), Fraction(2))),))


def test_evaluate_examples(csq, quad1d):
    assert np.array_equal(csq([1.0, 1.0]), [0.0, 2.0])
    assert np.array_equal(csq([0.0, 0.0]), [0.0, 0.0])
    root = (-1 + math.sqrt(1.84)) / 2
    assert root == pytest.approx(0.178233, abs=1e-6)
    assert quad1d([0.178233])[0] == pytest.approx(0.210001, abs=1e-5)


def test_evaluate_dimension_mismatch(csq):
    with pytest.raises(ValueError):
        csq([1.0, 2.0, 3.0])


def test_evaluate_many_matches_single(suite):
    rng = np.random.default_rng(0)
    for _, m, x in suite:
        pts = x + rng.standard_normal((20, m.dim))
        many = m.evaluate_many(pts)
        for p, row in zip(pts, many):
            assert np.array_equal(m(p), row)


def _sympy_taylor(text: str, point, order: int):
    """Independent oracle: symbolic derivatives divided by j!."""
    m = parse_map(text)
    n = m.dim
    xs = sp.symbols(f"x1:{n + 1}")
    exprs = []
    for comp in m.components:
        e = sp.Integer(0)
        for mono in comp:
            t = sp.Rational(mono.coefficient.numerator, mono.coefficient.denominator)
            for xj, k in zip(xs, mono.exponents):
                t *= xj**k
            e += t
        exprs.append(e)
    subs = dict(zip(xs, [sp.Rational(Fraction(p).numerator, Fraction(p).denominator) for p in point]))
    L = np.array([[float(sp.diff(e, xj).subs(subs)) for xj in xs] for e in exprs])
    H = np.array(
        [[[float(sp.diff(e, a, b).subs(subs)) / 2 for b in xs] for a in xs] for e in exprs]
    )
    T = None
    if order == 3:
        T = np.array(
            [
                [[[float(sp.diff(e, a, b, c).subs(subs)) / 6 for c in xs] for b in xs] for a in xs]
                for e in exprs
            ]
        )
    return L, H, T


@pytest.mark.parametrize("name, text, x", SUITE, ids=[s[0] for s in SUITE])
def test_exact_expansion_matches_symbolic_derivatives(name, text, x):
    L, H, T = _sympy_taylor(text, x, 3)
    e = exact_expansion(parse_map(text), x, 3)
    np.testing.assert_allclose(e.linear, L, rtol=1e-15, atol=1e-15)
    np.testing.assert_allclose(e.quadratic.forms, H, rtol=1e-15, atol=1e-15)
    np.testing.assert_allclose(e.cubic, T, rtol=1e-15, atol=1e-15)


def test_csq_and_diag_bilinear_forms(csq, diag):
    e = exact_expansion(csq, [0.0, 0.0], 2)
    assert np.array_equal(e.linear, np.zeros((2, 2)))
    # d2f(v, w) = (v1 w1 - v2 w2, v1 w2 + v2 w1)
    assert np.array_equal(e.quadratic.forms, [[[1, 0], [0, -1]], [[0, 1], [1, 0]]])
    d = exact_expansion(diag, [0.0, 0.0], 2)
    assert np.array_equal(d.quadratic.forms, [[[1, 0], [0, 0]], [[0, 0], [0, 1]]])


def test_identity_expansion():
    m = parse_map("dim 3\nf1 = x1\nf2 = x2\nf3 = x3")
    e = exact_expansion(m, [0.3, -1.0, 2.0], 2)
    assert np.array_equal(e.linear, np.eye(3))
    assert not e.quadratic.forms.any()


def test_order_out_of_range(csq):
    with pytest.raises(ValueError):
        exact_expansion(csq, [0.0, 0.0], 4)


def test_symmetric_parts_are_exactly_symmetric(suite):
    for _, m, x in suite:
        e = exact_expansion(m, x, 3)
        B = e.quadratic.forms
        assert np.array_equal(B, B.transpose(0, 2, 1))
        T = e.cubic
        for perm in [(0, 2, 1, 3), (0, 1, 3, 2), (0, 3, 2, 1)]:
            assert np.array_equal(T, T.transpose(perm))


def test_reconstruction_reproduces_low_degree_maps(suite):
    rng = np.random.default_rng(1)
    for _, m, x in suite:
        e = exact_expansion(m, x, 3)
        for _ in range(20):
            v = rng.standard_normal(m.dim)
            v *= rng.uniform(0, 1) / np.linalg.norm(v)
            direct = m(x + v)
            rebuilt = e.reconstruct(v)
            scale = max(1.0, np.abs(direct).max())
            assert np.abs(direct - rebuilt).max() <= 1e-12 * scale


def test_rational_degree_two_reconstruction_is_exact():
    m = parse_map("dim 2\nf1 = 3/7*x1^2 - x1*x2 + 5\nf2 = x2^2 - 2/3*x1 + 1/9")
    x = [Fraction(1, 3), Fraction(-2, 5)]
    y = [Fraction(7, 11), Fraction(3, 13)]
    shifted = taylor_shift(m, x)
    v = [a - b for a, b in zip(y, x)]
    assert shifted.evaluate_exact(v) == m.evaluate_exact(y)


# -- round trip -----------------------------------------------------------


@st.composite
def polynomial_maps(draw):
    n = draw(st.integers(1, 3))
    comps = []
    for _ in range(n):
        exps = draw(
            st.lists(st.tuples(*[st.integers(0, 3)] * n), max_size=5, unique=True)
        )
        coefs = draw(
            st.lists(
                st.fractions(min_value=-50, max_value=50, max_denominator=20).filter(lambda c: c != 0),
                min_size=len(exps),
                max_size=len(exps),
            )
        )
        comps.append(tuple(Monomial(e, c) for e, c in zip(exps, coefs)))
    return PolynomialMap(n, tuple(comps))


@settings(max_examples=150, deadline=None)
@given(polynomial_maps())
def test_print_parse_round_trip(m):
    assert parse_map(format_map(m)) == m
