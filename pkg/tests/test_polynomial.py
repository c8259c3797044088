from fractions import Fraction

import numpy as np
import pytest

from app.analysis.polynomial import Polynomial, jacobian_minors, parse_polynomial
from app.core.errors import ParseError


def test_parse_umbrella_equation():
    p = parse_polynomial("x^2 - y^2*z", 3)
    assert p.degree == 3
    assert p.min_degree == 2
    assert p.initial_form() == parse_polynomial("x^2", 3)


def test_power_aliases_and_rational_coefficients():
    assert parse_polynomial("x**2", 3) == parse_polynomial("x^2", 3)
    p = parse_polynomial("3/2*x - (y+1)^2", 3)
    assert p.terms[(1, 0, 0)] == Fraction(3, 2)
    assert p.constant_term() == -1
    assert p == parse_polynomial("-y^2 - 2*y + 3/2*x - 1", 3)


def test_indexed_names_beyond_aliases():
    p = parse_polynomial("x1*x5 - x3^2", 5)
    assert p.n == 5
    assert p.eval([1, 0, 2, 0, 3]) == pytest.approx(-1.0)


@pytest.mark.parametrize("text,position", [
    ("x + ", 4),
    ("x + w", 4),
    ("x / y", 4),
    ("x ^ y", 4),
    ("(x + y", 6),
    ("x $ y", 2),
])
def test_parse_errors_carry_positions(text, position):
    with pytest.raises(ParseError) as info:
        parse_polynomial(text, 3)
    assert info.value.position == position


def test_empty_input_is_rejected():
    with pytest.raises(ParseError):
        parse_polynomial("   ", 2)


def test_partials_and_gradient():
    p = parse_polynomial("x^2*y + z", 3)
    assert p.partial(0) == parse_polynomial("2*x*y", 3)
    assert np.allclose(p.grad([1.0, 2.0, 3.0]), [4.0, 1.0, 1.0])


def test_compiled_matches_exact_evaluation(rng):
    p = parse_polynomial("x^3 - 2*x*y*z + 1/3*z^2 - 5", 3)
    X = rng.standard_normal((20, 3))
    exact = np.array([p.eval(x) for x in X])
    assert np.allclose(p.compiled(X), exact)
    grads = np.array([p.grad(x) for x in X])
    assert np.allclose(p.compiled.gradient(X), grads)


def test_format_parses_back():
    p = parse_polynomial("x^2 + y^2 - z^3 + 7/4*x*y", 3)
    assert parse_polynomial(str(p), 3) == p
    assert str(Polynomial.zero(3)) == "0"


def test_jacobian_minors_of_hypersurface_are_the_partials():
    p = parse_polynomial("x^2 - y^2*z", 3)
    minors = jacobian_minors([p], 1)
    expected = [parse_polynomial(s, 3) for s in ("2*x", "-2*y*z", "-y^2")]
    assert len(minors) == 3
    for q in expected:
        assert q in minors


def test_jacobian_minors_of_a_curve():
    f = parse_polynomial("z", 3)
    g = parse_polynomial("x^2 - y^3", 3)
    minors = jacobian_minors([f, g], 2)
    # menores 2x2 de [[0,0,1],[2x,-3y^2,0]]
    assert set(map(str, minors)) == {"-2*x", "3*y^2"}


def random_polynomial(rng, n, degree=4, count=6) -> Polynomial:
    terms = {}
    while len(terms) < count:
        mono = tuple(int(e) for e in rng.multinomial(int(rng.integers(0, degree + 1)), [1 / n] * n))
        terms[mono] = Fraction(int(rng.choice([-5, -3, -2, -1, 1, 2, 3, 5])), int(rng.integers(1, 5)))
    return Polynomial(n, terms)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_gradient_matches_central_differences(rng, n):
    h = 1e-6
    for _ in range(10):
        p = random_polynomial(rng, n)
        x = rng.uniform(-1.0, 1.0, n)
        fd = np.array([(p.eval(x + h * e) - p.eval(x - h * e)) / (2 * h) for e in np.eye(n)])
        assert p.grad(x) == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_initial_form_is_multiplicative(rng):
    for _ in range(25):
        f, g = random_polynomial(rng, 3), random_polynomial(rng, 3)
        assert (f * g).initial_form() == f.initial_form() * g.initial_form()
        assert (f * g).min_degree == f.min_degree + g.min_degree
