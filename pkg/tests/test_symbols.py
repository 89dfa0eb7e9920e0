import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from sympy import QQ_I

from dnolab.oracle import quad_eta_integral
from dnolab.symbols import (
    CLOSE_LOWER,
    CLOSE_UPPER,
    REAL_LINE,
    CapabilityError,
    ContourError,
    DivergenceError,
    PoleLookupError,
    RationalEta,
    Symbol,
    compose_two_term,
    eta_integral,
    gamma_inverse_symbol,
    gamma_symbol,
    invert_gamma_two_term,
    residue_at,
)

I = QQ_I(0, 1)
ONE = QQ_I(1, 0)


def sympy_residue(num, poles, at):
    eta = sp.Symbol("eta")
    expr = sum(sp.sympify(c) * eta ** k for k, c in enumerate(num))
    for a, m in poles:
        expr /= (eta - a) ** m
    return complex(sp.residue(expr, eta, at))


def test_real_line_arctangent_case():
    r = RationalEta((1,), ((2j, 1), (-2j, 1)))
    assert eta_integral(r) == pytest.approx(math.pi / 2, rel=1e-14)


def test_weighted_eta_squared_case_exact():
    r = RationalEta((0 * ONE, 0 * ONE, ONE), ((I, 1), (-I, 3)))
    assert eta_integral(r, REAL_LINE, normalized=True) == ONE / 8
    assert eta_integral(r.as_complex()) == pytest.approx(math.pi / 4, rel=1e-14)


def test_close_modes_for_the_restriction_kernel():
    r = RationalEta((I,), ((-I, 1),))
    assert eta_integral(r, CLOSE_LOWER, normalized=True) == ONE
    assert eta_integral(r, CLOSE_UPPER, normalized=True) == 0 * ONE


def test_close_lower_matches_damped_quadrature_limit():
    r = RationalEta((1j,), ((-1j, 1),))
    vals = [quad_eta_integral(r, damping=rho) / (2 * math.pi) for rho in (-0.01, -0.001)]
    assert abs(vals[1] - 1) < abs(vals[0] - 1) + 1e-12
    assert abs(vals[1] - 1) < 1e-2
    assert eta_integral(r, CLOSE_LOWER, normalized=True) == pytest.approx(1)


def test_errors():
    with pytest.raises(ContourError):
        eta_integral(RationalEta((1,), ((0.0, 2),)))
    with pytest.raises(DivergenceError):
        eta_integral(RationalEta((0, 1), ((1j, 1), (-1j, 1))))
    with pytest.raises(ValueError):
        eta_integral(RationalEta((1,), ((1j, 2),)), mode="sideways")
    with pytest.raises(PoleLookupError):
        residue_at(RationalEta((1,), ((1j, 2),)), -1j)
    with pytest.raises(ValueError):
        RationalEta(tuple([1] * 10), ((1j, 12),))


def test_gap_one_allowed_only_in_close_modes():
    r = RationalEta((1,), ((1j, 1),))
    with pytest.raises(DivergenceError):
        eta_integral(r, REAL_LINE)
    assert eta_integral(r, CLOSE_UPPER, normalized=True) == pytest.approx(1j)


def test_residue_examples():
    assert residue_at(RationalEta((1,), ((1j, 1), (-1j, 1))), 1j) == pytest.approx(1 / 2j)
    r = RationalEta((0, 0, 1), ((1j, 1), (-1j, 3)))
    assert residue_at(r, 1j) == pytest.approx(-1j / 8)
    assert residue_at(RationalEta((0 * ONE, 0 * ONE, ONE), ((I, 1), (-I, 3))), I) == -I / 8


def test_triple_pole_residue_against_sympy():
    r = RationalEta((1,), ((1j, 1), (-1j, 3)))
    ref = sympy_residue([1], [(sp.I, 1), (-sp.I, 3)], -sp.I)
    assert residue_at(r, -1j) == pytest.approx(ref, abs=1e-14)
    # and the full integral matches quadrature
    assert eta_integral(r) == pytest.approx(quad_eta_integral(r), rel=1e-10)


# residues of nearly confluent poles are ill-conditioned in floating point, so
# heights are drawn with gaps of at least 0.5
separated = st.lists(st.floats(0.5, 3.0), min_size=1, max_size=3).map(
    lambda gaps: [sum(gaps[: i + 1]) for i in range(len(gaps))])


@st.composite
def pole_sets(draw):
    up = draw(separated.filter(lambda v: len(v) <= 2))
    down = draw(separated.filter(lambda v: len(v) <= 2))
    hs = up + [-h - 0.25 for h in down]
    mults = draw(st.lists(st.integers(1, 3), min_size=len(hs), max_size=len(hs)))
    return tuple((complex(0, h), m) for h, m in zip(hs, mults))


@settings(max_examples=20)
@given(pole_sets(), st.data())
def test_residue_engine_matches_quadrature(poles, data):
    deg = sum(m for _, m in poles)
    top = data.draw(st.integers(0, min(deg - 2, 8)))
    coeffs = data.draw(st.lists(st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
                                min_size=top + 1, max_size=top + 1))
    if abs(coeffs[-1]) < 1e-3:
        coeffs[-1] = 1.0
    r = RationalEta(tuple(coeffs), poles)
    exact = eta_integral(r)
    quad = quad_eta_integral(r)
    assert abs(exact - quad) <= 1e-10 * abs(quad) + 1e-14


@settings(max_examples=25)
@given(separated, st.data())
def test_real_coefficients_give_real_integrals(hs, data):
    # conjugate-pair poles and a real numerator make the integrand real on the line
    mults = data.draw(st.lists(st.integers(1, 2), min_size=len(hs), max_size=len(hs)))
    poles = tuple(p for h, m in zip(hs, mults) for p in ((complex(0, h), m), (complex(0, -h), m)))
    deg = sum(m for _, m in poles)
    top = data.draw(st.integers(0, min(deg - 2, 8)))
    coeffs = data.draw(st.lists(st.floats(-3, 3), min_size=top + 1, max_size=top + 1))
    val = eta_integral(RationalEta(tuple(coeffs), poles))
    scale = 1.0 + sum(abs(c) for c in coeffs) / min(hs) ** (deg - top - 1)
    assert abs(val.imag) < 1e-12 * scale


def test_compose_x_independent():
    norm = Symbol(lambda x, xi: np.linalg.norm(xi), 1, grad_xi=lambda x, xi: xi / np.linalg.norm(xi),
                  grad_x=lambda x, xi: np.zeros_like(x))
    out = compose_two_term(norm, norm, (np.zeros(3), np.array([3.0, 0.0, 4.0])))
    assert out[2] == pytest.approx(25.0)
    assert out[1] == 0


def test_compose_synthetic_pair():
    a = Symbol(lambda x, xi: xi[0], 1, grad_xi=lambda x, xi: np.array([1.0, 0.0]),
               grad_x=lambda x, xi: np.zeros(2))
    b = Symbol(lambda x, xi: x[0] * xi[0], 1, grad_xi=lambda x, xi: np.array([x[0], 0.0]),
               grad_x=lambda x, xi: np.array([xi[0], 0.0]))
    x, xi = np.array([0.7, 0.1]), np.array([2.0, -1.0])
    out = compose_two_term(a, b, (x, xi))
    assert out.degrees() == [2, 1]
    assert out[2] == pytest.approx(0.7 * 4.0)
    assert out[1] == pytest.approx(-2j)
    assert out.total() == pytest.approx(2.8 - 2j)


def test_compose_needs_gradients():
    bare = Symbol(lambda x, xi: 1.0, 0)
    with pytest.raises(CapabilityError):
        compose_two_term(bare, bare, (np.zeros(1), np.ones(1)))


def test_numeric_gradients_fill_in():
    s = Symbol(lambda x, xi: x[0] * xi[0] ** 2, 2).with_numeric_gradients()
    assert s.grad_xi(np.array([2.0]), np.array([3.0]))[0] == pytest.approx(12.0, rel=1e-8)
    assert s.grad_x(np.array([2.0]), np.array([3.0]))[0] == pytest.approx(9.0, rel=1e-8)


def test_compose_magnitude_on_ball_against_finite_differences(ball):
    x = np.array([0.01, 0.02, 0.005])
    xi = np.array([1.0, -0.5, 2.0])

    def mag(xv, kv):
        return math.sqrt(ball.xi_squared(xv, kv)[0])

    def fd(f, v, h=1e-4):
        out = np.zeros(len(v))
        for a in range(len(v)):
            e = np.zeros(len(v))
            e[a] = h
            out[a] = (f(v + e) - f(v - e)) / (2 * h)
        return out

    gxi = fd(lambda k: mag(x, k), xi)
    gx = fd(lambda y: mag(y, xi), x)
    expected = -1j * gxi @ gx

    def grad(slot):
        def g(xv, kv):
            v, a, b = ball.xi_squared(xv, kv)
            return (a if slot == "xi" else b) / (2 * math.sqrt(v))
        return g

    sym = Symbol(mag, 1, grad("xi"), grad("x"))
    out = compose_two_term(sym, sym, (x, xi))
    assert out[2] == pytest.approx(ball.xi_squared(x, xi)[0], rel=1e-12)
    assert abs(out[1] - expected) < 1e-6


def test_invert_gamma_flat_has_no_correction(flat):
    out = invert_gamma_two_term(flat, (np.zeros(3), np.array([1.0, 2.0, -1.0]), 0.5))
    assert out[-3] == 0
    assert out[-2] == pytest.approx(1 / (0.25 + flat.xi_squared(np.zeros(3), [1.0, 2.0, -1.0])[0]))


def test_invert_gamma_homogeneity(ball):
    x, xi, eta = np.zeros(3), np.array([0.3, -1.0, 2.0]), 0.7
    base = invert_gamma_two_term(ball, (x, xi, eta))[-2]
    scaled = invert_gamma_two_term(ball, (x, 3 * xi, 3 * eta))[-2]
    assert scaled == pytest.approx(base / 9, rel=1e-13)


def test_parametrix_identity_on_ball(ball):
    x, xi, eta = np.array([0.02, -0.01, 0.015]), np.array([1.5, 0.5, -2.0]), 0.8
    gam = gamma_symbol(ball, eta)
    inv = gamma_inverse_symbol(ball, eta)
    lead = compose_two_term(gam, inv, (x, xi))
    two = invert_gamma_two_term(ball, (x, xi, eta))
    g = float(gam(x, xi))
    assert lead[0] == pytest.approx(1.0, abs=1e-12)
    # the correction of the parametrix cancels the composition defect
    assert abs(lead[-1] + g * two[-3]) < 1e-6 * abs(lead[-1]) + 1e-12
    assert abs(lead[-1]) > 1e-6


def test_invert_gamma_rejects_zero():
    class Zero:
        def xi_squared(self, x, xi):
            return 0.0, np.zeros(1), np.zeros(1)

    with pytest.raises(ValueError):
        invert_gamma_two_term(Zero(), (np.zeros(1), np.zeros(1), 0.0))
