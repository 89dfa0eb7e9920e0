import math

import numpy as np
import pytest

from dnolab.forms import MultiIndex
from dnolab.geometry import c_coefficient, central_derivative, dbar_frame_form, levi_data, transverse_expansion
from dnolab.operator_assembly import (
    AssemblyError,
    FrameCalculus,
    adjointness_residual,
    apply_dbar,
    apply_dbar_star,
    assemble_square,
    assemble_square_phi,
    a_zero_symbol,
    dbar_fields,
    s_closed_form,
)
from dnolab.oracle import square_crosscheck

SQRT2 = math.sqrt(2)
M1, M2, M12 = MultiIndex((1,)), MultiIndex((2,)), MultiIndex((1, 2))


def inside(chart, seed, count=5):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(count, 2 * chart.n))
    u *= 0.3 * chart.radius / np.linalg.norm(u, axis=1, keepdims=True)
    return chart.p - 0.4 * chart.radius * chart.nu + u


# ------------------------------------------------------------ appliers

def test_constants_are_closed_on_flat(flat):
    const = {M1: lambda p: np.full(p.shape[:-1], 2.0 + 1j), M2: lambda p: np.full(p.shape[:-1], -1.0)}
    assert all(v == 0 for v in apply_dbar(const, flat).values())
    assert all(v == 0 for v in apply_dbar_star(const, flat).values())


def test_dbar_of_conjugate_coordinate(ball):
    zbar1 = {MultiIndex(()): lambda p: p[..., 0] - 1j * p[..., 2]}
    pt = inside(ball, 1, 1)[0]
    out = apply_dbar(zbar1, ball, point=pt)
    gam = ball.frame.gamma(pt[None])[0]
    for k in (1, 2):
        assert out[MultiIndex((k,))] == pytest.approx(SQRT2 * gam[k - 1, 0], abs=1e-10)


def test_dbar_on_flat_hand_value(flat):
    u = {M1: lambda p: p[..., 0] * p[..., 2] + 1j * p[..., 1] ** 2}
    out = apply_dbar(u, flat, point=np.array([0.1, 0.2, 0.3, -0.1]))
    # -Lbar_2 u_1 with Lbar_2 = (d/dx_2 + i d/dy_2)/sqrt 2
    assert out[M12] == pytest.approx(-1j * SQRT2 * 0.2, abs=1e-12)


@pytest.mark.parametrize("which", ["ball", "generic"])
def test_dbar_squared_vanishes(which, request):
    chart = request.getfixturevalue(which)
    rng = np.random.default_rng(3)
    C = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    b = rng.normal(size=4) + 1j * rng.normal(size=4)
    u = {MultiIndex(()): lambda p: np.einsum("...a,ab,...b->...", p, C, p) + p @ b}
    calc = FrameCalculus(chart)
    dd = dbar_fields(dbar_fields(u, chart, 1e-2, calc), chart, 1e-2, calc)[M12]
    pts = inside(chart, 5)
    first = dbar_fields(u, chart, 1e-2, calc)[M1](pts)
    assert np.max(np.abs(dd(pts))) < 1e-6 * max(1.0, np.max(np.abs(first)))


def test_dbar_star_single_component_by_hand(generic):
    chart = generic
    rng = np.random.default_rng(11)
    a, B = rng.normal(size=4) + 1j * rng.normal(size=4), rng.normal(size=(4, 4))
    v = lambda p: np.exp(p @ a) + np.einsum("...a,ab,...b->...", p, B, p)
    pt = inside(chart, 2, 1)
    out = apply_dbar_star({M12: v}, chart, point=pt[0])
    grad = central_derivative(v, pt, 1e-3)[0]
    gam = chart.frame.gamma(pt)[0]
    L = chart.frame.l_vectors(gam)
    d = chart.frame.adjoint_terms(pt)[0]
    S = chart.frame.structure(pt)[0]
    c_1 = dbar_frame_form(S, M1)[M12]
    c_2 = dbar_frame_form(S, M2)[M12]
    val = v(pt)[0]
    expected_1 = (L[1] @ grad) - d[1] * val + np.conj(c_1) * val
    expected_2 = -(L[0] @ grad) + d[0] * val + np.conj(c_2) * val
    assert out[M1] == pytest.approx(expected_1, rel=1e-8)
    assert out[M2] == pytest.approx(expected_2, rel=1e-8)


@pytest.mark.parametrize("q", [0, 1])
def test_adjointness_by_quadrature(generic, q):
    assert adjointness_residual(generic, q, seed=q, N=12) < 1e-4


def test_adjointness_rejects_top_degree(ball):
    with pytest.raises(AssemblyError):
        adjointness_residual(ball, 2)


# ------------------------------------------------------------ assembled operator

def test_flat_model_is_constant_coefficient(flat):
    op = assemble_square(flat, 1)
    assert np.max(np.abs(op.s)) == 0
    assert np.max(np.abs(op.a_coeffs)) < 1e-12
    assert np.max(np.abs(op.tau)) < 1e-12
    # Gamma = -(d^2/drho^2 + 1/2 sum d^2/dx_j^2 + 2 d^2/dx_T^2)
    assert np.diag(op.gamma0) == pytest.approx([-0.5, -0.5, -2.0, -1.0], abs=1e-14)
    assert np.max(np.abs(op.gamma0 - np.diag(np.diag(op.gamma0)))) < 1e-14
    assert np.max(np.abs(op.gamma_coeffs(np.zeros(3)))) < 1e-14


def test_gamma_corrections_vanish_at_centre(ball, generic):
    for chart in (ball, generic):
        op = assemble_square(chart, 1)
        assert np.max(np.abs(op.gamma_coeffs(np.zeros(3)))) < 1e-12
        assert np.max(np.abs(op.gamma_coeffs(np.array([0.05, 0.0, 0.02])))) > 1e-4


@pytest.mark.parametrize("which", ["ball", "generic", "siegel"])
def test_s_closed_form_and_diagonal(which, request):
    chart = request.getfixturevalue(which)
    op = assemble_square(chart, 1)
    off = op.s - np.diag(np.diag(op.s))
    assert np.max(np.abs(off)) < 1e-10
    d_n = chart.frame.adjoint_terms(chart.p[None])[0, 1]
    c = c_coefficient(chart, (1,), 2)
    assert op.s_entry(M1) == pytest.approx(-2j * (-1) * c.imag + d_n, abs=1e-12)
    assert op.s_entry(M1) == pytest.approx(s_closed_form(chart, M1))


def test_s_on_ball_value(ball):
    assert assemble_square(ball, 1).s_entry(M1) == pytest.approx(-3 / SQRT2, abs=1e-9)


@pytest.mark.parametrize("which", ["ball", "generic", "siegel", "weak"])
def test_tau_transverse_entry(which, request):
    chart = request.getfixturevalue(which)
    op = assemble_square(chart, 1)
    inner = transverse_expansion(chart).inner
    d = chart.dim
    assert op.tau[d - 1, d - 1] == pytest.approx(-4 * SQRT2 * inner, abs=1e-6)
    assert np.allclose(op.tau, op.tau.T, atol=1e-10)


def test_tau_symbol_sign(ball):
    op = assemble_square(ball, 1)
    assert op.tau_symbol([0, 0, 1.0]) == pytest.approx(-4.0, abs=1e-6)


@pytest.mark.parametrize("which", ["ball", "generic", "siegel", "weak", "ball3"])
def test_t_coefficient_closed_form_matches_extraction(which, request):
    chart = request.getfixturevalue(which)
    op = assemble_square(chart, 1)
    for J in op.rows:
        if chart.n in J:
            continue
        i = op.row(J)
        numeric = op.a_coeffs[i, i, -1]
        closed = op.a_t_closed[J]["total"]
        parts = op.a_t_closed[J]
        assert abs(closed - numeric) <= 1e-4 * max(1.0, abs(parts["levi"]), abs(parts["structure"]))


def test_t_coefficient_parts_on_ball(ball):
    parts = assemble_square(ball, 1).a_t_closed[M1]
    _, norms = levi_data(ball)
    c = c_coefficient(ball, (1,), 2)
    d_n = ball.frame.adjoint_terms(ball.p[None])[0, 1]
    assert parts["levi"] == pytest.approx(2j * SQRT2 * norms[0])
    assert parts["structure"] == pytest.approx(4j * c.real - 2j * d_n)
    assert abs(parts["levi"]) > 1


def test_weak_domain_has_no_t_coefficient(weak):
    op = assemble_square(weak, 1)
    assert a_zero_symbol(op, weak, [0.3, -0.7, 0.0], M1) == pytest.approx(0, abs=1e-10)
    assert op.a_t_closed[M1]["total"] == pytest.approx(0, abs=1e-12)


def test_a_zero_symbol_on_flat_and_errors(flat, ball):
    op = assemble_square(flat, 1)
    assert a_zero_symbol(op, flat, [1.0, 2.0, -3.0], M1) == 0
    with pytest.raises(AssemblyError):
        a_zero_symbol(assemble_square(ball, 1), ball, [1, 0, 0], M2)
    with pytest.raises(AssemblyError):
        assemble_square(ball, 3)


# ------------------------------------------------------------ weighted variant

def test_phi_variant(flat, ball):
    assert assemble_square_phi(ball, 1, 0.0) is assemble_square(ball, 1)
    op = assemble_square_phi(flat, 1, 1.0)
    assert op.s == pytest.approx(-SQRT2 * np.eye(2))
    shifted = assemble_square_phi(ball, 1, 0.5)
    base = assemble_square(ball, 1)
    assert np.max(np.abs(shifted.s - np.diag(np.diag(shifted.s)))) < 1e-10
    assert shifted.s - base.s == pytest.approx(-0.5 * SQRT2 * np.eye(2))
    assert np.array_equal(shifted.a_coeffs, base.a_coeffs)


# ------------------------------------------------------------ cross-check against the direct route

@pytest.mark.parametrize("which,q", [("ball", 1), ("generic", 1), ("ball3", 2)])
def test_direct_and_assembled_agree(which, q, request):
    chart = request.getfixturevalue(which)
    rep = square_crosscheck(chart, q, trials=3 if chart.n == 3 else 5)
    assert rep.principal_deviation < 1e-4
    assert rep.rho_deviation < 1e-4
    assert max(rep.trial_deviations) < 1e-4
    assert rep.s_offdiag_assembled < 1e-10
    assert rep.s_offdiag_direct < 1e-10
    assert rep.commutator_deviation < 1e-5
