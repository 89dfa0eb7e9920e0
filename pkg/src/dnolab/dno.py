"""Two-term Dirichlet-to-Neumann symbol of 2 box and the boundary equation built on it.

Symbols use sigma(d/dx) = i xi throughout.  The operator tau is stored by its
coefficients tau^{ab} (tau = sum tau^{ab} d_a d_b), so its symbol is
sigma(tau) = -sum tau^{ab} xi_a xi_b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from sympy import QQ_I

from .forms import MultiIndex, as_index, indices_of_degree
from .geometry import BoundaryChart, c_from_structure, levi_data, transverse_expansion
from .operator_assembly import LocalOperator, a_zero_symbol, assemble_square, assemble_square_phi
from .symbols import REAL_LINE, GradedSymbolValue, RationalEta, Symbol, compose_two_term, eta_integral

SQRT2 = math.sqrt(2.0)
TERM_NAMES = ("s-term", "a-term", "tau-term", "xx-term")


class DegenerateFrequencyError(ValueError):
    pass


class ConventionDriftError(AssertionError):
    pass


# ---------------------------------------------------------------- restriction constants

@dataclass(frozen=True)
class RestrictionChannel:
    name: str
    numerator: Tuple[int, ...]
    upper: int
    lower: int
    numerator_factor: object
    expected: object
    degree: int


def _channels():
    i = QQ_I(0, 1)
    return (
        RestrictionChannel("S_int", (0, 1), 1, 2, 1, QQ_I(1, 0) / 4, -1),
        RestrictionChannel("S_b", (1,), 1, 1, 1, QQ_I(1, 0) / 2, -1),
        RestrictionChannel("A", (1,), 1, 2, i, QQ_I(1, 0) / 4, -2),
        RestrictionChannel("tau", (1,), 1, 3, 1, -QQ_I(1, 0) / 8, -3),
        RestrictionChannel("xx", (1,), 2, 3, 1, -3 * i / 16, -4),
        RestrictionChannel("Lambda0", (1,), 1, 1, 1, QQ_I(1, 0) / 2, -1),
    )


def _channel_integral(ch: RestrictionChannel, scale: int):
    """(1/2pi) times the eta integral of the channel at |Xi| = scale, exactly."""
    top = QQ_I(0, scale)
    num = tuple(QQ_I(c, 0) * ch.numerator_factor for c in ch.numerator)
    r = RationalEta(num, ((top, ch.upper), (-top, ch.lower)))
    return eta_integral(r, REAL_LINE, normalized=True)


def restriction_constants() -> Dict[str, object]:
    """The six boundary-restriction constants at |Xi| = 1, exact Gaussian rationals.

    Each value is also checked for its homogeneity degree in |Xi| by
    re-evaluating at |Xi| = 2; a wrong constant or degree raises.
    """
    out = {}
    for ch in _channels():
        v1 = _channel_integral(ch, 1)
        v2 = _channel_integral(ch, 2)
        if v1 != ch.expected:
            raise ConventionDriftError(f"channel {ch.name}: got {v1}, expected {ch.expected}")
        ratio = v2 / v1
        if ratio * 2 ** (-ch.degree) != QQ_I(1, 0):
            raise ConventionDriftError(f"channel {ch.name}: homogeneity ratio {ratio}, expected 2^{ch.degree}")
        out[ch.name] = v1
    return out


def _to_sympy(v) -> sp.Expr:
    return sp.Rational(int(v.x.numerator), int(v.x.denominator)) + sp.I * sp.Rational(int(v.y.numerator), int(v.y.denominator))


def lambda0_from_residues() -> Dict[str, sp.Expr]:
    """Coefficients of s0, a0/|Xi|, sigma(tau)/Xi^2 and the xx-product/|Xi|^3 in sigma(Lambda0).

    The Lambda0 channel restricts to C_Lambda Lambda0/|Xi|; matching it against
    the other channels gives

        Lambda0 = [sqrt2 (C_Sb - C_Sint) s0 + C_A a0 + C_tau sigma(tau) - C_xx xx] / C_Lambda.

    The s0 weight is sqrt2 times a Gaussian rational; it is kept exact by
    carrying the rational part and attaching sqrt2 symbolically.
    """
    C = restriction_constants()
    lam = C["Lambda0"]
    table = {
        "s0": sp.sqrt(2) * _to_sympy((C["S_b"] - C["S_int"]) / lam),
        "a0": _to_sympy(C["A"] / lam),
        "tau": _to_sympy(C["tau"] / lam),
        "xx": _to_sympy(-C["xx"] / lam),
    }
    expected = {"s0": sp.sqrt(2) / 2, "a0": sp.Rational(1, 2), "tau": sp.Rational(-1, 4), "xx": 3 * sp.I / 8}
    for k, v in expected.items():
        if sp.simplify(table[k] - v) != 0:
            raise ConventionDriftError(f"Lambda0 coefficient {k}: got {table[k]}, expected {v}")
    return table


def phi_rho_weight() -> sp.Expr:
    """Net weight of the rho d^2/drho^2 perturbation, from the eta^2 channel (1/8) over C_Lambda."""
    i = QQ_I(0, 1)
    r = RationalEta((QQ_I(0, 0), QQ_I(0, 0), QQ_I(1, 0)), ((i, 1), (-i, 3)))
    eighth = eta_integral(r, REAL_LINE, normalized=True)
    return _to_sympy(eighth / restriction_constants()["Lambda0"])


_L0 = {k: complex(v) for k, v in lambda0_from_residues().items()}
_PHI_RHO = float(phi_rho_weight())


# ---------------------------------------------------------------- DNO symbol

@dataclass
class DnoSymbol:
    principal: float
    zero_order: np.ndarray
    term_breakdown: Dict[str, np.ndarray]
    rows: List[MultiIndex]
    point: Tuple[Tuple[float, ...], Tuple[float, ...]]
    phi_prime: float = 0.0

    def entry(self, J, K=None) -> complex:
        K = J if K is None else K
        return complex(self.zero_order[self.rows.index(as_index(J)), self.rows.index(as_index(K))])

    def breakdown_sum(self) -> np.ndarray:
        return sum(self.term_breakdown.values())


def boundary_rows(n: int, q: int) -> List[MultiIndex]:
    forms = indices_of_degree(n, q) if q else [MultiIndex(())]
    return [J for J in forms if n not in J]


def _xi_data(chart: BoundaryChart, x, xi):
    xi = np.asarray(xi, float)
    if xi.shape != (chart.dim,):
        raise ValueError(f"xi must have {chart.dim} entries")
    val, gxi, gx = chart.xi_squared(x, xi)
    norm = float(np.linalg.norm(xi))
    if norm == 0 or math.sqrt(max(val, 0.0)) < 1e-8 * norm:
        raise DegenerateFrequencyError(f"|Xi| is degenerate at xi = {xi}")
    return val, math.sqrt(val), gxi, gx


def dno_symbol(chart: BoundaryChart, x, xi, q: int, op: Optional[LocalOperator] = None) -> DnoSymbol:
    """sigma(N^-) = |Xi| + sqrt2/2 s0 + a0/(2|Xi|) - sigma(tau)/(4 Xi^2) + 3i/8 dXi^2.dXi^2/|Xi|^3."""
    x = np.zeros(chart.dim) if x is None else np.asarray(x, float)
    if np.any(x != 0):
        raise ValueError("the zero-order data are assembled at the chart centre; use x = 0")
    xi = np.asarray(xi, float)
    val, mag, gxi, gx = _xi_data(chart, x, xi)
    op = op or assemble_square(chart, q)
    rows = boundary_rows(chart.n, q)
    R = len(rows)
    idx = [op.row(J) for J in rows]
    s_term = _L0["s0"] * op.s[np.ix_(idx, idx)]
    a = np.zeros((R, R), complex)
    for i, J in enumerate(rows):
        for j, K in enumerate(rows):
            a[i, j] = a_zero_symbol(op, chart, xi, J) if i == j else op.a_symbol(xi, J, K)
    a_term = _L0["a0"] * a / mag
    tau_term = _L0["tau"] * op.tau_symbol(xi) / val * np.eye(R)
    xx_term = _L0["xx"] * float(gxi @ gx) / mag ** 3 * np.eye(R)
    terms = {"s-term": s_term, "a-term": a_term, "tau-term": tau_term, "xx-term": xx_term}
    return DnoSymbol(mag, sum(terms.values()), terms, rows, (tuple(x), tuple(xi)))


def dno_symbol_phi(chart: BoundaryChart, x, xi, q: int, phi_prime: float) -> DnoSymbol:
    """DNO symbol of the weighted operator.

    The s channel shifts by (sqrt2/2)(-sqrt2 phi') = -phi'; the rho d^2/drho^2
    perturbation adds (-3/4 + 1) phi' and the T^2 perturbation of tau adds
    -(phi'/2) xi_{2n-1}^2 / Xi^2.
    """
    base = dno_symbol(chart, x, xi, q)
    if phi_prime == 0:
        return base
    val = base.principal ** 2
    xi = np.asarray(xi, float)
    R = len(base.rows)
    eye = np.eye(R)
    extra = {
        "phi-s-term": _L0["s0"] * (-SQRT2 * phi_prime) * eye,
        "phi-rho-term": _PHI_RHO * phi_prime * eye,
        "phi-tau-term": _L0["tau"] * (2 * phi_prime * xi[-1] ** 2) / val * eye,
    }
    terms = dict(base.term_breakdown)
    terms.update(extra)
    return DnoSymbol(base.principal, sum(terms.values()), terms, base.rows, base.point, float(phi_prime))


# ---------------------------------------------------------------- asymptotics

@dataclass
class ChartConstants:
    """Centre values feeding the closed-form asymptotics of one row J."""

    c: complex
    d_n: complex
    inner: float
    levi_balance: float


def chart_constants(chart: BoundaryChart, J) -> ChartConstants:
    J = as_index(J)
    n = chart.n
    if n in J:
        raise ValueError("asymptotics are stated for rows without n")
    S = chart.frame.structure(chart.p[None], chart.h)[0]
    c = complex(c_from_structure(S, J, n))
    d_n = complex(chart.frame.adjoint_terms(chart.p[None], chart.h)[0, n - 1])
    _, norms = levi_data(chart)
    bal = sum(norms[k - 1] for k in range(1, n) if k in J) - sum(norms[k - 1] for k in range(1, n) if k not in J)
    return ChartConstants(c, d_n, transverse_expansion(chart).inner, float(bal))


@dataclass
class DnoAsymptotic:
    limit: complex
    constants: ChartConstants

    def finite_form(self, chart: BoundaryChart, xi, J) -> complex:
        """Large-|xi_{2n-1}| form of the zero-order symbol in terms of xi_{2n-1}/|Xi| and xi_{2n-1}^2/Xi^2."""
        J = as_index(J)
        k = self.constants
        val, _, _ = chart.xi_squared(np.zeros(chart.dim), np.asarray(xi, float))
        mag = math.sqrt(val)
        t = xi[-1] / mag
        sgn = (-1) ** len(J)
        return (SQRT2 / 2 * (-2j * sgn * k.c.imag + k.d_n)
                + (sgn * 2 * k.c.real + k.d_n - k.inner) * t
                - SQRT2 * k.levi_balance * t
                - SQRT2 * k.inner * t ** 2)


def dno_asymptotic(chart: BoundaryChart, J, direction: str = "minus") -> DnoAsymptotic:
    """Limit of the zero-order symbol as xi_{2n-1} -> -infinity with xi_L fixed."""
    if direction not in ("minus", "-"):
        raise ValueError("only the xi_{2n-1} -> -infinity direction is covered")
    J = as_index(J)
    k = chart_constants(chart, J)
    limit = -((-1) ** len(J)) * SQRT2 * k.c + k.levi_balance
    return DnoAsymptotic(complex(limit), k)


# ---------------------------------------------------------------- microlocal cutoffs

def _bump_edge(t):
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    a = _bump_edge(t)
    b = _bump_edge(1.0 - np.asarray(t, float))
    return a / (a + b)


@dataclass(frozen=True)
class MicrolocalCutoffs:
    """psi+ / psi0 / psi- partition in the frequency variable.

    The angular variable is theta = xi_{2n-1}/|xi|; xi_{2n-1} > c|xi_L| is
    theta > c/sqrt(1+c^2).  psi+ is 1 past the inner parameter and vanishes
    before the outer one; low frequencies belong to psi0.
    """

    support: float = 0.5
    full: float = 0.75
    low_radius: float = 1.0

    @property
    def theta_support(self) -> float:
        return self.support / math.hypot(1.0, self.support)

    @property
    def theta_full(self) -> float:
        return self.full / math.hypot(1.0, self.full)

    def _radial(self, r):
        # 0 for r < low_radius/2, 1 for r > low_radius
        return smooth_step((np.asarray(r) - self.low_radius / 2) / (self.low_radius / 2))

    def _side(self, xi, sign: int):
        xi = np.asarray(xi, float)
        r = np.linalg.norm(xi, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            theta = np.where(r > 0, sign * xi[..., -1] / np.where(r > 0, r, 1.0), 0.0)
        ang = smooth_step((theta - self.theta_support) / (self.theta_full - self.theta_support))
        return ang * self._radial(r)

    def psi_plus(self, xi):
        return self._side(xi, 1)

    def psi_minus(self, xi):
        return self._side(xi, -1)

    def psi_zero(self, xi):
        return 1.0 - self.psi_plus(xi) - self.psi_minus(xi)


def microlocal_cutoffs(support: float = 0.5, full: float = 0.75, low_radius: float = 1.0) -> MicrolocalCutoffs:
    if not 0 < support < full:
        raise ValueError("need 0 < support < full")
    return MicrolocalCutoffs(support, full, low_radius)


# ---------------------------------------------------------------- boundary equation

def upsilon_symbol(chart: BoundaryChart, xi, J, K=None, q: Optional[int] = None) -> complex:
    """Zero-order boundary symbol: (-1)^{|J|} c^J_{Jn} + N0/sqrt2 on the diagonal, N0/sqrt2 off it."""
    J = as_index(J)
    K = J if K is None else as_index(K)
    q = len(J) if q is None else q
    sym = dno_symbol(chart, None, xi, q)
    val = sym.entry(J, K) / SQRT2
    if J == K:
        val += (-1) ** len(J) * chart_constants(chart, J).c
    return complex(val)


def upsilon_limit(chart: BoundaryChart, J) -> float:
    """(1/sqrt2)(sum_{k in J} - sum_{k not in J}) |L_k|^2, the xi_{2n-1} -> -infinity value."""
    return chart_constants(chart, J).levi_balance / SQRT2


def _xi_symbols(chart: BoundaryChart):
    """|Xi|/sqrt2 as sqrt(Xi^2/2), with its gradients; exact on the pure ray where Xi^2 = 2 xi_T^2."""
    def mag(x, xi):
        return math.sqrt(chart.xi_squared(x, xi)[0] / 2)

    def grad(slot):
        def g(x, xi):
            v, gxi, gx = chart.xi_squared(x, xi)
            m = math.sqrt(v / 2)
            return np.asarray(gxi if slot == "xi" else gx) / (4 * m)
        return g

    return mag, grad("xi"), grad("x")


@dataclass
class BoundarySymbol:
    first_order: complex
    zero_order: Dict[MultiIndex, complex]
    composed: GradedSymbolValue
    commutator: float
    upsilon_channel: Dict[MultiIndex, complex]


def first_order_boundary(chart: BoundaryChart, xi) -> float:
    """sigma(N1/sqrt2 - i T0) = |Xi(0, xi)|/sqrt2 + xi_{2n-1}."""
    xi = np.asarray(xi, float)
    val, _, _ = chart.xi_squared(np.zeros(chart.dim), xi)
    return math.sqrt(val / 2) + xi[-1]


def boundary_operator_symbol(chart: BoundaryChart, xi, J, q: Optional[int] = None) -> BoundarySymbol:
    J = as_index(J)
    q = len(J) if q is None else q
    xi = np.asarray(xi, float)
    x0 = np.zeros(chart.dim)
    mag, gmag_xi, gmag_x = _xi_symbols(chart)
    e_last = np.zeros(chart.dim)
    e_last[-1] = 1.0
    left = Symbol(lambda x, k: mag(x, k) - k[-1], 1,
                  grad_xi=lambda x, k: gmag_xi(x, k) - e_last,
                  grad_x=lambda x, k: gmag_x(x, k), name="N1/sqrt2 + iT0")
    right = Symbol(lambda x, k: mag(x, k) + k[-1], 1,
                   grad_xi=lambda x, k: gmag_xi(x, k) + e_last,
                   grad_x=lambda x, k: gmag_x(x, k), name="N1/sqrt2 - iT0")
    composed = compose_two_term(left, right, (x0, xi))
    zero = {K: upsilon_symbol(chart, xi, J, K, q) for K in boundary_rows(chart.n, q)}
    lead = complex(left(x0, xi))
    channel = {K: lead * v for K, v in zero.items()}
    commutator = float(SQRT2 * gmag_x(x0, xi)[-1])
    return BoundarySymbol(complex(right(x0, xi)), zero, composed, commutator, channel)


def _frame_symbol_data(chart: BoundaryChart, h: float = 1e-4):
    """Chart components of L_k at x = 0 and their x-derivatives."""
    n = chart.n
    x0 = np.zeros(chart.dim)
    comps = chart.tangential_fields(x0)
    from .geometry import central_derivative
    der = central_derivative(lambda X: np.apply_along_axis(
        lambda y: chart.tangential_fields(y).ravel(), -1, X), x0, h)
    der = der.reshape(chart.dim, n - 1, chart.dim)   # [a, k, b] = d_a L_k^b
    return comps, der


def levi_symbol_defect(chart: BoundaryChart, xi, k: int) -> Tuple[complex, float]:
    """sigma(Lbar_k L_k) - sigma(Lbar_k) sigma(L_k) at x = 0, and sqrt2 xi_{2n-1} |L_k|^2."""
    comps, der = _frame_symbol_data(chart)
    xi = np.asarray(xi, float)
    Lk = comps[k - 1]
    first = 1j * np.einsum("a,ab,b->", np.conj(Lk), der[:, k - 1, :], xi)
    _, norms = levi_data(chart)
    return complex(first), float(SQRT2 * xi[-1] * norms[k - 1])


def kohn_comparison(chart: BoundaryChart, xi, J) -> complex:
    """Composed boundary symbol minus its Kohn-Laplacian form.

    The right side is sum_{k not in J} sigma(-Lbar_k L_k) + sum_{k in J} sigma(-L_k Lbar_k)
    + sqrt2 xi_{2n-1} (sum_{k not in J} - sum_{k in J}) |L_k|^2, each frame
    product taken with its first-order part.
    """
    J = as_index(J)
    xi = np.asarray(xi, float)
    comps, der = _frame_symbol_data(chart)
    _, norms = levi_data(chart)
    mag, gmag_xi, gmag_x = _xi_symbols(chart)
    x0 = np.zeros(chart.dim)
    e_last = np.zeros(chart.dim)
    e_last[-1] = 1.0
    left = Symbol(lambda x, k: mag(x, k) - k[-1], 1,
                  grad_xi=lambda x, k: gmag_xi(x, k) - e_last)
    right = Symbol(lambda x, k: mag(x, k) + k[-1], 1,
                   grad_x=lambda x, k: gmag_x(x, k))
    composed = compose_two_term(left, right, (x0, xi)).total()
    rhs = 0.0
    for k in range(1, chart.n):
        Lk = comps[k - 1]
        s_l = 1j * (Lk @ xi)
        s_lbar = 1j * (np.conj(Lk) @ xi)
        if k in J:
            # L_k Lbar_k: first-order part i L_k(conj L_k^b) xi_b
            first = 1j * np.einsum("a,ab,b->", Lk, np.conj(der[:, k - 1, :]), xi)
            rhs += -(s_l * s_lbar + first) - SQRT2 * xi[-1] * norms[k - 1]
        else:
            first = 1j * np.einsum("a,ab,b->", np.conj(Lk), der[:, k - 1, :], xi)
            rhs += -(s_lbar * s_l + first) + SQRT2 * xi[-1] * norms[k - 1]
    return complex(composed - rhs)


# ---------------------------------------------------------------- weighted cancellation

@dataclass
class CancellationReport:
    max_deviation: float
    per_point: List[float]
    values: Dict[float, List[complex]]


def boundary_zero_order_phi(chart: BoundaryChart, xi, J, phi_prime: float, q: Optional[int] = None) -> complex:
    """(1/sqrt2) sigma_0(N^{phi,-})_{JJ} + phi'/sqrt2 + (-1)^{|J|} c^J_{Jn}."""
    J = as_index(J)
    q = len(J) if q is None else q
    sym = dno_symbol_phi(chart, None, xi, q, phi_prime)
    c = chart_constants(chart, J).c
    return complex(sym.entry(J) / SQRT2 + phi_prime / SQRT2 + (-1) ** len(J) * c)


def cancellation_check(chart: BoundaryChart, xi_sweep: Sequence, J, phi_values: Sequence[float],
                       q: Optional[int] = None) -> CancellationReport:
    values = {float(p): [] for p in phi_values}
    per_point = []
    for xi in xi_sweep:
        vals = [boundary_zero_order_phi(chart, xi, J, p, q) for p in phi_values]
        for p, v in zip(phi_values, vals):
            values[float(p)].append(v)
        per_point.append(max(abs(a - b) for a in vals for b in vals))
    return CancellationReport(max(per_point) if per_point else 0.0, per_point, values)
