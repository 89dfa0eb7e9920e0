"""Chart-local form of 2 box on (0,q)-forms.

Two independent routes lead to the same coefficients at the chart centre:

* the direct route composes numeric dbar and dbar* appliers on component
  fields (``apply_dbar``, ``apply_dbar_star``);
* the assembled route writes 2 box as frame second-order terms, commutators
  and explicit c/d first-order terms, and reads off S, A and tau.

A "field" is any callable taking ambient points of shape (..., 2n) and
returning complex values of shape (...).  Coefficients are read off by
applying an operator to chart-coordinate monomials at the centre, where the
monomials vanish, so each coefficient class separates exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .forms import MultiIndex, as_index, epsilon, indices_of_degree, insert_index, remove_index
from .geometry import (
    BoundaryChart,
    c_from_structure,
    dbar_frame_form,
    levi_data,
    tau_from_metric,
    transverse_expansion,
)

SQRT2 = math.sqrt(2.0)
Field = Callable[[np.ndarray], np.ndarray]
Components = Dict[MultiIndex, Field]

DEFAULT_STEP = 1e-2


class AssemblyError(ValueError):
    pass


# ---------------------------------------------------------------- field helpers

def _gradient(f: Field, pts, h: float):
    from .geometry import central_derivative
    return central_derivative(f, pts, h)


def vector_apply(vec: Callable, f: Field, h: float = DEFAULT_STEP) -> Field:
    """Field V f for V given by ambient components vec(pts) of shape (..., 2n)."""
    def out(pts):
        pts = np.asarray(pts, dtype=float)
        return np.einsum("...w,...w->...", vec(pts), _gradient(f, pts, h))
    return out


def _zero(pts):
    return np.zeros(np.shape(pts)[:-1], complex)


class FrameCalculus:
    """Frame fields and structure data at arbitrary batched points."""

    def __init__(self, chart: BoundaryChart, jet_step: Optional[float] = None):
        self.chart = chart
        self.frame = chart.frame
        self.n = chart.n
        self.jet_step = jet_step or chart.h

    def lbar(self, k: int) -> Callable:
        return lambda pts: self.frame.lbar_vectors(self.frame.gamma(pts))[..., k - 1, :]

    def l(self, k: int) -> Callable:
        return lambda pts: self.frame.l_vectors(self.frame.gamma(pts))[..., k - 1, :]

    def structure(self, pts):
        return self.frame.structure(pts, self.jet_step)

    def c_table(self, pts, q: int) -> Dict[Tuple[MultiIndex, MultiIndex], np.ndarray]:
        """c^J_K for |J| = q at the points, keyed (J, K)."""
        S = self.structure(pts)
        table = {}
        sources = indices_of_degree(self.n, q) if q else [MultiIndex(())]
        for J in sources:
            for K, val in dbar_frame_form(S, J).items():
                table[(J, K)] = val
        return table

    def d(self, pts):
        return self.frame.adjoint_terms(pts, self.jet_step)

    def commutator(self, a, b) -> Callable:
        return lambda pts: self.frame.commutator(pts, a, b, self.jet_step)


def _forms(n: int, q: int) -> List[MultiIndex]:
    if q < 0 or q > n:
        return []
    return indices_of_degree(n, q) if q else [MultiIndex(())]


def _degree_of(components: Components) -> int:
    qs = {len(J) for J in components}
    if len(qs) != 1:
        raise AssemblyError("components must share one form degree")
    return qs.pop()


# ---------------------------------------------------------------- direct route

def dbar_fields(components: Components, chart: BoundaryChart, h: float = DEFAULT_STEP,
                calc: Optional[FrameCalculus] = None) -> Components:
    """(dbar u)_K = sum eps^{lJ}_K Lbar_l u_J + sum_J c^J_K u_J, as fields."""
    calc = calc or FrameCalculus(chart)
    n = chart.n
    q = _degree_of(components)
    comps = {as_index(J): f for J, f in components.items()}
    targets = _forms(n, q + 1)

    def make(K):
        def out(pts):
            pts = np.asarray(pts, dtype=float)
            total = np.zeros(pts.shape[:-1], complex)
            gam = calc.frame.gamma(pts)
            lbar = calc.frame.lbar_vectors(gam)
            ctab = calc.c_table(pts, q)
            for J, f in comps.items():
                grad = None
                for l in K:
                    if l in J:
                        continue
                    if remove_index(K, l) != J:
                        continue
                    if grad is None:
                        grad = _gradient(f, pts, h)
                    sign = epsilon((l,), J, K)
                    total = total + sign * np.einsum("...w,...w->...", lbar[..., l - 1, :], grad)
                coef = ctab.get((J, K))
                if coef is not None:
                    total = total + coef * f(pts)
            return total
        return out

    return {K: make(K) for K in targets}


def dbar_star_fields(components: Components, chart: BoundaryChart, h: float = DEFAULT_STEP,
                     calc: Optional[FrameCalculus] = None) -> Components:
    """(dbar* v)_M = sum eps^{lM}_{M+l} (-L_l + d_l) v_{M+l} + sum_K conj(c^M_K) v_K."""
    calc = calc or FrameCalculus(chart)
    n = chart.n
    q = _degree_of(components)
    comps = {as_index(J): f for J, f in components.items()}
    if q == 0:
        return {}
    targets = _forms(n, q - 1)

    def make(M):
        def out(pts):
            pts = np.asarray(pts, dtype=float)
            total = np.zeros(pts.shape[:-1], complex)
            gam = calc.frame.gamma(pts)
            lvec = calc.frame.l_vectors(gam)
            dvals = calc.d(pts)
            ctab = calc.c_table(pts, q - 1)
            for K, f in comps.items():
                fv = None
                for l in K:
                    if remove_index(K, l) != M:
                        continue
                    sign = epsilon((l,), M, K)
                    fv = f(pts) if fv is None else fv
                    grad = _gradient(f, pts, h)
                    total = total + sign * (-np.einsum("...w,...w->...", lvec[..., l - 1, :], grad)
                                            + dvals[..., l - 1] * fv)
                coef = ctab.get((M, K))
                if coef is not None:
                    fv = f(pts) if fv is None else fv
                    total = total + np.conj(coef) * fv
            return total
        return out

    return {M: make(M) for M in targets}


def _evaluate(fields: Components, point) -> Dict[MultiIndex, complex]:
    pt = np.asarray(point, dtype=float)[None]
    return {K: complex(f(pt)[0]) for K, f in fields.items()}


def apply_dbar(components: Components, chart: BoundaryChart, point=None,
               h: float = DEFAULT_STEP) -> Dict[MultiIndex, complex]:
    point = chart.p if point is None else point
    return _evaluate(dbar_fields(components, chart, h), point)


def apply_dbar_star(components: Components, chart: BoundaryChart, point=None,
                    h: float = DEFAULT_STEP) -> Dict[MultiIndex, complex]:
    point = chart.p if point is None else point
    return _evaluate(dbar_star_fields(components, chart, h), point)


def _add_components(a: Components, b: Components) -> Components:
    keys = list(dict.fromkeys(list(a) + list(b)))

    def summed(K):
        fa, fb = a.get(K), b.get(K)
        if fa is None:
            return fb
        if fb is None:
            return fa
        return lambda pts: fa(pts) + fb(pts)

    return {K: summed(K) for K in keys}


def double_box_direct(components: Components, chart: BoundaryChart, h: float = DEFAULT_STEP) -> Components:
    """2(dbar dbar* + dbar* dbar) applied to a (0,q)-form, from the numeric appliers."""
    calc = FrameCalculus(chart)
    q = _degree_of(components)
    full = {J: components.get(J, _zero) for J in _forms(chart.n, q)}
    first = dbar_fields(dbar_star_fields(full, chart, h, calc), chart, h, calc) if q > 0 else {}
    second = dbar_star_fields(dbar_fields(full, chart, h, calc), chart, h, calc) if q < chart.n else {}
    total = _add_components(first, second)
    return {K: (lambda f: (lambda pts: 2 * f(pts)))(f) for K, f in total.items()}


# ---------------------------------------------------------------- assembled route

def double_box_assembled(components: Components, chart: BoundaryChart, h: float = DEFAULT_STEP) -> Components:
    """2 box in frame form, exact up to zero-order terms.

    Diagonal entries carry -2 sum_{k in J} Lbar_k L_k - 2 sum_{l not in J} L_l Lbar_l
    and 2 sum_j d_j Lbar_j; an entry (J, J-k+l) carries -2 sigma [Lbar_k, L_l]
    with sigma = eps^{k,J-k}_J eps^{l,J-k}_{J-k+l}; every entry carries the four
    first-order c-channels that survive the composition.
    """
    calc = FrameCalculus(chart)
    n = chart.n
    q = _degree_of(components)
    rows = _forms(n, q)
    comps = {J: components.get(J, _zero) for J in rows}

    def make(J):
        def out(pts):
            pts = np.asarray(pts, dtype=float)
            total = np.zeros(pts.shape[:-1], complex)
            gam = calc.frame.gamma(pts)
            lbar = calc.frame.lbar_vectors(gam)
            lvec = calc.frame.l_vectors(gam)
            dvals = calc.d(pts)
            c_up = calc.c_table(pts, q)          # c^J_K, |K| = q+1
            c_down = calc.c_table(pts, q - 1) if q > 0 else {}
            for Jpp, f in comps.items():
                grad = _gradient(f, pts, h)

                def along(vec):
                    return np.einsum("...w,...w->...", vec, grad)

                if Jpp == J:
                    for k in range(1, n + 1):
                        if k in J:
                            inner = vector_apply(calc.l(k), f, h)
                            total = total - 2 * along_field(calc.lbar(k), inner, pts, h)
                        else:
                            inner = vector_apply(calc.lbar(k), f, h)
                            total = total - 2 * along_field(calc.l(k), inner, pts, h)
                        total = total + 2 * dvals[..., k - 1] * along(lbar[..., k - 1, :])
                else:
                    diff_out = set(J.entries) - set(Jpp.entries)
                    diff_in = set(Jpp.entries) - set(J.entries)
                    if len(diff_out) == 1 and len(diff_in) == 1:
                        (k,), (l,) = tuple(diff_out), tuple(diff_in)
                        M = remove_index(J, k)
                        sigma = epsilon((k,), M, J) * epsilon((l,), M, Jpp)
                        comm = calc.frame.commutator(pts, ("Lbar", k), ("L", l), calc.jet_step)
                        total = total - 2 * sigma * along(comm)
                # c-channels
                for l in range(1, n + 1):
                    if l not in J:
                        K = insert_index(J, l).index
                        coef = c_up.get((Jpp, K))
                        if coef is not None:
                            total = total - 2 * epsilon((l,), J, K) * coef * along(lvec[..., l - 1, :])
                    if l not in Jpp:
                        K = insert_index(Jpp, l).index
                        coef = c_up.get((J, K))
                        if coef is not None:
                            total = total + 2 * np.conj(coef) * epsilon((l,), Jpp, K) * along(lbar[..., l - 1, :])
                    if l in J:
                        M = remove_index(J, l)
                        coef = c_down.get((M, Jpp))
                        if coef is not None:
                            total = total + 2 * epsilon((l,), M, J) * np.conj(coef) * along(lbar[..., l - 1, :])
                    if l in Jpp:
                        M = remove_index(Jpp, l)
                        coef = c_down.get((M, J))
                        if coef is not None:
                            total = total - 2 * coef * epsilon((l,), M, Jpp) * along(lvec[..., l - 1, :])
            return total
        return out

    return {J: make(J) for J in rows}


def along_field(vec: Callable, f: Field, pts, h: float):
    return np.einsum("...w,...w->...", vec(pts), _gradient(f, pts, h))


# ---------------------------------------------------------------- coefficient extraction

@dataclass
class ExtractedCoefficients:
    """Chart-coordinate coefficients of a form operator at one point.

    ``second[K, J]`` is the symmetric (2n, 2n) matrix of d^2 coefficients,
    ``first[K, J]`` the 2n-vector of d coefficients (last entry d/d rho) and
    ``zero[K, J]`` the multiplication term, with rows K and columns J.
    """

    rows: List[MultiIndex]
    second: np.ndarray
    first: np.ndarray
    zero: Optional[np.ndarray]


def extract_coefficients(box: Callable[[Components, BoundaryChart, float], Components],
                         chart: BoundaryChart, q: int, x=None, h: float = DEFAULT_STEP,
                         with_zero: bool = False) -> ExtractedCoefficients:
    rows = _forms(chart.n, q)
    dim = 2 * chart.n
    x = np.zeros(chart.dim) if x is None else np.asarray(x, float)
    point = chart.chart_map(x)
    base = np.concatenate([x, [0.0]])

    def coord(b):
        return lambda pts: chart.coordinates(pts)[..., b] - base[b]

    def monomial(b, c):
        return lambda pts: ((chart.coordinates(pts)[..., b] - base[b])
                            * (chart.coordinates(pts)[..., c] - base[c]))

    R = len(rows)
    second = np.zeros((R, R, dim, dim), complex)
    first = np.zeros((R, R, dim), complex)
    zero = np.zeros((R, R), complex) if with_zero else None
    for jc, J in enumerate(rows):
        tests = {}
        for b in range(dim):
            tests[("1", b)] = coord(b)
        for b, c in combinations_with_replacement(range(dim), 2):
            tests[("2", b, c)] = monomial(b, c)
        if with_zero:
            tests[("0",)] = lambda pts: np.ones(np.shape(pts)[:-1])
        for key, f in tests.items():
            out = box({J: f}, chart, h)
            vals = {K: complex(g(point[None])[0]) for K, g in out.items()}
            for kr, K in enumerate(rows):
                v = vals.get(K, 0.0)
                if key[0] == "1":
                    first[kr, jc, key[1]] = v
                elif key[0] == "2":
                    b, c = key[1], key[2]
                    if b == c:
                        second[kr, jc, b, b] = v / 2
                    else:
                        second[kr, jc, b, c] = second[kr, jc, c, b] = v / 2
                else:
                    zero[kr, jc] = v
    return ExtractedCoefficients(rows, second, first, zero)


# ---------------------------------------------------------------- closed forms

def _sign_to_n(J: MultiIndex, n: int) -> int:
    """eps^{nJ}_{J+n} for n not in J, or eps^{n,J-n}_J for n in J."""
    if n in J:
        return epsilon((n,), remove_index(J, n), J)
    return epsilon((n,), J, insert_index(J, n).index)


def s_closed_form(chart: BoundaryChart, J, c_vals=None, d_n=None) -> complex:
    """Diagonal normal-derivative coefficient s_{0,J} at the chart centre.

    For J without n this is -2i(-1)^{|J|} Im c^J_{J+n} + d_n; rows containing n
    use c^{J-n}_J with the matching sign.
    """
    J = as_index(J)
    n = chart.n
    S = chart.frame.structure(chart.p[None], chart.h)[0]
    if d_n is None:
        d_n = complex(chart.frame.adjoint_terms(chart.p[None], chart.h)[0, n - 1])
    if n in J:
        M = remove_index(J, n)
        c = complex(dbar_frame_form(S, M).get(J, 0.0))
    else:
        c = complex(c_from_structure(S, J, n))
    return -2j * _sign_to_n(J, n) * c.imag + d_n


def a_t_closed_form(chart: BoundaryChart, J) -> Dict[str, complex]:
    """T-direction coefficient of A for a row J without n, split by origin."""
    J = as_index(J)
    n = chart.n
    if n in J:
        raise AssemblyError("closed-form T coefficient is stated for rows without n")
    _, norms = levi_data(chart)
    S = chart.frame.structure(chart.p[None], chart.h)[0]
    c = complex(c_from_structure(S, J, n))
    d_n = complex(chart.frame.adjoint_terms(chart.p[None], chart.h)[0, n - 1])
    inner = transverse_expansion(chart).inner
    levi = sum(norms[k - 1] for k in range(1, n) if k in J) - sum(norms[k - 1] for k in range(1, n) if k not in J)
    parts = {
        "transverse": 2j * inner,
        "levi": 2j * SQRT2 * levi,
        "structure": -((-1) ** len(J)) * 4j * c.real - 2j * d_n,
    }
    parts["total"] = sum(parts.values())
    return parts


# ---------------------------------------------------------------- local operator

@dataclass
class LocalOperator:
    """2 box = Gamma + sqrt2 S d/drho + A + rho tau near the chart centre.

    Coefficient arrays are in chart coordinates (x_1..x_{2n-1}, rho).  ``s`` is
    the matrix S at the centre, ``a_coeffs[K, J]`` the tangential first-order
    coefficients, ``tau`` the rho-derivative of the second-order coefficients
    (identical on every diagonal row) and ``gamma0`` the frozen second-order
    coefficients.
    """

    q: int
    n: int
    rows: List[MultiIndex]
    gamma0: np.ndarray
    gamma_coeffs: Callable
    s: np.ndarray
    a_coeffs: np.ndarray
    tau: np.ndarray
    a_t_closed: Dict[MultiIndex, Dict[str, complex]] = field(default_factory=dict)
    phi_prime: float = 0.0
    extracted: Optional[ExtractedCoefficients] = None

    def row(self, J) -> int:
        return self.rows.index(as_index(J))

    def s_entry(self, J, K=None) -> complex:
        K = J if K is None else K
        return complex(self.s[self.row(J), self.row(K)])

    def a_symbol(self, xi, J, K=None) -> complex:
        """sigma(A)_{J K}(0, xi) with sigma(d/dx_a) = i xi_a."""
        K = J if K is None else K
        return complex(1j * self.a_coeffs[self.row(J), self.row(K)] @ np.asarray(xi, float))

    def tau_symbol(self, xi) -> float:
        """sigma(tau)(0, xi) = -sum tau^{ab} xi_a xi_b over tangential directions."""
        xi = np.asarray(xi, float)
        d = len(xi)
        return float(-xi @ self.tau[:d, :d] @ xi)

    def tau_normal(self) -> float:
        return float(self.tau[-1, -1])


def _metric_correction(chart: BoundaryChart):
    base = -np.linalg.inv(chart.D0) @ np.linalg.inv(chart.D0).T

    def corr(x):
        D, _ = chart.boundary_jacobian(np.asarray(x, float))
        Dinv = np.linalg.inv(D)
        return -Dinv @ Dinv.T - base

    return base, corr


_ASSEMBLY_CACHE: Dict[Tuple[int, int, float], LocalOperator] = {}


def assemble_square(chart: BoundaryChart, q: int, h: float = DEFAULT_STEP) -> LocalOperator:
    """Assemble the chart-local 2 box for (0,q)-forms at the chart centre."""
    if not 0 <= q <= chart.n:
        raise AssemblyError(f"q must lie in 0..{chart.n}")
    key = (id(chart), q, h)
    if key in _ASSEMBLY_CACHE:
        return _ASSEMBLY_CACHE[key]
    n = chart.n
    rows = _forms(n, q)
    ext = extract_coefficients(double_box_assembled, chart, q, h=h)
    R = len(rows)
    d_n = complex(chart.frame.adjoint_terms(chart.p[None], chart.h)[0, n - 1])
    s = np.zeros((R, R), complex)
    for i, J in enumerate(rows):
        s[i, i] = s_closed_form(chart, J, d_n=d_n)
    # off-diagonal normal coefficients from the commutator channel, expected zero
    for i in range(R):
        for j in range(R):
            if i != j:
                s[i, j] = ext.first[i, j, -1] / SQRT2
    gamma0, corr = _metric_correction(chart)
    tau = np.zeros((2 * n, 2 * n))
    tau[: 2 * n - 1, : 2 * n - 1] = tau_from_metric(chart)
    a_t = {J: a_t_closed_form(chart, J) for J in rows if n not in J}
    op = LocalOperator(q, n, rows, gamma0, corr, s, ext.first[:, :, :-1].copy(), tau, a_t, 0.0, ext)
    _ASSEMBLY_CACHE[key] = op
    return op


def a_zero_symbol(op: LocalOperator, chart: BoundaryChart, xi, J) -> complex:
    """a_0(0, xi) for a row J without n, with the T coefficient in closed form."""
    J = as_index(J)
    if chart.n in J:
        raise AssemblyError("a_zero_symbol is defined for rows without n")
    xi = np.asarray(xi, float)
    i = op.row(J)
    coeffs = op.a_coeffs[i, i].copy()
    coeffs[-1] = op.a_t_closed[J]["total"]
    return complex(1j * coeffs @ xi)


def assemble_square_phi(chart: BoundaryChart, q: int, phi_prime: float,
                        h: float = DEFAULT_STEP) -> LocalOperator:
    """The weighted variant: S - sqrt2 phi'(0) on the diagonal, tau gains -phi' d^2/drho^2 and -2 phi' T^2."""
    base = assemble_square(chart, q, h)
    if phi_prime == 0:
        return base
    R = len(base.rows)
    s = base.s - SQRT2 * phi_prime * np.eye(R)
    tau = base.tau.copy()
    tau[-1, -1] += -phi_prime
    d = 2 * chart.n - 1
    tau[d - 1, d - 1] += -2 * phi_prime
    return LocalOperator(base.q, base.n, base.rows, base.gamma0, base.gamma_coeffs, s,
                         base.a_coeffs, tau, base.a_t_closed, float(phi_prime), base.extracted)


# ---------------------------------------------------------------- adjointness on a grid

def adjointness_residual(chart: BoundaryChart, q: int, seed: int = 0, N: int = 14,
                         depth: float = 0.4, size: float = 0.25, h: float = 1e-5) -> float:
    """Relative defect of <dbar u, v> = <u, dbar* v> for random interior test forms.

    u has degree q and v degree q + 1; both are Gaussian test functions times
    random affine factors per component, placed ``depth`` chart radii inside
    the domain.  The pairing is the pointwise frame inner product summed on a
    uniform grid (the common cell volume cancels).
    """
    from .geometry import bump, cube_grid

    n = chart.n
    if not 0 <= q < n:
        raise AssemblyError(f"need 0 <= q < n, got q={q}")
    rng = np.random.default_rng(seed)
    D = 2 * n
    center = chart.p - depth * chart.radius * chart.nu
    radius = size * chart.radius

    def random_form(deg):
        comps = {}
        for J in _forms(n, deg):
            c0 = complex(rng.normal(), rng.normal())
            c1 = rng.normal(size=D) + 1j * rng.normal(size=D)
            shift = center + 0.1 * radius * rng.uniform(-1, 1, size=D)
            comps[J] = bump(shift, radius / 3.4, (c0, c1))
        return comps

    u, v = random_form(q), random_form(q + 1)
    pts, _ = cube_grid(center, radius, N)
    calc = FrameCalculus(chart)
    du = dbar_fields(u, chart, h, calc)
    dsv = dbar_star_fields(v, chart, h, calc)
    lhs = sum(np.sum(du[K](pts) * np.conj(v[K](pts))) for K in v)
    rhs = sum(np.sum(u[J](pts) * np.conj(dsv[J](pts))) for J in u)
    return float(abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
