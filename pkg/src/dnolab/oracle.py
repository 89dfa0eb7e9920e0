"""Independent numerical ground truth for the symbol formulas.

Nothing here reads the restriction constants or the assembled DNO formula;
the solvers only see operator coefficients and return measured quantities.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy import integrate

from .geometry import BoundaryChart, transverse_expansion
from .symbols import RationalEta

SQRT2 = math.sqrt(2.0)


class SolverError(RuntimeError):
    pass


class TruncationError(RuntimeError):
    pass


class RefinementError(RuntimeError):
    pass


# ---------------------------------------------------------------- half-line ODE

@dataclass
class OdeProblem:
    """-(1 + phi' rho) v'' + Xi^2 v + sqrt2 s0' v' + a0 v + rho (tau0 + 2 phi' xi_T^2) v = 0 on [-L, 0].

    s0' = s0 - sqrt2 phi'.  With phi' = 0 this is the frequency-frozen form of
    2 box v = 0.  ``xi`` supplies xi_{2n-1} for the phi term.
    """

    xi: np.ndarray
    big_xi_sq: float
    s0: complex = 0.0
    a0: complex = 0.0
    tau0: complex = 0.0
    phi_prime: float = 0.0
    depth: Optional[float] = None
    steps: int = 2000

    def __post_init__(self):
        self.xi = np.atleast_1d(np.asarray(self.xi, float))
        if self.big_xi_sq <= 0:
            raise ValueError("Xi^2 must be positive")
        if self.depth is None:
            self.depth = 12.0 / math.sqrt(self.big_xi_sq)
        if self.depth < 8.0 / math.sqrt(self.big_xi_sq):
            raise ValueError("depth too small to resolve the decay")

    def coefficients(self, rho):
        """(p, q, r) with p v'' = q v' + r v."""
        xt2 = self.xi[-1] ** 2
        p = 1.0 + self.phi_prime * rho
        q = SQRT2 * (self.s0 - SQRT2 * self.phi_prime)
        r = self.big_xi_sq + self.a0 + rho * (self.tau0 + 2 * self.phi_prime * xt2)
        return p, q, r


def _decaying_root(p, q, r) -> complex:
    # p lam^2 - q lam - r = 0, root growing toward rho = 0
    disc = np.sqrt(complex(q * q + 4 * p * r))
    roots = [(q + disc) / (2 * p), (q - disc) / (2 * p)]
    return max(roots, key=lambda z: z.real)


def _rk4(problem: OdeProblem, steps: int) -> complex:
    L = problem.depth
    h = L / steps
    p0, q0, r0 = problem.coefficients(-L)
    lam = _decaying_root(p0, q0, r0)
    y = np.array([1.0 + 0j, lam])
    scale = 0.0

    def rhs(rho, y):
        p, q, r = problem.coefficients(rho)
        return np.array([y[1], (q * y[1] + r * y[0]) / p])

    rho = -L
    for _ in range(steps):
        k1 = rhs(rho, y)
        k2 = rhs(rho + h / 2, y + h / 2 * k1)
        k3 = rhs(rho + h / 2, y + h / 2 * k2)
        k4 = rhs(rho + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        rho += h
        m = abs(y[0])
        if not np.isfinite(m):
            raise SolverError("solution blew up")
        if m > 1e100:
            y = y / m
            scale += math.log(m)
    if abs(y[0]) == 0:
        raise SolverError("solution vanished at the boundary")
    return complex(y[1] / y[0])


@dataclass
class OdeResult:
    value: complex
    coarse: complex
    relative_change: float
    convergence_ratio: Optional[float]


def ode_dno_report(problem: OdeProblem, tol: float = 1e-7) -> OdeResult:
    """v'(0)/v(0) with a step-halving check; also the observed RK4 error ratio."""
    n = problem.steps
    v1 = _rk4(problem, n)
    v2 = _rk4(problem, 2 * n)
    rel = abs(v2 - v1) / max(abs(v2), 1e-300)
    if not np.isfinite(v2) or rel > tol:
        raise SolverError(f"step halving changed v'(0) by {rel:.2e} (tolerance {tol:.0e})")
    ratio = None
    if rel > 1e-13:
        v0 = _rk4(problem, max(n // 2, 1))
        denom = abs(v2 - v1)
        ratio = abs(v1 - v0) / denom if denom > 0 else None
    return OdeResult(v2, v1, rel, ratio)


def ode_dno(problem: OdeProblem) -> complex:
    return ode_dno_report(problem).value


# ---------------------------------------------------------------- eta quadrature

def quad_eta_integral(r: RationalEta, damping: float = 0.0, tol: float = 1e-12) -> complex:
    """Integral over the real line of r(eta) exp(i damping eta), by adaptive quadrature.

    Without damping the integrand must decay like eta^-2; with damping a gap of
    one suffices and the oscillatory tail goes to QUADPACK's Fourier routine.
    """
    rc = r.as_complex()
    gap = rc.denominator_degree - rc.numerator_degree
    if damping == 0 and gap < 2:
        raise TruncationError("undamped integral needs a decay gap of two")
    if gap < 1:
        raise TruncationError("integrand does not decay")

    def f(eta):
        return complex(rc.evaluate(np.array([eta]))[0])

    if damping == 0:
        # QUADPACK's round-off warning is superseded by the error-estimate check below
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            re = integrate.quad(lambda t: f(t).real, -np.inf, np.inf, epsabs=0, epsrel=tol, limit=400)
            im = integrate.quad(lambda t: f(t).imag, -np.inf, np.inf, epsabs=0, epsrel=tol, limit=400)
        for res in (re, im):
            if res[1] > 1e3 * tol * max(abs(re[0]) + abs(im[0]), 1.0):
                raise TruncationError(f"quadrature error estimate {res[1]:.2e} too large")
        return complex(re[0], im[0])
    w = abs(damping)
    sgn = 1.0 if damping > 0 else -1.0
    even = lambda t: f(t) + f(-t)
    odd = lambda t: f(t) - f(-t)
    parts = []
    for g, weight in ((even, "cos"), (odd, "sin")):
        vals = []
        for comp in (lambda t, g=g: g(t).real, lambda t, g=g: g(t).imag):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                val, err = integrate.quad(comp, 0, np.inf, weight=weight, wvar=w, epsabs=1e-13, limlst=100)
            vals.append(val)
        parts.append(complex(vals[0], vals[1]))
    return parts[0] + 1j * sgn * parts[1]


# ---------------------------------------------------------------- periodic strip

@dataclass
class StripResult:
    residual_with: float
    residual_without: float
    measured: np.ndarray
    x: np.ndarray
    principal: np.ndarray
    xx_term: np.ndarray
    fitted_coefficient: complex

    @property
    def improvement(self) -> float:
        return self.residual_without / self.residual_with if self.residual_with > 0 else math.inf


def _cheb(N: int):
    """Chebyshev points on [-1, 1] and the differentiation matrix."""
    x = np.cos(np.pi * np.arange(N + 1) / N)
    c = np.hstack([2.0, np.ones(N - 1), 2.0]) * (-1.0) ** np.arange(N + 1)
    X = np.tile(x, (N + 1, 1)).T
    dX = X - X.T
    Dm = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    Dm = Dm - np.diag(Dm.sum(axis=1))
    return x, Dm


def _strip_solve(k: int, base: float, eps: float, modes: int, N: int, depth: float):
    """Mode coefficients of d v/d rho at rho = 0 for -v_rr - b(x) v_xx = 0, v(x,0) = exp(ikx)."""
    t, Dm = _cheb(N)
    # rho = depth (t - 1)/2 maps [-1, 1] onto [-depth, 0]; t = 1 is the boundary
    D = Dm * (2.0 / depth)
    D2 = D @ D
    ms = np.arange(k - modes, k + modes + 1)
    M = len(ms)
    P = N + 1
    A = np.zeros((M * P, M * P), complex)
    rhs = np.zeros(M * P, complex)
    for i, m in enumerate(ms):
        blk = slice(i * P, (i + 1) * P)
        A[blk, blk] += -D2 + base * m * m * np.eye(P)
        for j, mm in ((i - 1, ms[i] - 1), (i + 1, ms[i] + 1)):
            if 0 <= j < M:
                A[blk, j * P:(j + 1) * P] += base * eps / 2 * mm * mm * np.eye(P)
    for i, m in enumerate(ms):
        for row, val in ((i * P, 1.0 if m == k else 0.0), (i * P + N, 0.0)):
            A[row, :] = 0
            A[row, row] = 1
            rhs[row] = val
    sol = np.linalg.solve(A, rhs).reshape(M, P)
    deriv = np.array([(D @ sol[i])[0] for i in range(M)])
    return ms, deriv


def strip_dno(k: int, base: float = 1.0, eps: float = 0.05, modes: int = 14, N: int = 48,
              depth_factor: float = 30.0, samples: int = 64, check: bool = True,
              xx_coefficient: complex = 3j / 8) -> StripResult:
    """DNO of -d^2/drho^2 + b(x) xi^2 with b = base (1 + eps cos x) on the 2pi-periodic strip.

    The measured quantity exp(-ikx) dv/drho(x, 0) is compared pointwise with
    |Xi(x, k)| alone and with the xx-term (coefficient) dXi^2/dxi dXi^2/dx /|Xi|^3
    added.  ``fitted_coefficient`` is the least-squares coefficient of that
    shape in the measured correction.
    """
    if k == 0:
        raise ValueError("carrier frequency must be nonzero")
    depth = depth_factor / (abs(k) * math.sqrt(base * (1 - abs(eps))))

    def measure(modes_, N_):
        ms, deriv = _strip_solve(k, base, eps, modes_, N_, depth)
        xs = 2 * np.pi * np.arange(samples) / samples
        vals = np.exp(1j * np.outer(xs, ms - k)) @ deriv
        return xs, vals

    xs, vals = measure(modes, N)
    b = base * (1 + eps * np.cos(xs))
    db = -base * eps * np.sin(xs)
    principal = np.sqrt(b) * abs(k)
    if check:
        _, fine = measure(modes + 4, int(N * 1.5))
        scale = max(float(np.max(np.abs(vals - principal))), 1e-9 * abs(k))
        if np.max(np.abs(fine - vals)) > 0.1 * scale:
            raise RefinementError("strip solve not converged under refinement")
        vals = fine
    shape = (2 * b * k) * (db * k * k) / (b * k * k) ** 1.5
    xx = xx_coefficient * shape
    # least-squares weight of the measured correction along the xx shape
    dev = vals - principal
    norm = float(np.vdot(shape, shape).real)
    fitted = complex(np.vdot(shape, dev) / norm) if norm > 0 else 0j
    return StripResult(float(np.max(np.abs(dev - xx))), float(np.max(np.abs(dev))),
                       vals, xs, principal, xx, fitted)


# ---------------------------------------------------------------- operator cross-check

@dataclass
class CrosscheckReport:
    principal_deviation: float
    rho_deviation: float
    first_order_deviation: float
    s_offdiag_assembled: float
    s_offdiag_direct: float
    s_eqn_deviation: float
    tau_deviation: float
    commutator_deviation: float
    trial_deviations: List[float] = field(default_factory=list)
    values: Dict[str, complex] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, float]:
        return {k: v for k, v in self.__dict__.items() if k not in ("values",)}


def square_crosscheck(chart: BoundaryChart, q: int, trials: int = 5, seed: int = 0) -> CrosscheckReport:
    """Compare the assembled 2 box against the composed numeric dbar/dbar* appliers."""
    from .operator_assembly import (
        assemble_square,
        double_box_direct,
        extract_coefficients,
        s_closed_form,
    )

    if chart.n not in (2, 3):
        raise ValueError("the cross-check is sized for n = 2 or 3")
    op = assemble_square(chart, q)
    asm = op.extracted
    direct = extract_coefficients(double_box_direct, chart, q)
    R = len(op.rows)
    principal_dev = float(np.max(np.abs(direct.second - asm.second)))
    rho_direct = direct.first[:, :, -1]
    rho_dev = float(np.max(np.abs(rho_direct - SQRT2 * op.s)))
    first_dev = float(np.max(np.abs(direct.first - asm.first)))
    off = ~np.eye(R, dtype=bool)
    s_off_asm = float(np.max(np.abs(op.s[off]))) if R > 1 else 0.0
    s_off_dir = float(np.max(np.abs(rho_direct[off]))) / SQRT2 if R > 1 else 0.0
    s_eqn = max(abs(rho_direct[i, i] / SQRT2 - s_closed_form(chart, J)) for i, J in enumerate(op.rows))
    tr = transverse_expansion(chart)
    d = chart.dim
    tau_dev = abs(op.tau[d - 1, d - 1] - (-4 * SQRT2 * tr.inner))
    # off-diagonal entries: no second-order part
    comm_dev = float(np.max(np.abs(direct.second[off]))) if R > 1 else 0.0

    rng = np.random.default_rng(seed)
    dim = 2 * chart.n
    trial_dev = []
    for _ in range(trials):
        Q = rng.normal(size=(R, dim, dim)) + 1j * rng.normal(size=(R, dim, dim))
        Q = (Q + np.swapaxes(Q, 1, 2)) / 2
        b = rng.normal(size=R) + 1j * rng.normal(size=R)

        def component(i):
            def u(pts):
                y = chart.coordinates(pts)
                return 0.5 * np.einsum("...a,ab,...b->...", y, Q[i], y) + b[i] * y[..., -1]
            return u

        form = {J: component(i) for i, J in enumerate(op.rows)}
        out = double_box_direct(form, chart)
        meas = np.array([complex(out[K](chart.p[None])[0]) for K in op.rows])
        pred = np.einsum("ab,jab->j", op.gamma0, Q) + SQRT2 * op.s @ b
        trial_dev.append(float(np.max(np.abs(meas - pred))))
    return CrosscheckReport(principal_dev, rho_dev, first_dev, s_off_asm, s_off_dir, float(s_eqn),
                            float(tau_dev), comm_dev, trial_dev,
                            {"tau_normal": op.tau[d - 1, d - 1], "inner": tr.inner})
