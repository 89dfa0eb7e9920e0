"""Boundary charts for a domain {rho < 0} in C^n.

Real coordinates on C^n are ordered (x_1..x_n, y_1..y_n) with z_j = x_j + i y_j.
Complex vector fields are stored by their 2n complex components in that
basis, so d/dz_l is (e_{x_l} - i e_{y_l})/2.

The normal coordinate of a chart is the signed distance to the boundary.  It
has the same boundary values and boundary gradient as rho/|grad rho| but keeps
|grad rho| = 1 off the boundary too, so L_n rho is the constant 1/sqrt 2 and
d/d rho is exactly sqrt 2 Re L_n.  Tangential coordinates are carried along
the normal lines, which makes the chart map explicit:

    Phi(x, r) = b(x) + r * nu(b(x)),

with b a graph parametrisation of the boundary over the tangent plane at p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import sympy as sp

from .forms import MultiIndex, as_index, contraction_sign, indices_of_degree, insert_index, normalize_index

SQRT2 = math.sqrt(2.0)
BUILTIN_DOMAINS = ("halfspace-flat", "siegel", "ball", "weak-q4")


class GeometryError(ValueError):
    pass


class DegenerateBoundaryError(GeometryError):
    pass


class FrameError(GeometryError):
    pass


class ChartRadiusError(GeometryError):
    pass


class ToleranceError(GeometryError):
    pass


# ---------------------------------------------------------------- numerics

def central_derivative(f: Callable, pts, h: float = 1e-3, levels: int = 3):
    """Richardson-extrapolated central differences of ``f`` in every coordinate.

    ``f`` maps points of shape (..., d) to arrays (..., *out); the result has
    shape (..., d, *out).  All stencil points go through ``f`` in one call.
    """
    pts = np.asarray(pts, dtype=float)
    d = pts.shape[-1]
    steps = h / 2.0 ** np.arange(levels)
    eye = np.eye(d)
    # (levels, 2, d, d): level, sign, direction, coordinate
    shifts = steps[:, None, None, None] * np.array([1.0, -1.0])[None, :, None, None] * eye[None, None]
    stencil = pts[..., None, None, None, :] + shifts
    vals = np.asarray(f(stencil))
    lead = pts.ndim - 1
    out_shape = vals.shape[lead + 3:]
    diffs = (vals[(slice(None),) * lead + (slice(None), 0)]
             - vals[(slice(None),) * lead + (slice(None), 1)])
    # diffs: (..., levels, d, *out)
    table = [diffs[(slice(None),) * lead + (k,)] / (2 * steps[k]) for k in range(levels)]
    for j in range(1, levels):
        fac = 4.0 ** j
        table = [(fac * table[k + 1] - table[k]) / (fac - 1) for k in range(len(table) - 1)]
    res = table[0]
    assert res.shape == pts.shape[:-1] + (d,) + out_shape
    return res


def real_symbols(n: int):
    xs = sp.symbols(f"x1:{n + 1}", real=True)
    ys = sp.symbols(f"y1:{n + 1}", real=True)
    return tuple(xs) + tuple(ys)


def _vectorized(exprs, syms):
    """Lambdify a flat list of expressions into f(points (..., d)) -> (..., len)."""
    funcs = [sp.lambdify(syms, e, "numpy") for e in exprs]

    def f(pts):
        pts = np.asarray(pts, dtype=float)
        cols = [pts[..., i] for i in range(pts.shape[-1])]
        shape = pts.shape[:-1]
        return np.stack([np.broadcast_to(np.asarray(g(*cols), dtype=float), shape) for g in funcs], axis=-1)

    return f


# ---------------------------------------------------------------- domains

@dataclass(frozen=True, eq=False)
class Domain:
    """A defining function given as a sympy expression in real coordinates."""

    n: int
    expr: sp.Expr
    name: str = "user"

    @cached_property
    def symbols(self):
        return real_symbols(self.n)

    @cached_property
    def _value(self):
        return _vectorized([self.expr], self.symbols)

    @cached_property
    def _grad(self):
        return _vectorized([sp.diff(self.expr, s) for s in self.symbols], self.symbols)

    @cached_property
    def _hess(self):
        d = 2 * self.n
        exprs = [sp.diff(self.expr, a, b) for a in self.symbols for b in self.symbols]
        f = _vectorized(exprs, self.symbols)
        return lambda pts: f(pts).reshape(np.shape(pts)[:-1] + (d, d))

    def rho(self, pts):
        return self._value(pts)[..., 0]

    def grad(self, pts):
        return self._grad(pts)

    def hess(self, pts):
        return self._hess(pts)

    def default_point(self) -> np.ndarray:
        p = np.zeros(2 * self.n)
        if self.name == "ball":
            p[0] = 1.0
        return p


def builtin_domain(name: str, n: int = 2) -> Domain:
    if n < 2:
        raise GeometryError("complex dimension must be at least 2")
    v = real_symbols(n)
    xs, ys = v[:n], v[n:]
    mod2 = [xs[j] ** 2 + ys[j] ** 2 for j in range(n - 1)]
    if name == "halfspace-flat":
        expr = xs[n - 1]
    elif name == "siegel":
        expr = xs[n - 1] + sum(mod2)
    elif name == "ball":
        expr = sum(s ** 2 for s in v) - 1
    elif name == "weak-q4":
        expr = xs[n - 1] + sum(m ** 2 for m in mod2)
    else:
        raise GeometryError(f"unknown built-in domain {name!r}; choose from {BUILTIN_DOMAINS}")
    return Domain(n, sp.expand(expr), name)


def polynomial_domain(n: int, terms, name: str = "user") -> Domain:
    """Domain from a coefficient table [(coef, (e_x1..e_xn, e_y1..e_yn)), ...]."""
    v = real_symbols(n)
    expr = sp.Integer(0)
    for coef, exps in terms:
        exps = tuple(int(e) for e in exps)
        if len(exps) != 2 * n or any(e < 0 for e in exps):
            raise GeometryError(f"exponent vector {exps} must have {2 * n} non-negative entries")
        expr += sp.nsimplify(coef) * sp.Mul(*[s ** e for s, e in zip(v, exps)])
    if expr == 0:
        raise GeometryError("defining polynomial is identically zero")
    return Domain(n, sp.expand(expr), name)


def normalize_defining(domain: Domain, p) -> Domain:
    """rho / |grad rho|, which has unit gradient on the boundary."""
    p = np.asarray(p, dtype=float)
    g = domain.grad(p)
    if np.linalg.norm(g) < 1e-12:
        raise DegenerateBoundaryError(f"grad rho vanishes at {p}")
    v = domain.symbols
    expr = domain.expr / sp.sqrt(sum(sp.diff(domain.expr, s) ** 2 for s in v))
    return Domain(domain.n, expr, domain.name)


# ---------------------------------------------------------------- frames

def _hermitian_dot(a, b):
    return np.sum(a * np.conj(b), axis=-1)


def _complex_levi_entries(hess, n):
    """rho_{z_m zbar_j} from a real Hessian, as an (..., n, n) array indexed [m, j]."""
    xx = hess[..., :n, :n]
    yy = hess[..., n:, n:]
    xy = hess[..., :n, n:]
    yx = hess[..., n:, :n]
    return 0.25 * (xx + yy + 1j * (xy - yx))


@dataclass(eq=False)
class Frame:
    """Smooth orthonormal frame near a boundary point.

    Row k of ``gamma`` holds gamma^k with Lbar_k = sqrt2 sum_j gamma^k_j d/dzbar_j.
    The last row is the normal one, gamma^n_j = 2 d(dist)/dz_j.
    """

    domain: Domain
    pivots: Tuple[int, ...]

    @classmethod
    def at_point(cls, domain: Domain, p) -> "Frame":
        n = domain.n
        normal = _normal_row(domain, np.asarray(p, float)[None])[0]
        basis = [normal]
        remaining = list(range(n))
        order = []
        for _ in range(n - 1):
            best, best_norm, best_vec = None, -1.0, None
            for c in remaining:
                v = np.zeros(n, complex)
                v[c] = 1.0
                for u in basis:
                    v = v - np.vdot(u, v) * u
                nv = np.linalg.norm(v)
                if nv > best_norm:
                    best, best_norm, best_vec = c, nv, v
            if best_norm < 1e-8:
                raise FrameError("Gram-Schmidt breakdown while choosing pivots")
            order.append(best)
            remaining.remove(best)
            basis.append(best_vec / best_norm)
        return cls(domain, tuple(order))

    @property
    def n(self) -> int:
        return self.domain.n

    def closest_point(self, pts, iters: int = 40):
        """Nearest boundary point and signed distance, batched Newton."""
        pts = np.asarray(pts, dtype=float)
        d = pts.shape[-1]
        pi = pts.copy()
        lam = np.zeros(pts.shape[:-1])
        for _ in range(iters):
            g = self.domain.grad(pi)
            H = self.domain.hess(pi)
            F = np.concatenate([pi - pts + lam[..., None] * g, self.domain.rho(pi)[..., None]], axis=-1)
            if np.max(np.abs(F)) < 1e-15:
                break
            J = np.zeros(pts.shape[:-1] + (d + 1, d + 1))
            J[..., :d, :d] = np.eye(d) + lam[..., None, None] * H
            J[..., :d, d] = g
            J[..., d, :d] = g
            step = np.linalg.solve(J, -F[..., None])[..., 0]
            pi = pi + step[..., :d]
            lam = lam + step[..., d]
        g = self.domain.grad(pi)
        gn = np.linalg.norm(g, axis=-1)
        if np.any(gn < 1e-12):
            raise DegenerateBoundaryError("grad rho vanishes at a projected point")
        return pi, lam * gn

    def unit_normal(self, pts):
        pi, _ = self.closest_point(pts)
        g = self.domain.grad(pi)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def gamma(self, pts, on_boundary: bool = False):
        pts = np.asarray(pts, dtype=float)
        n = self.n
        if on_boundary:
            g = self.domain.grad(pts)
            nu = g / np.linalg.norm(g, axis=-1, keepdims=True)
        else:
            nu = self.unit_normal(pts)
        normal = nu[..., :n] - 1j * nu[..., n:]  # 2 d/dz of the distance
        rows = [None] * n
        rows[n - 1] = normal
        basis = [normal]
        for k, c in enumerate(self.pivots):
            v = np.zeros(pts.shape[:-1] + (n,), complex)
            v[..., c] = 1.0
            for u in basis:
                v = v - _hermitian_dot(v, u)[..., None] * u
            nv = np.linalg.norm(v, axis=-1)
            if np.any(nv < 1e-10):
                raise FrameError("Gram-Schmidt breakdown away from the chart point")
            v = v / nv[..., None]
            rows[k] = v
            basis.append(v)
        return np.stack(rows, axis=-2)

    # vector fields ------------------------------------------------------
    @staticmethod
    def lbar_vectors(gamma):
        """Ambient components (..., n, 2n) of Lbar_1..Lbar_n."""
        half = SQRT2 / 2
        return np.concatenate([half * gamma, 1j * half * gamma], axis=-1)

    @staticmethod
    def l_vectors(gamma):
        return np.conj(Frame.lbar_vectors(gamma))

    def jet(self, pts, h: float = 1e-3):
        """Frame and its first derivatives (..., 2n, n, n) at the given points."""
        g = self.gamma(pts)
        dg = central_derivative(self.gamma, pts, h)
        return g, dg

    @staticmethod
    def omega_bar(gamma, vec):
        """omega-bar_j(V) for every j; vec has shape (..., 2n)."""
        n = gamma.shape[-1]
        zbar = vec[..., :n] - 1j * vec[..., n:]
        return np.einsum("...jl,...l->...j", np.conj(gamma), zbar) / SQRT2

    @staticmethod
    def omega(gamma, vec):
        n = gamma.shape[-1]
        zpart = vec[..., :n] + 1j * vec[..., n:]
        return np.einsum("...jl,...l->...j", gamma, zpart) / SQRT2

    def structure(self, pts, h: float = 1e-3, conjugate: bool = False):
        """S[..., j, a, b] = dbar(omega-bar_j)(Lbar_a, Lbar_b) = -omega-bar_j([Lbar_a, Lbar_b]).

        With ``conjugate`` the barred and unbarred roles swap, giving the
        complex conjugate computed from independent data.
        """
        g, dg = self.jet(pts, h)
        if conjugate:
            V, dV = self.l_vectors(g), self.l_vectors(dg)
        else:
            V, dV = self.lbar_vectors(g), self.lbar_vectors(dg)
        # dV: (..., w, n, 2n) derivative along ambient coordinate w
        push = np.einsum("...aw,...wbu->...abu", V, dV)
        comm = push - np.swapaxes(push, -3, -2)
        pair = self.omega if conjugate else self.omega_bar
        return -np.moveaxis(pair(g[..., None, None, :, :], comm), -1, -3)

    def adjoint_terms(self, pts, h: float = 1e-3):
        """d_j = -div(L_j) for the Lebesgue measure on C^n, j = 1..n."""
        _, dg = self.jet(pts, h)
        dL = self.l_vectors(dg)  # (..., w, n, 2n)
        return -np.einsum("...uju->...j", dL)

    def commutator(self, pts, a: Tuple[str, int], b: Tuple[str, int], h: float = 1e-3):
        """Ambient components of [X_a, X_b] for frame fields given as ('L'|'Lbar', k)."""
        g, dg = self.jet(pts, h)

        def field(spec, gam):
            kind, k = spec
            vec = self.lbar_vectors(gam) if kind == "Lbar" else self.l_vectors(gam)
            return vec[..., k - 1, :]

        A, B = field(a, g), field(b, g)
        dA, dB = field(a, dg), field(b, dg)
        return np.einsum("...w,...wu->...u", A, dB) - np.einsum("...w,...wu->...u", B, dA)


def _normal_row(domain: Domain, pts):
    g = domain.grad(pts)
    nu = g / np.linalg.norm(g, axis=-1, keepdims=True)
    n = domain.n
    return nu[..., :n] - 1j * nu[..., n:]


def c_from_structure(S, J, m: int):
    """c^J_{J+m}: coefficient of omega-bar_{J+m} in dbar(omega-bar_J)."""
    J = as_index(J)
    if m in J:
        raise GeometryError(f"{m} already in {J.entries}")
    target = insert_index(J, m).index
    total = 0
    for i, j in enumerate(J.entries):
        seq = J.entries[:i + 1] + (m,) + J.entries[i + 1:]
        total = total + (-1) ** i * contraction_sign(seq, target) * S[..., j - 1, j - 1, m - 1]
    return total


def dbar_frame_form(S, J) -> Dict[MultiIndex, object]:
    """All coefficients of dbar(omega-bar_J) in the basis omega-bar_K, |K| = |J| + 1.

    Uses dbar(omega-bar_j) = sum_{a<b} S[j, a, b] omega-bar_a ^ omega-bar_b and the
    Leibniz rule with alternating signs.
    """
    J = as_index(J)
    n = S.shape[-1]
    out: Dict[MultiIndex, object] = {}
    for i, j in enumerate(J.entries):
        for a in range(1, n + 1):
            for b in range(a + 1, n + 1):
                seq = J.entries[:i] + (a, b) + J.entries[i + 1:]
                signed = normalize_index(seq)
                if signed.sign == 0:
                    continue
                term = (-1) ** i * signed.sign * S[..., j - 1, a - 1, b - 1]
                out[signed.index] = out.get(signed.index, 0) + term
    return out


# ---------------------------------------------------------------- charts

@dataclass(eq=False)
class BoundaryChart:
    domain: Domain
    p: np.ndarray
    frame: Frame
    nu: np.ndarray
    E: np.ndarray
    weingarten: np.ndarray
    radius: float
    h: float = 1e-3

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def dim(self) -> int:
        return 2 * self.n - 1

    @cached_property
    def D0(self) -> np.ndarray:
        return np.column_stack([self.E, self.nu])

    @cached_property
    def D0inv(self) -> np.ndarray:
        return np.linalg.inv(self.D0)

    # coordinates -------------------------------------------------------
    def boundary_point(self, x):
        x = np.asarray(x, dtype=float)
        base = self.p + self.E @ x
        s = 0.0
        for _ in range(50):
            q = base + s * self.nu
            f = float(self.domain.rho(q))
            df = float(self.domain.grad(q) @ self.nu)
            if abs(df) < 1e-12:
                raise DegenerateBoundaryError("normal line tangent to the boundary")
            ds = -f / df
            s += ds
            if abs(ds) < 1e-16:
                break
        return base + s * self.nu

    def chart_map(self, x, r: float = 0.0):
        b = self.boundary_point(x)
        g = self.domain.grad(b)
        return b + r * g / np.linalg.norm(g)

    def boundary_jacobian(self, x):
        """d Phi at (x, 0): columns d b/d x_a and the unit normal."""
        b = self.boundary_point(x)
        g = self.domain.grad(b)
        s = -(g @ self.E) / (g @ self.nu)
        Db = self.E + np.outer(self.nu, s)
        return np.column_stack([Db, g / np.linalg.norm(g)]), b

    def normal_line_jacobian(self, r: float):
        """d Phi at (0, r), exact for the normal-line chart."""
        Dx = self.E + r * self.weingarten @ self.E
        return np.column_stack([Dx, self.nu])

    def components(self, vec, x=None):
        """Chart components of ambient vectors at the boundary point b(x)."""
        if x is None:
            return np.einsum("ab,...b->...a", self.D0inv, vec)
        D, _ = self.boundary_jacobian(x)
        return np.einsum("ab,...b->...a", np.linalg.inv(D), vec)

    def tangential_fields(self, x):
        """Chart components (n-1, 2n-1) of L_1..L_{n-1} at b(x)."""
        D, b = self.boundary_jacobian(x)
        gam = self.frame.gamma(b[None], on_boundary=True)[0]
        comps = np.linalg.solve(D, self.frame.l_vectors(gam).T).T
        return comps[: self.n - 1, : self.dim]

    def model_fields(self):
        m = np.zeros((self.n - 1, self.dim), complex)
        for k in range(self.n - 1):
            m[k, 2 * k] = 0.5
            m[k, 2 * k + 1] = -0.5j
        return m

    def ell(self, x):
        """l^j_k(x): deviation of L_k from its constant-coefficient model."""
        return self.tangential_fields(x) - self.model_fields()

    def coordinates(self, pts):
        """Chart coordinates (x_1..x_{2n-1}, rho) of ambient points."""
        pi, dist = self.frame.closest_point(pts)
        x = np.einsum("ab,...b->...a", self.D0inv[: self.dim], pi - self.p)
        return np.concatenate([x, dist[..., None]], axis=-1)

    def check_radius(self, x):
        if np.linalg.norm(x) > self.radius * (1 + 1e-12):
            raise ChartRadiusError(f"|x| = {np.linalg.norm(x):.3g} exceeds chart radius {self.radius:.3g}")

    # symbols -----------------------------------------------------------
    def _xi_sq_value(self, x, xi):
        comps = self.tangential_fields(x)
        lin = comps @ xi
        return 2 * xi[-1] ** 2 + 2 * float(np.sum(np.abs(lin) ** 2)), comps

    def xi_squared(self, x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        self.check_radius(x)
        val, comps = self._xi_sq_value(x, xi)
        lin = comps @ xi
        gxi = 4 * np.real(np.conj(lin) @ comps)
        gxi[-1] += 4 * xi[-1]
        gx = central_derivative(lambda pts: np.apply_along_axis(
            lambda y: self._xi_sq_value(y, xi)[0], -1, pts), x, h=1e-3)
        if val <= 0 and xi @ xi > 0:
            raise ChartRadiusError("Xi^2 is not positive; the chart radius is too large")
        return val, gxi, gx

    # transverse field --------------------------------------------------
    def T_ambient(self, pts):
        gam = self.frame.gamma(pts)
        return np.imag(self.frame.l_vectors(gam)[..., self.n - 1, :])


def build_chart(domain: Domain, p=None, radius_fraction: float = 0.1) -> BoundaryChart:
    p = domain.default_point() if p is None else np.asarray(p, dtype=float)
    if abs(float(domain.rho(p))) > 1e-10:
        raise GeometryError(f"chart point is not on the boundary (rho = {float(domain.rho(p)):.3g})")
    g = domain.grad(p)
    gn = np.linalg.norm(g)
    if gn < 1e-12:
        raise DegenerateBoundaryError(f"grad rho vanishes at {p}")
    nu = g / gn
    frame = Frame.at_point(domain, p)
    gam = frame.gamma(p[None], on_boundary=True)[0]
    L = frame.l_vectors(gam)
    n = domain.n
    cols = []
    for k in range(n - 1):
        cols.append(2 * np.real(L[k]))
        cols.append(-2 * np.imag(L[k]))
    cols.append(np.imag(L[n - 1]))
    E = np.column_stack(cols)
    P = np.eye(2 * n) - np.outer(nu, nu)
    W = P @ domain.hess(p) @ P / gn
    kappa = float(np.max(np.abs(np.linalg.eigvalsh(W))))
    radius = radius_fraction / max(1.0, kappa)
    return BoundaryChart(domain, p, frame, nu, E, W, radius)


# ---------------------------------------------------------------- chart data

def levi_data(chart: BoundaryChart):
    """Levi matrix 2 sum gamma^k_j conj(gamma^l_m) rho_{z_m zbar_j} and its diagonal."""
    n = chart.n
    gam = chart.frame.gamma(chart.p[None], on_boundary=True)[0][: n - 1]
    R = _complex_levi_entries(chart.weingarten, n)  # [m, j]
    H = 2 * np.einsum("kj,lm,mj->kl", gam, np.conj(gam), R)
    if np.max(np.abs(H - H.conj().T)) > 1e-9:
        raise GeometryError("Levi matrix is not Hermitian")
    return H, np.real(np.diag(H)).copy()


def c_coefficient(chart: BoundaryChart, J, m: int, h: Optional[float] = None,
                  conjugate: bool = False, x=None) -> complex:
    pt = chart.p if x is None else chart.chart_map(x)
    S = chart.frame.structure(pt[None], h or chart.h, conjugate=conjugate)[0]
    return complex(c_from_structure(S, J, m))


def d_coefficient(chart: BoundaryChart, j: int, h: Optional[float] = None, x=None) -> complex:
    if not 1 <= j <= chart.n:
        raise GeometryError(f"j must lie in 1..{chart.n}")
    pt = chart.p if x is None else chart.chart_map(x)
    return complex(chart.frame.adjoint_terms(pt[None], h or chart.h)[0, j - 1])


def adjoint_zero_order(coeffs: Callable, pts, h: float = 1e-4):
    """Zero-order term d of the formal adjoint of sum_a b_a d/du_a (Lebesgue measure).

    (phi, Vbar psi) = ((-V + d) phi, psi) with V = sum conj(b_a) d/du_a and
    d = -sum_a d conj(b_a)/du_a.
    """
    db = central_derivative(lambda q: np.conj(np.asarray(coeffs(q))), pts, h)
    return -np.trace(db, axis1=-2, axis2=-1)


@dataclass
class TransverseData:
    T0: np.ndarray
    T1: np.ndarray
    inner: float
    T0_norm: float


def transverse_expansion(chart: BoundaryChart, h: float = 1e-3) -> TransverseData:
    """T = T0 + rho T1 + ... along the normal line through the chart point.

    T1 is the rho-derivative of the chart components of T; ``inner`` is
    <T1, T0/|T0|> with T1 pushed to the ambient space by the chart Jacobian.
    """
    def comps(r):
        rr = np.atleast_1d(r)
        out = []
        for t in rr:
            q = chart.p + t * chart.nu
            D = chart.normal_line_jacobian(t)
            out.append(np.linalg.solve(D, chart.T_ambient(q[None])[0]))
        return np.array(out)

    T0 = chart.T_ambient(chart.p[None])[0]
    T1 = central_derivative(lambda r: comps(r[..., 0].ravel()).reshape(r.shape[:-1] + (2 * chart.n,)),
                            np.zeros(1), h)[0]
    T0n = float(np.linalg.norm(T0))
    inner = float(np.dot(chart.D0 @ T1, T0 / T0n))
    return TransverseData(T0, T1, inner, T0n)


def tau_from_metric(chart: BoundaryChart, h: float = 1e-3) -> np.ndarray:
    """tau^{ab} = -d/d rho of the inverse metric in chart coordinates, tangential block.

    This is the rho-derivative of the second-order coefficients of 2 box,
    whose principal part is minus the Euclidean Laplacian.
    """
    def ginv(r):
        rr = np.atleast_1d(r[..., 0]).ravel()
        mats = []
        for t in rr:
            Dinv = np.linalg.inv(chart.normal_line_jacobian(t))
            mats.append(Dinv @ Dinv.T)
        return np.array(mats).reshape(r.shape[:-1] + (2 * chart.n, 2 * chart.n))

    dG = central_derivative(ginv, np.zeros(1), h)[0]
    d = chart.dim
    return -dG[:d, :d]


@dataclass
class ChartSummary:
    levi: np.ndarray
    levi_norms: np.ndarray
    c_vals: Dict[MultiIndex, complex]
    d_vals: np.ndarray
    transverse: TransverseData


def summarize_chart(chart: BoundaryChart) -> ChartSummary:
    n = chart.n
    H, norms = levi_data(chart)
    S = chart.frame.structure(chart.p[None], chart.h)[0]
    c_vals = {}
    for q in range(0, n):
        for J in indices_of_degree(n - 1, q) if q else [MultiIndex(())]:
            c_vals[J] = complex(c_from_structure(S, J, n))
    d_vals = chart.frame.adjoint_terms(chart.p[None], chart.h)[0]
    return ChartSummary(H, norms, c_vals, d_vals, transverse_expansion(chart))


# ---------------------------------------------------------------- quadrature checks

def bump(center, width: float, coeffs=None):
    """Gaussian test function exp(-|u-center|^2/width^2), optionally times a complex affine factor.

    Compact support is emulated: callers integrate over a cube several widths
    wide, where the tail is below double precision relative to the peak.
    ``coeffs`` = (c0, c1) multiplies by c0 + c1 . (u - center)/width.
    """
    center = np.asarray(center, float)

    def f(pts):
        t = (np.asarray(pts, float) - center) / width
        val = np.exp(-np.sum(t ** 2, axis=-1))
        if coeffs is not None:
            c0, c1 = coeffs
            val = val * (c0 + t @ np.asarray(c1))
        return val
    return f


def cube_grid(center, radius: float, N: int):
    """Uniform grid covering the cube of half-width ``radius`` and the cell volume."""
    center = np.asarray(center, float)
    ax = np.linspace(-radius, radius, N + 1)[1:-1] if N > 1 else np.zeros(1)
    mesh = np.meshgrid(*([ax] * len(center)), indexing="ij")
    pts = np.stack(mesh, axis=-1).reshape(-1, len(center)) + center
    return pts, (2 * radius / N) ** len(center)


def ibp_residual(vec: Callable, d_fn: Callable, phi: Callable, psi: Callable, pts, h: float = 1e-5):
    """Relative defect of (phi, Vbar psi) = ((-V + d) phi, psi) on a quadrature grid.

    ``vec`` gives the components b of Vbar = sum b_a d/du_a; V has components conj(b).
    """
    b = vec(pts)
    gphi = central_derivative(phi, pts, h)
    gpsi = central_derivative(psi, pts, h)
    lhs = np.sum(phi(pts) * np.conj(np.einsum("...a,...a->...", b, gpsi)))
    rhs = np.sum((-np.einsum("...a,...a->...", np.conj(b), gphi) + d_fn(pts) * phi(pts)) * np.conj(psi(pts)))
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return float(abs(lhs - rhs) / scale), complex(lhs), complex(rhs)


def d_quadrature_check(chart: BoundaryChart, j: int, seed: int = 0, N: int = 18,
                       depth: float = 0.4, size: float = 0.25) -> float:
    """Integration-by-parts identity for Lbar_j and d_j near the chart point, Lebesgue measure on C^n.

    The test cube sits ``depth`` chart radii inside the domain with half-width
    ``size`` chart radii.
    """
    rng = np.random.default_rng(seed)
    center = chart.p - depth * chart.radius * chart.nu
    radius = size * chart.radius
    D = 2 * chart.n

    def rand_bump():
        c0 = complex(rng.normal(), rng.normal())
        c1 = rng.normal(size=D) + 1j * rng.normal(size=D)
        shift = center + 0.1 * radius * rng.uniform(-1, 1, size=D)
        return bump(shift, radius / 4.0, (c0, c1))

    phi, psi = rand_bump(), rand_bump()
    pts, _ = cube_grid(center, radius, N)
    vec = lambda q: chart.frame.lbar_vectors(chart.frame.gamma(q))[..., j - 1, :]
    d_fn = lambda q: chart.frame.adjoint_terms(q, chart.h)[..., j - 1]
    # difference step tied to the bump width so small charts stay resolved
    return ibp_residual(vec, d_fn, phi, psi, pts, h=1e-4 * radius)[0]
