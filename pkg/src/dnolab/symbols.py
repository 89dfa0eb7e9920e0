"""Residue calculus in the dual-normal variable and two-term symbol algebra.

Integrands are rational functions of eta whose denominators are given already
factored, so residues come out of truncated Laurent products with nothing but
field arithmetic.  Feeding Gaussian rationals (``sympy.QQ_I``) in place of
Python complex numbers makes every constant exact.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from sympy import QQ_I

MAX_DEGREE = 8

REAL_LINE = "real-line"
CLOSE_UPPER = "close-upper"
CLOSE_LOWER = "close-lower"
MODES = (REAL_LINE, CLOSE_UPPER, CLOSE_LOWER)


class ContourError(ValueError):
    pass


class DivergenceError(ValueError):
    pass


class PoleLookupError(KeyError):
    pass


class CapabilityError(TypeError):
    pass


def _imag(z) -> float:
    if hasattr(z, "y") and hasattr(z, "x"):
        return float(z.y)
    return complex(z).imag


def to_complex(z) -> complex:
    if hasattr(z, "x") and hasattr(z, "y"):
        return complex(float(z.x), float(z.y))
    return complex(z)


def gaussian(re, im=0) -> "QQ_I":
    """Exact Gaussian rational from ints or Fractions."""
    from sympy import QQ

    def conv(v):
        if hasattr(v, "numerator") and hasattr(v, "denominator"):
            return QQ(int(v.numerator), int(v.denominator))
        return QQ(v)

    return QQ_I(conv(re), conv(im))


@dataclass(frozen=True)
class RationalEta:
    """numerator(eta) / prod (eta - a)^m, numerator coefficients lowest degree first."""

    numerator: Tuple
    poles: Tuple[Tuple[object, int], ...]

    def __post_init__(self):
        num = tuple(self.numerator)
        while len(num) > 1 and num[-1] == 0:
            num = num[:-1]
        object.__setattr__(self, "numerator", num)
        object.__setattr__(self, "poles", tuple((a, int(m)) for a, m in self.poles))
        if len(num) - 1 > MAX_DEGREE:
            raise ValueError(f"numerator degree {len(num) - 1} exceeds {MAX_DEGREE}")
        if any(m < 1 for _, m in self.poles):
            raise ValueError("pole multiplicities must be positive")
        locs = [to_complex(a) for a, _ in self.poles]
        if len(set(locs)) != len(locs):
            raise ValueError("poles must be listed once each, with multiplicity")

    @property
    def numerator_degree(self) -> int:
        return len(self.numerator) - 1

    @property
    def denominator_degree(self) -> int:
        return sum(m for _, m in self.poles)

    def __call__(self, eta):
        num = 0
        for c in reversed(self.numerator):
            num = num * eta + c
        den = 1
        for a, m in self.poles:
            den = den * (eta - a) ** m
        return num / den

    def evaluate(self, eta):
        """Vectorised float evaluation."""
        eta = np.asarray(eta, dtype=complex)
        num = np.zeros_like(eta)
        for c in reversed(self.numerator):
            num = num * eta + to_complex(c)
        den = np.ones_like(eta)
        for a, m in self.poles:
            den = den * (eta - to_complex(a)) ** m
        return num / den

    def as_complex(self) -> "RationalEta":
        return RationalEta(tuple(to_complex(c) for c in self.numerator),
                           tuple((to_complex(a), m) for a, m in self.poles))


def _numerator_taylor(coeffs: Sequence, a, order: int) -> list:
    """Taylor coefficients of the polynomial about ``a``, up to t^order."""
    out = []
    for k in range(order + 1):
        acc = 0
        for j in range(k, len(coeffs)):
            acc = acc + comb(j, k) * coeffs[j] * a ** (j - k)
        out.append(acc)
    return out


def _inverse_power_series(c, m: int, order: int) -> list:
    # (c + t)^(-m) = sum_k (-1)^k C(m+k-1, k) c^(-m-k) t^k
    return [(-1) ** k * comb(m + k - 1, k) * c ** (-m - k) for k in range(order + 1)]


def _truncated_product(a: list, b: list, order: int) -> list:
    out = []
    for k in range(order + 1):
        acc = 0
        for i in range(k + 1):
            acc = acc + a[i] * b[k - i]
        out.append(acc)
    return out


def residue_at(r: RationalEta, pole):
    target = to_complex(pole)
    match = [(a, m) for a, m in r.poles if to_complex(a) == target]
    if not match:
        raise PoleLookupError(f"{pole} is not a listed pole")
    a, m = match[0]
    order = m - 1
    series = _numerator_taylor(r.numerator, a, order)
    for b, mb in r.poles:
        if b is a:
            continue
        series = _truncated_product(series, _inverse_power_series(a - b, mb, order), order)
    return series[order]


def _check_decay(r: RationalEta, gap: int) -> None:
    if r.numerator_degree + gap > r.denominator_degree:
        raise DivergenceError(
            f"numerator degree {r.numerator_degree} too high for "
            f"{r.denominator_degree} poles (need a gap of {gap})")


def eta_integral(r: RationalEta, mode: str = REAL_LINE, normalized: bool = False):
    """Contour value of the eta integral.

    With ``normalized`` the value is divided by 2*pi and returned in the field
    of the input (exact for Gaussian rationals); otherwise a complex float.
    The close modes give the one-sided limits rho -> 0+ (upper) and rho -> 0-
    (lower) of the integral damped by exp(i rho eta).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    for a, _ in r.poles:
        if _imag(a) == 0:
            raise ContourError(f"pole {a} lies on the real axis")
    _check_decay(r, 2 if mode == REAL_LINE else 1)
    lower = mode == CLOSE_LOWER
    exact = all(hasattr(c, "y") for c in r.numerator)
    total = QQ_I(0, 0) if exact else 0
    for a, _ in r.poles:
        if (_imag(a) < 0) == lower:
            total = total + residue_at(r, a)
    # 2 pi i sum Res, or -2 pi i for the clockwise lower contour
    scaled = total * (-1 if lower else 1)
    if normalized:
        return scaled * (QQ_I(0, 1) if hasattr(scaled, "y") else 1j)
    return 2 * math.pi * 1j * to_complex(scaled)


@dataclass
class GradedSymbolValue:
    terms: Dict[int, object]
    point: tuple = ()

    def degrees(self):
        return sorted(self.terms, reverse=True)

    def __getitem__(self, deg):
        return self.terms[deg]

    def total(self):
        return sum(self.terms.values())


@dataclass
class Symbol:
    """A symbol evaluator with its homogeneity degree and optional gradients.

    Each callable takes (x, xi) as float arrays.  Gradients return arrays with
    the derivative direction on the leading axis.
    """

    value: Callable
    degree: int
    grad_xi: Optional[Callable] = None
    grad_x: Optional[Callable] = None
    name: str = ""

    def __call__(self, x, xi):
        return self.value(np.asarray(x, float), np.asarray(xi, float))

    def with_numeric_gradients(self, h: float = 1e-5) -> "Symbol":
        def fd(which):
            def grad(x, xi):
                x = np.asarray(x, float)
                xi = np.asarray(xi, float)
                base = x if which == "x" else xi
                out = []
                for j in range(base.size):
                    e = np.zeros_like(base)
                    e[j] = h
                    if which == "x":
                        fp, fm = self.value(x + e, xi), self.value(x - e, xi)
                    else:
                        fp, fm = self.value(x, xi + e), self.value(x, xi - e)
                    out.append((np.asarray(fp) - np.asarray(fm)) / (2 * h))
                return np.array(out)
            return grad

        return Symbol(self.value, self.degree,
                      self.grad_xi or fd("xi"), self.grad_x or fd("x"), self.name)


def _pair(u, v):
    u = np.asarray(u)
    v = np.asarray(v)
    if u.ndim == 3 or v.ndim == 3:
        return sum(np.atleast_2d(u[j]) @ np.atleast_2d(v[j]) for j in range(len(u)))
    return np.sum(u * v, axis=0)


def compose_two_term(a: Symbol, b: Symbol, at) -> GradedSymbolValue:
    """First two terms of the symbol of the composition a(x,D) b(x,D)."""
    if a.grad_xi is None or b.grad_x is None:
        raise CapabilityError("composition needs grad_xi of the left and grad_x of the right factor")
    x, xi = (np.asarray(v, float) for v in at)
    va, vb = np.asarray(a(x, xi)), np.asarray(b(x, xi))
    top = va @ vb if va.ndim == 2 else va * vb
    corr = -1j * _pair(a.grad_xi(x, xi), b.grad_x(x, xi))
    deg = a.degree + b.degree
    return GradedSymbolValue({deg: top, deg - 1: corr}, (tuple(x), tuple(xi)))


def invert_gamma_two_term(chart, at) -> GradedSymbolValue:
    """1/(eta^2+Xi^2) and its first correction grad_xi Xi^2 . D_x Xi^2/(eta^2+Xi^2)^3."""
    x, xi, eta = at
    val, gxi, gx = chart.xi_squared(x, xi)
    q = eta ** 2 + val
    if q <= 0:
        raise ValueError("eta^2 + Xi^2 must be positive")
    second = -1j * float(np.dot(gxi, gx)) / q ** 3
    return GradedSymbolValue({-2: 1.0 / q, -3: second}, (tuple(np.ravel(x)), tuple(np.ravel(xi)), eta))


def gamma_symbol(chart, eta: float) -> Symbol:
    """eta^2 + Xi^2(x, xi) as a Symbol in (x, xi) for a fixed eta."""
    return Symbol(lambda x, xi: eta ** 2 + chart.xi_squared(x, xi)[0], 2,
                  grad_xi=lambda x, xi: chart.xi_squared(x, xi)[1],
                  grad_x=lambda x, xi: chart.xi_squared(x, xi)[2], name="gamma")


def gamma_inverse_symbol(chart, eta: float) -> Symbol:
    """Leading parametrix term 1/(eta^2 + Xi^2) with exact gradients."""
    def value(x, xi):
        return 1.0 / (eta ** 2 + chart.xi_squared(x, xi)[0])

    def grad(slot):
        def g(x, xi):
            v, gxi, gx = chart.xi_squared(x, xi)
            return -np.asarray(gxi if slot == "xi" else gx) / (eta ** 2 + v) ** 2
        return g

    return Symbol(value, -2, grad("xi"), grad("x"), name="gamma_inverse")
