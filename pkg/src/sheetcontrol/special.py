"""Bessel-type power series and Hermite polynomials for the positivity probe.

The two entire series

    f(y)  = sum_n y**n / (n!)**2            (= I_0(2 sqrt(y)) for y >= 0)
    f0(t) = sum_j (-1)**j t**j / (j!)**2     (= J_0(2 sqrt(t)))

are the same series evaluated at ``y`` and ``-t``.  ``f`` gives the mean of
the multiplicative Volterra equation; the first zero ``r0`` of ``f0`` sets
the solvability radius of the plane BSPDE.

Hermite polynomials use the probabilists' convention, ``h_n(x) e^{-x^2/2} =
(-1)^n d^n/dx^n e^{-x^2/2}``.  Hermite functions ``xi_n`` are indexed from 1
so that ``xi_1(x) = pi^{-1/4} e^{-x^2/2}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import mpmath
import numpy as np
from scipy.special import erf

from .calculus import Rect
from .grid import Field2D

__all__ = [
    "SeriesEval",
    "PositivityProbe",
    "series_f",
    "series_f0",
    "find_r0",
    "r0_bracket",
    "f0_asymptotic",
    "bisect_root",
    "hermite_poly",
    "hermite_function",
    "mu1",
    "xi1_integral",
    "eta",
    "b_function",
    "positivity_probe",
]

SERIES_GUARD = 700.0
_REL_STOP = 1e-16
_MAX_TERMS = 500


@dataclass(frozen=True)
class SeriesEval:
    value: float
    terms_used: int
    truncation_bound: float

    def __float__(self) -> float:
        return self.value


def _tail_bound(next_term: float, y: float, n: int) -> float:
    # terms t_{m+1}/t_m = y / (m+1)^2, so the tail is dominated by a geometric series
    q = abs(y) / (n + 1) ** 2
    return abs(next_term) / (1.0 - q) if q < 1.0 else math.inf


def series_f(y: float) -> SeriesEval:
    """Partial sum of ``sum y**n / (n!)**2``.

    Summation stops at the first term below ``1e-16`` of the running partial
    sum once the terms are decreasing.  Large negative arguments suffer
    catastrophic cancellation in double precision (terms reach roughly
    ``exp(2 sqrt|y|)``), so they are summed in extended precision with
    ``mpmath`` and rounded once at the end.

    Raises
    ------
    OverflowError
        If ``|y| > 700``.
    """
    y = float(y)
    if not math.isfinite(y) or abs(y) > SERIES_GUARD:
        raise OverflowError(f"series argument |y| = {abs(y)} beyond guard {SERIES_GUARD}")
    if y < -16.0:
        return _series_f_mp(y)
    term = 1.0
    partial = 0.0
    n = 0
    while n < _MAX_TERMS:
        partial += term
        n += 1
        term *= y / (n * n)
        decreasing = n * n > abs(y)
        if decreasing and abs(term) < _REL_STOP * abs(partial):
            break
    return SeriesEval(partial, n, _tail_bound(term, y, n))


def _series_f_mp(y: float) -> SeriesEval:
    digits = 20 + int(2.0 * math.sqrt(abs(y)) / math.log(10.0)) + 1
    with mpmath.workdps(digits):
        ym = mpmath.mpf(y)
        term = mpmath.mpf(1)
        partial = mpmath.mpf(0)
        n = 0
        while n < _MAX_TERMS:
            partial += term
            n += 1
            term *= ym / (n * n)
            if n * n > abs(y) and abs(term) < _REL_STOP * abs(partial):
                break
        value = float(partial)
        nxt = float(term)
    return SeriesEval(value, n, _tail_bound(nxt, y, n))


def series_f0(t: float) -> SeriesEval:
    """Alternating series ``sum (-1)**j t**j / (j!)**2`` for ``t >= 0``."""
    if t < 0:
        raise ValueError(f"series_f0 needs t >= 0, got {t}")
    return series_f(-t)


def f0_asymptotic(y: float) -> float:
    """Large-negative-argument form ``(pi sqrt|y|)^{-1/2} cos(2 sqrt|y| - pi/4)``."""
    if y > -10.0:
        raise ValueError("f0_asymptotic is only valid for y <= -10")
    r = math.sqrt(-y)
    return (math.pi * r) ** -0.5 * math.cos(2.0 * r - math.pi / 4.0)


def bisect_root(fn: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-12,
                ftol: float | None = None, maxiter: int = 400) -> tuple[float, float]:
    """Shrink a sign-change bracket ``[lo, hi]`` of ``fn``.

    Stops when the bracket is narrower than ``xtol`` or, if ``ftol`` is given,
    when ``|fn(mid)| <= ftol`` (the bracket then collapses onto ``mid``).
    """
    flo, fhi = fn(lo), fn(hi)
    if flo == 0.0:
        return lo, lo
    if fhi == 0.0:
        return hi, hi
    if np.sign(flo) == np.sign(fhi):
        raise ValueError(f"no sign change on [{lo}, {hi}]")
    for _ in range(maxiter):
        if hi - lo <= xtol:
            break
        mid = 0.5 * (lo + hi)
        fmid = fn(mid)
        if fmid == 0.0 or (ftol is not None and abs(fmid) <= ftol):
            return mid, mid
        if np.sign(fmid) == np.sign(flo):
            lo, flo = mid, fmid
        else:
            hi = mid
    return lo, hi


def r0_bracket(tol: float = 1e-10) -> tuple[float, float]:
    """Sign-change bracket of width ``<= tol`` around the first zero of ``f0``."""
    return bisect_root(lambda t: series_f0(t).value, 1.0, 2.0, xtol=tol)


def find_r0(tol: float = 1e-10) -> float:
    """First positive zero of ``f0``; about 1.4458, i.e. ``(j_{0,1} / 2)^2``."""
    lo, hi = r0_bracket(tol)
    return 0.5 * (lo + hi)


def hermite_poly(n: int, x):
    """Probabilists' Hermite polynomial ``h_n(x)`` by the three-term recurrence."""
    if int(n) != n or not 0 <= n <= 200:
        raise ValueError(f"hermite_poly needs 0 <= n <= 200, got {n}")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if n == 0:
        return h_prev if x.ndim else float(h_prev)
    h = x.copy()
    for k in range(1, int(n)):
        h_prev, h = h, x * h - k * h_prev
    return h if x.ndim else float(h)


def hermite_function(n: int, x):
    """Orthonormal Hermite function ``xi_n``, ``n = 1, ..., 51``.

    ``xi_n(x) = pi^{-1/4} ((n-1)!)^{-1/2} h_{n-1}(sqrt(2) x) e^{-x^2/2}``,
    evaluated with the normalised recurrence to avoid overflow.
    """
    if int(n) != n or not 1 <= n <= 51:
        raise ValueError(f"hermite_function needs 1 <= n <= 51, got {n}")
    x = np.asarray(x, dtype=float)
    psi_prev = np.zeros_like(x)
    psi = np.pi ** -0.25 * np.exp(-0.5 * x * x)
    for k in range(int(n) - 1):
        psi_prev, psi = psi, math.sqrt(2.0 / (k + 1)) * x * psi - math.sqrt(k / (k + 1)) * psi_prev
    return psi if x.ndim else float(psi)


def mu1(s, a):
    """First tensor-product basis element ``xi_1(s) xi_1(a)`` of ``L^2(R^2)``."""
    return hermite_function(1, s) * hermite_function(1, a)


def xi1_integral(a, b):
    """Exact ``int_a^b xi_1``."""
    c = np.pi ** -0.25 * math.sqrt(np.pi / 2.0)
    return c * (erf(np.asarray(b) / math.sqrt(2.0)) - erf(np.asarray(a) / math.sqrt(2.0)))


def eta(rect: Rect, beta0: Field2D) -> float:
    """``int_R beta0 * mu1`` over ``rect``.

    ``beta0`` is piecewise constant (lower-left corner per cell) and ``mu1`` is
    integrated exactly on each cell, which factorises into 1-D ``xi_1``
    integrals.
    """
    grid = rect.grid
    if beta0.grid != grid:
        raise ValueError("field and rectangle live on different grids")
    si, sj = rect.cell_slices
    t, x = grid.t, grid.x
    wt = xi1_integral(t[:-1], t[1:])[si]
    wx = xi1_integral(x[:-1], x[1:])[sj]
    b = beta0.cell_values()[..., si, sj]
    return float(np.einsum("...ij,i,j->...", b, wt, wx))


_B_MAX_N = 150
_B_REL_STOP = 1e-14
_B_GROWTH = 1e12


def b_function(u1: float, eta: float, y0: float) -> float:
    """``y0 * sum_n (-eta)**n h_n(u1) / (n!)**2``, truncated.

    The sum stops after two consecutive terms below ``1e-14`` of the largest
    term seen, once past the point where the terms must be shrinking.

    Raises
    ------
    ArithmeticError
        "series truncation unreliable" when a term exceeds ``1e12`` or
        150 terms do not suffice.
    """
    if y0 <= 0:
        raise ValueError("y0 must be positive")
    u1 = float(u1)
    n_min = int(math.ceil(2.0 * math.sqrt(abs(eta) * (abs(u1) + 1.0)))) + 2
    coef = 1.0
    h_prev, h = 0.0, 1.0
    total = 0.0
    running_max = 0.0
    small = 0
    for n in range(_B_MAX_N + 1):
        term = y0 * coef * h
        if abs(term) > _B_GROWTH:
            raise ArithmeticError("series truncation unreliable")
        total += term
        running_max = max(running_max, abs(term))
        small = small + 1 if abs(term) < _B_REL_STOP * running_max else 0
        if small >= 2 and n >= n_min:
            return total
        coef *= -eta / (n + 1) ** 2
        h_prev, h = h, u1 * h - n * h_prev
    raise ArithmeticError("series truncation unreliable")


@dataclass(frozen=True)
class PositivityProbe:
    eta: float
    y0: float
    u_grid: np.ndarray
    b_values: np.ndarray
    min_value: float
    argmin: float

    def to_csv(self, path) -> None:
        from .io import write_columns_csv

        write_columns_csv(path, {"u1": self.u_grid, "b": self.b_values})


def positivity_probe(eta: float, y0: float = 1.0, u_min: float = -6.0, u_max: float = 6.0,
                     n_points: int = 1201) -> PositivityProbe:
    """Scan ``b_function`` on a uniform grid of ``u1`` and record its minimum.

    A negative minimum shows that ``b(u1) exp(-u1^2/2)``, the inverse Fourier
    transform of the scalar Hermite-transform slice, is not a non-negative
    density, so the solution of the multiplicative sheet equation cannot be a
    positive random field.
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    if u_min >= u_max or max(abs(u_min), abs(u_max)) > 8.0:
        raise ValueError("probe window must satisfy u_min < u_max and |u1| <= 8")
    u = np.linspace(u_min, u_max, int(n_points))
    b = np.array([b_function(v, eta, y0) for v in u])
    k = int(np.argmin(b))
    return PositivityProbe(float(eta), float(y0), u, b, float(b[k]), float(u[k]))
