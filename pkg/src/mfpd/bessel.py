"""Bessel functions J0 and J1 of real argument, and the disk reference solutions.

Ascending power series below ``|x| = 12``; above, Miller's backward
recurrence normalized with ``J0 + 2 * sum_k J_2k = 1``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError

SWITCH = 12.0


def _series(order, x):
    half = 0.5 * x
    term = half**order / math.factorial(order)
    total = term
    m = 0
    z = -half * half
    while True:
        m += 1
        term *= z / (m * (m + order))
        total += term
        if abs(term) <= 1e-17 * max(abs(total), 1e-300) and m > 2:
            return total


def _miller(x):
    n_start = 2 * ((int(x) + 20 + int(math.sqrt(60.0 * x))) // 2)
    j_next, j_cur = 0.0, 1e-30
    norm = 0.0
    j0 = j1 = 0.0
    for n in range(n_start, 0, -1):
        j_prev = (2.0 * n / x) * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if abs(j_cur) > 1e250:
            j_cur *= 1e-250
            j_next *= 1e-250
            norm *= 1e-250
            j1 *= 1e-250
        # j_cur now holds the unnormalized J_{n-1}
        if (n - 1) % 2 == 0 and n - 1 > 0:
            norm += 2.0 * j_cur
        if n - 1 == 1:
            j1 = j_cur
    j0 = j_cur
    norm += j0
    return j0 / norm, j1 / norm


def _scalar(order, x):
    sign = 1.0
    if x < 0:
        x = -x
        sign = -1.0 if order == 1 else 1.0
    if x <= SWITCH:
        return sign * _series(order, x)
    j0, j1 = _miller(x)
    return sign * (j0 if order == 0 else j1)


def j0(x):
    """Bessel function of the first kind of order 0."""
    return np.vectorize(lambda t: _scalar(0, t), otypes=[float])(np.asarray(x, dtype=float))


def j1(x):
    """Bessel function of the first kind of order 1."""
    return np.vectorize(lambda t: _scalar(1, t), otypes=[float])(np.asarray(x, dtype=float))


def bessel_zero(order: int, guess: float, tol: float = 1e-14) -> float:
    """Zero of J_order near ``guess`` by Newton iteration (J0' = -J1, J1' = J0 - J1/x)."""
    x = float(guess)
    for _ in range(100):
        f = float(j0(x)) if order == 0 else float(j1(x))
        df = -float(j1(x)) if order == 0 else float(j0(x)) - float(j1(x)) / x
        step = f / df
        x -= step
        if abs(step) < tol * abs(x):
            return x
    raise ValidationError(f"Newton iteration for a zero of J{order} did not converge")


def bessel_reference(k: float, mode: str, points) -> np.ndarray:
    """Exact solution on the unit disk with a = q = 1.

    ``mode="J0"``: boundary datum 1, ``u = J0(sqrt(k) r) / J0(sqrt(k))``.
    ``mode="J1cos"``: boundary datum x1, ``u = J1(sqrt(k) r) / J1(sqrt(k)) cos(theta)``.
    """
    if not k > 0:
        raise ValidationError("k must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    s = math.sqrt(k)
    r = np.hypot(pts[:, 0], pts[:, 1])
    if mode == "J0":
        den = float(j0(s))
        if abs(den) < 1e-14:
            raise ValidationError(f"J0(sqrt({k})) vanishes: k is a Dirichlet eigenvalue")
        return j0(s * r) / den
    if mode == "J1cos":
        den = float(j1(s))
        if abs(den) < 1e-14:
            raise ValidationError(f"J1(sqrt({k})) vanishes: k is a Dirichlet eigenvalue")
        # J1(s r) cos(theta) = J1(s r) / r * x1, regular at the origin
        ratio = np.where(r > 0, j1(s * r) / np.where(r > 0, r, 1.0), 0.5 * s)
        return ratio * pts[:, 0] / den
    raise ValidationError(f"unknown mode {mode!r}; expected 'J0' or 'J1cos'")


def bessel_reference_gradient(k: float, mode: str, points) -> np.ndarray:
    """Gradient of :func:`bessel_reference` (used for checks on gradients and power densities)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    s = math.sqrt(k)
    x1, x2 = pts[:, 0], pts[:, 1]
    r = np.hypot(x1, x2)
    safe = np.where(r > 0, r, 1.0)
    if mode == "J0":
        # d/dr J0(s r) = -s J1(s r)
        dr = -s * j1(s * r) / float(j0(s))
        return np.column_stack([np.where(r > 0, dr * x1 / safe, 0.0), np.where(r > 0, dr * x2 / safe, 0.0)])
    if mode == "J1cos":
        # u = f(r) x1 with f(r) = J1(s r) / r; f'(r) = (s J0(s r) - 2 J1(s r)/r) / r
        den = float(j1(s))
        f = np.where(r > 0, j1(s * r) / safe, 0.5 * s)
        fp = np.where(r > 0, (s * j0(s * r) - 2.0 * j1(s * r) / safe) / safe, 0.0)
        g1 = f + fp * x1 * x1 / safe
        g2 = fp * x1 * x2 / safe
        return np.column_stack([g1, g2]) / den
    raise ValidationError(f"unknown mode {mode!r}; expected 'J0' or 'J1cos'")
