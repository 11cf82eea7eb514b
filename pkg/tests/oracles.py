"""Independent reference computations used by the tests.

None of these share code with the package beyond reading ``p_i``.
"""

from __future__ import annotations

import math

import numpy as np


def hitting_by_linear_solve(model, a: int, b: int, c: int) -> float:
    """P_b(hit a before c) from the harmonic equations on a..c."""
    if b == a:
        return 1.0
    if b == c:
        return 0.0
    n = c - a + 1
    A = np.zeros((n, n))
    rhs = np.zeros(n)
    A[0, 0] = 1.0
    rhs[0] = 1.0
    A[-1, -1] = 1.0
    for k in range(1, n - 1):
        x = a + k
        up = 1.0 if x == 0 else 0.5 + model.p_at(x)
        A[k, k] = 1.0
        A[k, k + 1] = -up
        A[k, k - 1] = -(1.0 - up)
    return float(np.linalg.solve(A, rhs)[b - a])


def d_by_products(model, m: int, n: int) -> float:
    """D(m, n) by explicit products of U_i and math.fsum."""
    if n == m:
        return 0.0
    terms = [1.0]
    prod = 1.0
    for i in range(m + 1, n):
        p = model.p_at(i)
        prod *= (0.5 - p) / (0.5 + p)
        terms.append(prod)
    return math.fsum(terms)


def d_infinity_k1(m: int, B: float) -> float:
    """Closed form of D(m, inf) for p_i = B/(4i) when m >= i0.

    With U_i = (i - B/2)/(i + B/2) the products are ratios of Gamma values and
    sum(Gamma(n - B/2)/Gamma(n + B/2), n > m) telescopes to
    Gamma(m + 1 - B/2)/((B - 1) Gamma(m + B/2)).
    """
    return (m + B / 2.0) / (B - 1.0)
