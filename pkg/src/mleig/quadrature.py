"""Gauss quadrature rules on the reference triangle.

The rules are conical products of a Gauss-Legendre rule with a Gauss-Jacobi
rule absorbing the Duffy-transform Jacobian, so a rule requested for degree
``d`` integrates every bivariate polynomial of total degree <= d exactly.
Points are returned in barycentric coordinates; weights sum to the reference
triangle area 1/2, so a physical integral over a triangle ``K`` is
``2 * area(K) * sum(w * f(x_q))``.
"""

import math
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Return ``(bary, weights)`` for a rule exact to the given total degree.

    Parameters
    ----------
    degree : int
        Largest total polynomial degree integrated exactly (>= 0).

    Returns
    -------
    bary : (nq, 3) float array
        Barycentric coordinates of the quadrature points.
    weights : (nq,) float array
        Weights on the reference triangle (sum to 1/2).
    """
    if degree < 0:
        raise ValueError(f"quadrature degree must be >= 0, got {degree}")
    n = max(1, math.ceil((degree + 1) / 2))

    xu, wu = roots_legendre(n)          # weight 1 on [-1, 1]
    u = (xu + 1.0) / 2.0
    wu = wu / 2.0
    xv, wv = roots_jacobi(n, 1.0, 0.0)  # weight (1 - x) on [-1, 1]
    v = (xv + 1.0) / 2.0
    wv = wv / 4.0

    U, V = np.meshgrid(u, v, indexing="ij")
    WU, WV = np.meshgrid(wu, wv, indexing="ij")
    x = (U * (1.0 - V)).ravel()
    y = V.ravel()
    w = (WU * WV).ravel()

    bary = np.column_stack([x, y, 1.0 - x - y])
    bary.setflags(write=False)
    w.setflags(write=False)
    return bary, w


def reference_monomial_integral(a, b):
    """Exact value of the monomial x^a y^b over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
