"""Quadrature rules on intervals and triangles."""
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def gauss_legendre01(n):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def gauss_jacobi01(n, a, b):
    """Nodes/weights on [0, 1] for the weight (1 - t)**a * t**b."""
    x, w = roots_jacobi(n, a, b)
    return 0.5 * (x + 1.0), w / 2.0 ** (a + b + 1.0)


@lru_cache(maxsize=None)
def triangle_rule(n):
    """Collapsed (conical product) rule with ``n*n`` points on the reference triangle.

    Returns barycentric coordinates ``(n*n, 3)`` and weights summing to one, so
    ``sum(w * g(x))`` approximates the element mean of ``g``.  Exact for
    polynomials of degree ``2n - 1``.
    """
    u, wu = gauss_jacobi01(n, 0.0, 1.0)
    v, wv = gauss_legendre01(n)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ww = np.outer(wu, wv) * 2.0
    lam = np.stack([1.0 - uu, uu * (1.0 - vv), uu * vv], axis=-1).reshape(-1, 3)
    return lam, ww.ravel()


def map_rule(tri_xy, lam):
    """Physical points for barycentric coordinates ``lam`` on triangles ``tri_xy``.

    ``tri_xy`` has shape ``(nt, 3, 2)``; the result has shape ``(nt, nq, 2)``.
    """
    return np.einsum("qa,tad->tqd", lam, tri_xy)
