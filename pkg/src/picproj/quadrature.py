"""Quadrature on the reference triangle and the unit interval.

Triangle rules are collapsed Gauss-Jacobi rules averaged over the six
permutations of barycentric coordinates, which makes them symmetric without
hard-coded tables.
"""

from functools import lru_cache
from itertools import permutations

import numpy as np
from scipy.special import roots_jacobi

from .errors import InvalidArgument

MAX_DEGREE = 10


@lru_cache(maxsize=None)
def cell_quadrature(degree):
    """Symmetric rule on the reference triangle exact for total degree ``degree``.

    Returns ``(points, weights)`` with points of shape (n, 2) in reference
    coordinates; weights sum to the reference area 1/2.
    """
    degree = int(degree)
    if degree < 0 or degree > MAX_DEGREE:
        raise InvalidArgument(f"cell quadrature degree must be in [0, {MAX_DEGREE}], got {degree}")
    m = degree // 2 + 1
    # u-direction carries the (1 - u) Jacobian of the collapse
    ju, wu = roots_jacobi(m, 1.0, 0.0)
    gv, wv = np.polynomial.legendre.leggauss(m)
    u = 0.5 * (ju + 1.0)
    wu = wu / 4.0
    v = 0.5 * (gv + 1.0)
    wv = wv / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    w = np.outer(wu, wv).ravel()

    bary = np.column_stack((1.0 - x - y, x, y))
    pts, wts = [], []
    for perm in permutations(range(3)):
        b = bary[:, perm]
        pts.append(b[:, 1:])
        wts.append(w / 6.0)
    pts = np.concatenate(pts)
    wts = np.concatenate(wts)
    # merge coincident points produced by the symmetrisation
    keys = np.round(pts, 13)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    merged = np.zeros(len(first))
    np.add.at(merged, inverse.reshape(-1), wts)
    points = pts[first]
    points.setflags(write=False)
    merged.setflags(write=False)
    return points, merged


@lru_cache(maxsize=None)
def facet_quadrature(degree):
    """Gauss-Legendre rule on [0, 1] exact for polynomials of ``degree``."""
    degree = int(degree)
    if degree < 0:
        raise InvalidArgument("facet quadrature degree must be non-negative")
    m = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(m)
    s = 0.5 * (x + 1.0)
    w = 0.5 * w
    s.setflags(write=False)
    w.setflags(write=False)
    return s, w
