"""Vectorized NumPy implementations of the univariate basis kernels.

Both kernels return the compact (npts, m) block of basis values that are
nonzero at each point plus the index of the first nonzero basis function,
so the tensor-product assembly never touches zero columns.
"""

import numpy as np


def bspline_local(tknots, m, nu, pts):
    """Order-``m`` B-spline values (or ``nu``-th derivatives) on the clamped
    extended knot vector ``tknots`` (length K + m).

    Uses the triangular Cox-de Boor recursion up to degree ``m - 1 - nu``,
    then lifts with the difference-of-lower-order derivative recursion once
    per derivative order. Points sitting on a knot use the right cell, so
    derivatives are right-limits.
    """
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    npts = pts.shape[0]
    p = m - 1
    nbasis = tknots.shape[0] - m
    span = np.searchsorted(tknots, pts, side="right") - 1
    span = np.clip(span, p, nbasis - 1)
    first = span - p
    vals = np.zeros((npts, m))
    if nu >= m:
        return vals, first

    p0 = p - nu
    N = np.zeros((npts, p0 + 1))
    N[:, 0] = 1.0
    for j in range(1, p0 + 1):
        saved = np.zeros(npts)
        right_j = np.empty((npts, j))
        for r in range(j):
            right_j[:, r] = tknots[span + r + 1] - pts
        for r in range(j):
            den = right_j[:, r] + (pts - tknots[span + 1 - j + r])
            temp = np.divide(N[:, r], den, out=np.zeros(npts),
                             where=den > 0.0)
            N[:, r] = saved + right_j[:, r] * temp
            saved = (pts - tknots[span + 1 - j + r]) * temp
        N[:, j] = saved

    # Lift degree p0 values to nu-th derivatives of the degree-p basis.
    D = N
    for k in range(p0 + 1, p + 1):
        Dn = np.zeros((npts, k + 1))
        for r in range(k + 1):
            acc = np.zeros(npts)
            if r >= 1:
                den = tknots[span + r] - tknots[span - k + r]
                acc += np.divide(D[:, r - 1], den, out=np.zeros(npts),
                                 where=den > 0.0)
            if r <= k - 1:
                den = tknots[span + r + 1] - tknots[span - k + r + 1]
                acc -= np.divide(D[:, r], den, out=np.zeros(npts),
                                 where=den > 0.0)
            Dn[:, r] = k * acc
        D = Dn
    vals[:, :] = D
    return vals, first


def piecewise_local(edges, m, nu, pts):
    """Cell-local monomial block ``d^nu/dt^nu [1, t, ..., t^(m-1)]`` with
    ``t = x - left edge`` of the containing cell."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    npts = pts.shape[0]
    ncell = edges.shape[0] - 1
    cell = np.searchsorted(edges, pts, side="right") - 1
    cell = np.clip(cell, 0, ncell - 1)
    t = pts - edges[cell]
    vals = np.zeros((npts, m))
    for k in range(nu, m):
        coef = 1.0
        for j in range(k, k - nu, -1):
            coef *= j
        vals[:, k] = coef * t ** (k - nu)
    return vals, cell * m
