"""Basis function evaluation for the partitioning estimator.

Two families are implemented: B-splines of order ``m`` with maximal
smoothness (continuity ``m - 2`` at interior knots, clamped boundary knots)
and discontinuous piecewise polynomials (per-cell monomials anchored at the
cell's left endpoint). Multivariate bases are tensor products of the
univariate ones. A ``wavelet`` family slot is reserved but not implemented.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial

from . import _kernels
from .exceptions import InputError
from .grid import Partition, check_support

_INT64 = np.int64


class Family(str, Enum):
    BSPLINE = "bspline"
    PIECEWISE = "piecewise-poly"
    WAVELET = "wavelet"  # reserved, not implemented


def default_smoothness(family: Family, m: int) -> int:
    if family is Family.BSPLINE:
        return m - 2
    return -1


@dataclass(frozen=True)
class BasisSpec:
    """Family, order ``m`` (degree + 1), smoothness ``s``, and the derivative
    multi-index ``q`` of the estimand."""

    family: Family
    m: int
    q: tuple[int, ...] = (0,)
    s: int = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        if family is Family.WAVELET:
            raise NotImplementedError("wavelet bases are not implemented")
        if self.m < 1:
            raise InputError("basis order m must be >= 1")
        q = tuple(int(v) for v in np.atleast_1d(self.q))
        if any(v < 0 for v in q):
            raise InputError("derivative orders must be non-negative")
        object.__setattr__(self, "q", q)
        if sum(q) >= self.m:
            raise InputError(
                f"total derivative order |q|={sum(q)} must be < m={self.m}")
        s = self.s if self.s is not None else default_smoothness(family, self.m)
        expected = default_smoothness(family, self.m)
        if s != expected:
            raise InputError(
                f"smoothness s={s} unsupported for {family.value} of order "
                f"{self.m}; only s={expected} is implemented")
        object.__setattr__(self, "s", s)

    @property
    def total_q(self) -> int:
        return sum(self.q)

    def with_q(self, q) -> "BasisSpec":
        return BasisSpec(self.family, self.m, tuple(q))

    def with_order(self, m: int) -> "BasisSpec":
        q = self.q if sum(self.q) < m else tuple(0 for _ in self.q)
        return BasisSpec(self.family, m, q)


def dim_1d(family: Family, m: int, kappa: int) -> int:
    if family is Family.BSPLINE:
        return kappa + m - 1
    return kappa * m


def basis_dim(spec: BasisSpec, p: Partition) -> int:
    """Total number of tensor-product basis functions K."""
    return int(np.prod([dim_1d(spec.family, spec.m, k) for k in p.kappa]))


def extended_knots(knots: np.ndarray, m: int) -> np.ndarray:
    """Clamped knot vector: boundary knots repeated to multiplicity m."""
    return np.concatenate((np.repeat(knots[0], m - 1), knots,
                           np.repeat(knots[-1], m - 1)))


def _local_1d(family: Family, knots: np.ndarray, m: int, nu: int,
              pts: np.ndarray):
    if family is Family.BSPLINE:
        return _kernels.bspline_local(extended_knots(knots, m), m, nu, pts)
    return _kernels.piecewise_local(knots, m, nu, pts)


def design_rows(p: Partition, family: Family, m: int, points: np.ndarray,
                q=None) -> np.ndarray:
    """Dense (N, K) matrix of basis rows ``d^q b(x)'`` at the given points.

    ``q`` is a per-dimension derivative multi-index (default all zeros).
    """
    family = Family(family)
    pts = check_support(p, points)
    npts, d = pts.shape
    if q is None:
        q = (0,) * d
    q = tuple(int(v) for v in np.atleast_1d(q))
    if len(q) != d:
        raise InputError(f"derivative multi-index has {len(q)} entries, "
                         f"expected {d}")
    kdims = [dim_1d(family, m, k) for k in p.kappa]
    bigk = int(np.prod(kdims))

    # Per-dimension compact blocks, then a tensor-product scatter.
    vals = None
    cols = None
    for ell in range(d):
        v, first = _local_1d(family, p.knots[ell], m, q[ell], pts[:, ell])
        c = first[:, None] + np.arange(m, dtype=_INT64)[None, :]
        if vals is None:
            vals, cols = v, c
        else:
            vals = vals[:, :, None] * v[:, None, :]
            cols = cols[:, :, None] * kdims[ell] + c[:, None, :]
            vals = vals.reshape(npts, -1)
            cols = cols.reshape(npts, -1)
    out = np.zeros((npts, bigk))
    rows = np.arange(npts)[:, None]
    out[rows, cols] = vals
    return out


def eval_bspline(p: Partition, m: int, q, point) -> np.ndarray:
    """K-vector of (derivatives of) tensor-product B-splines at one point."""
    return design_rows(p, Family.BSPLINE, m, np.atleast_1d(point), q)[0]


def eval_piecewise(p: Partition, m: int, q, point) -> np.ndarray:
    """K-vector of (derivatives of) the piecewise-polynomial basis at one
    point."""
    return design_rows(p, Family.PIECEWISE, m, np.atleast_1d(point), q)[0]


# ---------------------------------------------------------------------------
# Leading approximation-error kernels.
#
# On a cell of width h the error of the L2 projection of a smooth function
# onto the basis behaves, per dimension, like
#     h^m * (m-th partial of the function) * k_m(u),    u in [0, 1),
# where k_m is a fixed monic-polynomial kernel over the normalized cell
# coordinate divided by m!: the Bernoulli polynomial for splines and the
# monic shifted Legendre polynomial for piecewise polynomials.
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _bernoulli_poly(m: int) -> Polynomial:
    b = Polynomial([1.0])
    for k in range(1, m + 1):
        b = k * b.integ()
        b -= b.integ()(1.0) - b.integ()(0.0)  # enforce zero mean on [0, 1]
    return b


@lru_cache(maxsize=None)
def _monic_shifted_legendre(m: int) -> Polynomial:
    leg = np.polynomial.legendre.Legendre.basis(m).convert(kind=Polynomial)
    shifted = leg(Polynomial([-1.0, 2.0]))  # map [0, 1] -> [-1, 1]
    scale = math.factorial(m) ** 2 / math.factorial(2 * m)
    return shifted * scale


@lru_cache(maxsize=None)
def error_kernel(family: Family, m: int, nu: int = 0) -> Polynomial:
    """nu-th derivative (in the normalized cell coordinate) of the leading
    per-cell projection-error kernel, already divided by m!."""
    family = Family(family)
    if family is Family.BSPLINE:
        base = _bernoulli_poly(m)
    elif family is Family.PIECEWISE:
        base = _monic_shifted_legendre(m)
    else:
        raise NotImplementedError(family.value)
    return base.deriv(nu) / math.factorial(m) if nu else base / math.factorial(m)


def kernel_moment(family: Family, m: int, nu_a: int, nu_b: int) -> float:
    """Integral over [0, 1] of the product of two error-kernel derivatives
    (same kernel for nu_a == nu_b gives the squared-kernel moment)."""
    ka = error_kernel(family, m, nu_a)
    kb = error_kernel(family, m, nu_b)
    prod = ka * kb
    return float(prod.integ()(1.0) - prod.integ()(0.0))


def kernel_mean(family: Family, m: int, nu: int) -> float:
    k = error_kernel(family, m, nu)
    return float(k.integ()(1.0) - k.integ()(0.0))
