"""Tensor-product partitions of the covariate support.

A partition is a per-dimension sequence of strictly increasing knots covering
the observed support. Cells are half-open ``[t_j, t_{j+1})`` with the last
cell closed on the right, so every in-support point belongs to exactly one
cell.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import CollapsedKnotsWarning, InputError


class Spacing(str, Enum):
    EVENLY = "evenly-spaced"
    QUANTILE = "quantile-spaced"


@dataclass(frozen=True)
class Sample:
    """Responses and covariates: ``y`` of length n, ``x`` of shape (n, d)."""

    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim != 1 or x.ndim != 2:
            raise InputError("y must be a vector and x a matrix")
        if y.shape[0] != x.shape[0]:
            raise InputError(
                f"y has {y.shape[0]} rows but x has {x.shape[0]}")
        if y.shape[0] < 1:
            raise InputError("sample is empty")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise InputError("sample contains non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class Partition:
    """Per-dimension knot sequences defining the tensor-product mesh."""

    knots: tuple[np.ndarray, ...]
    spacing: Spacing

    def __post_init__(self):
        knots = tuple(np.ascontiguousarray(k, dtype=np.float64)
                      for k in self.knots)
        for k in knots:
            if k.ndim != 1 or k.shape[0] < 2:
                raise InputError("each knot vector needs at least 2 entries")
            if not np.all(np.diff(k) > 0):
                raise InputError("knot vectors must be strictly increasing")
        object.__setattr__(self, "knots", knots)

    @property
    def d(self) -> int:
        return len(self.knots)

    @property
    def kappa(self) -> tuple[int, ...]:
        """Number of subintervals per dimension."""
        return tuple(k.shape[0] - 1 for k in self.knots)

    @property
    def lower(self) -> np.ndarray:
        return np.array([k[0] for k in self.knots])

    @property
    def upper(self) -> np.ndarray:
        return np.array([k[-1] for k in self.knots])

    def num_cells(self) -> int:
        return int(np.prod(self.kappa))


def make_partition(sample: Sample, kappa, spacing=Spacing.EVENLY) -> Partition:
    """Build a tensor-product partition with ``kappa[l]`` subintervals per
    dimension, either equal-width or at empirical quantiles of the data.

    Duplicate quantile knots (mass points) are collapsed with a warning,
    reducing the effective kappa in that dimension.
    """
    spacing = Spacing(spacing)
    kappa = np.broadcast_to(np.asarray(kappa, dtype=np.int64), (sample.d,))
    if np.any(kappa < 1):
        raise InputError("kappa must be >= 1 in every dimension")
    knots = []
    for ell in range(sample.d):
        col = sample.x[:, ell]
        lo, hi = float(col.min()), float(col.max())
        if lo == hi:
            raise InputError(
                f"covariate {ell} is constant; cannot partition its support")
        k = int(kappa[ell])
        if spacing is Spacing.EVENLY:
            kn = np.linspace(lo, hi, k + 1)
        else:
            if sample.n < k + 1:
                raise InputError(
                    f"quantile spacing needs n >= kappa+1 ({sample.n} < {k + 1})")
            probs = np.arange(1, k) / k
            interior = np.quantile(col, probs)
            kn = np.concatenate(([lo], interior, [hi]))
            uniq = np.unique(kn)
            if uniq.shape[0] < kn.shape[0]:
                warnings.warn(
                    f"collapsed {kn.shape[0] - uniq.shape[0]} duplicate "
                    f"quantile knots in dimension {ell}",
                    CollapsedKnotsWarning, stacklevel=2)
                kn = uniq
        knots.append(kn)
    return Partition(knots=tuple(knots), spacing=spacing)


def check_support(p: Partition, points: np.ndarray) -> np.ndarray:
    """Validate that every row of ``points`` lies in the closed support box.

    Returns the points as a contiguous (N, d) float array.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.shape[1] != p.d:
        raise InputError(f"points have {pts.shape[1]} columns, expected {p.d}")
    lo, hi = p.lower, p.upper
    bad = np.any((pts < lo) | (pts > hi), axis=1)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise InputError(
            f"point {pts[i]} lies outside the support "
            f"[{lo}, {hi}] (row {i})")
    return pts


def locate_cells(p: Partition, points: np.ndarray) -> np.ndarray:
    """Per-dimension cell indices, shape (N, d), for in-support points."""
    pts = check_support(p, points)
    out = np.empty(pts.shape, dtype=np.int64)
    for ell in range(p.d):
        kn = p.knots[ell]
        idx = np.searchsorted(kn, pts[:, ell], side="right") - 1
        out[:, ell] = np.clip(idx, 0, kn.shape[0] - 2)
    return out


def locate_cell(p: Partition, point) -> tuple[int, ...]:
    """Cell multi-index of a single point (right boundary goes to the last
    cell, interior knots to the right cell)."""
    return tuple(int(i) for i in locate_cells(p, np.atleast_1d(point))[0])


def cell_geometry(p: Partition, points: np.ndarray):
    """Local cell widths and within-cell positions at each point.

    Returns ``(h, u, cells)`` with shapes (N, d), (N, d), (N, d): the width of
    the containing cell per dimension, the normalized coordinate in [0, 1]
    within that cell, and the cell indices.
    """
    pts = check_support(p, points)
    cells = locate_cells(p, pts)
    h = np.empty(pts.shape)
    u = np.empty(pts.shape)
    for ell in range(p.d):
        kn = p.knots[ell]
        left = kn[cells[:, ell]]
        h[:, ell] = kn[cells[:, ell] + 1] - left
        u[:, ell] = (pts[:, ell] - left) / h[:, ell]
    return h, u, cells
