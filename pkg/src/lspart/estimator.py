"""Design matrix construction, least squares fitting, and prediction."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec, basis_dim, design_rows
from .exceptions import InputError, NumericsError, RankDeficiencyWarning
from .grid import Partition, Sample


class GramSolver:
    """Rank-revealing solver for the symmetric Gram matrix B'B/n.

    Eigendecomposition with eigenvalues below ``K * eps * max(diag)``
    treated as zero; solves are minimum-norm on the column space.
    """

    def __init__(self, gram: np.ndarray):
        self.gram = gram
        k = gram.shape[0]
        evals, evecs = np.linalg.eigh(gram)
        thresh = k * np.finfo(np.float64).eps * float(np.max(np.abs(np.diag(gram))))
        keep = evals > thresh
        self.rank = int(np.count_nonzero(keep))
        self._inv_evals = np.where(keep, 1.0 / np.where(keep, evals, 1.0), 0.0)
        self._evecs = evecs

    @property
    def deficient(self) -> bool:
        return self.rank < self.gram.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Minimum-norm solution of ``gram @ x = rhs`` (rhs may be a matrix)."""
        proj = self._evecs.T @ rhs
        if proj.ndim == 1:
            proj = proj * self._inv_evals
        else:
            proj = proj * self._inv_evals[:, None]
        return self._evecs @ proj


@dataclass(frozen=True)
class Design:
    """Basis rows of the sample and the factorized Gram matrix."""

    B: np.ndarray
    gram: np.ndarray
    solver: GramSolver
    spec: BasisSpec
    partition: Partition
    points: np.ndarray

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def K(self) -> int:
        return self.B.shape[1]

    @property
    def effective_rank(self) -> int:
        return self.solver.rank


@dataclass(frozen=True)
class Fit:
    """Least squares fit: coefficients, residuals, and hat diagonals."""

    design: Design
    beta: np.ndarray
    residuals: np.ndarray
    leverage: np.ndarray

    @property
    def spec(self) -> BasisSpec:
        return self.design.spec

    @property
    def partition(self) -> Partition:
        return self.design.partition

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def fitted(self) -> np.ndarray:
        return self.design.B @ self.beta


def build_design(sample: Sample, spec: BasisSpec, p: Partition) -> Design:
    """Evaluate the q=0 basis at every sample point and factorize B'B/n."""
    k = basis_dim(spec, p)
    if k > sample.n:
        raise NumericsError(
            f"underdetermined fit: basis dimension K={k} exceeds n={sample.n}; "
            "reduce kappa or the basis order")
    B = design_rows(p, spec.family, spec.m, sample.x)
    gram = (B.T @ B) / sample.n
    solver = GramSolver(gram)
    if solver.deficient:
        warnings.warn(
            f"Gram matrix is rank deficient (rank {solver.rank} < K={k}); "
            "using the minimum-norm solution",
            RankDeficiencyWarning, stacklevel=2)
    return Design(B=B, gram=gram, solver=solver, spec=spec, partition=p,
                  points=sample.x)


def fit_ls(design: Design, y: np.ndarray) -> Fit:
    """Minimize the sum of squared residuals over basis coefficients."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.shape != (design.n,):
        raise InputError(f"y has shape {y.shape}, expected ({design.n},)")
    if not np.all(np.isfinite(y)):
        raise InputError("y contains non-finite values")
    n = design.n
    beta = design.solver.solve(design.B.T @ y / n)
    residuals = y - design.B @ beta
    # hat diagonal: b_i' (B'B)^{-1} b_i = b_i' gram^{-1} b_i / n
    sol = design.solver.solve(design.B.T)
    leverage = np.einsum("ij,ji->i", design.B, sol) / n
    leverage = np.clip(leverage, 0.0, 1.0)
    return Fit(design=design, beta=beta, residuals=residuals,
               leverage=leverage)


def fit_sample(sample: Sample, spec: BasisSpec, p: Partition) -> Fit:
    """Convenience: build the design for ``sample`` and fit its responses."""
    return fit_ls(build_design(sample, spec, p), sample.y)


def predict(fit: Fit, points, q=None) -> np.ndarray | float:
    """Evaluate ``d^q b(x)' beta`` at one point (scalar) or many (vector).

    ``q`` defaults to the estimand recorded in the fit's basis spec.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    if q is None:
        q = fit.spec.q
    rows = design_rows(fit.partition, fit.spec.family, fit.spec.m,
                       np.atleast_2d(pts), q)
    out = rows @ fit.beta
    return float(out[0]) if single else out
