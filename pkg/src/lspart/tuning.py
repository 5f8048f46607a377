"""Data-driven selection of the number of subintervals per dimension.

Both selectors minimize the leading integrated mean squared error expansion

    IMSE(kappa) ~ V * kappa^(d + 2|q|) / n  +  B * kappa^(-2(m - |q|)),

whose minimizer in closed form is

    kappa = ceil( [ 2(m - |q|) B / ((d + 2|q|) V) * n ]^(1/(2m + d)) ).

The rule-of-thumb (ROT) selector estimates B and V from a global polynomial
pilot fit combined with the family's known per-cell error-kernel and
variance constants. The direct plug-in (DPI) selector re-estimates both
constants nonparametrically on the ROT partition.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .basis import (BasisSpec, Family, basis_dim, design_rows, dim_1d,
                    kernel_mean, kernel_moment)
from .estimator import build_design, fit_ls
from .exceptions import InputError
from .grid import Partition, Sample, Spacing, cell_geometry, make_partition


@dataclass(frozen=True)
class TuningReport:
    """Selected kappa values and the estimated IMSE constants behind them."""

    kappa_rot: int
    kappa_dpi: int | None
    bias_constant: float
    variance_constant: float
    rate_exponent: float
    fallback: bool = False

    @property
    def kappa(self) -> int:
        return self.kappa_dpi if self.kappa_dpi is not None else self.kappa_rot


def rate_exponent(m: int, d: int) -> float:
    return 1.0 / (2 * m + d)


def max_feasible_kappa(family: Family, m: int, d: int, n: int) -> int:
    """Largest kappa keeping the basis dimension at or below n/2."""
    per_dim = (n / 2.0) ** (1.0 / d)
    if Family(family) is Family.BSPLINE:
        cap = math.floor(per_dim) - (m - 1)
    else:
        cap = math.floor(per_dim / m)
    return max(1, cap)


def kappa_from_constants(bias_constant: float, variance_constant: float,
                         m: int, d: int, q_total: int, n: int) -> int:
    """IMSE-optimal kappa from precomputed constants; pure in its inputs."""
    if bias_constant < 0 or variance_constant < 0:
        raise InputError("IMSE constants must be non-negative")
    if bias_constant == 0.0 or variance_constant == 0.0:
        return 1
    ratio = (2.0 * (m - q_total) * bias_constant /
             ((d + 2.0 * q_total) * variance_constant))
    kappa = math.ceil((ratio * n) ** rate_exponent(m, d))
    return max(1, kappa)


@lru_cache(maxsize=None)
def variance_constant_1d(family: Family, m: int, nu: int,
                         ncells: int = 50) -> float:
    """Per-dimension variance constant of the basis: the large-kappa limit of
    ``trace(Q^-1 E[b_nu b_nu']) / kappa^(1 + 2 nu)`` for uniform design on
    the unit interval, computed by exact Gauss-Legendre quadrature on a
    reference partition."""
    family = Family(family)
    knots = np.linspace(0.0, 1.0, ncells + 1)
    part = Partition(knots=(knots,), spacing=Spacing.EVENLY)
    nodes, wts = np.polynomial.legendre.leggauss(m + 1)
    # map nodes into every cell
    mid = (knots[:-1] + knots[1:]) / 2.0
    half = (knots[1:] - knots[:-1]) / 2.0
    pts = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    weights = (half[:, None] * wts[None, :]).ravel()
    b0 = design_rows(part, family, m, pts[:, None], (0,))
    q_mat = b0.T @ (b0 * weights[:, None])
    if nu == 0:
        e_mat = q_mat
    else:
        bq = design_rows(part, family, m, pts[:, None], (nu,))
        e_mat = bq.T @ (bq * weights[:, None])
    tr = float(np.trace(np.linalg.solve(q_mat, e_mat)))
    return tr / ncells ** (1 + 2 * nu)


def _poly_exponents(d: int, degree: int):
    out = []
    for alpha in itertools.product(range(degree + 1), repeat=d):
        if sum(alpha) <= degree:
            out.append(alpha)
    return out


class _PolyPilot:
    """Global polynomial fit of a given total degree on standardized
    covariates, with analytic derivatives."""

    def __init__(self, sample: Sample, degree: int):
        self.center = sample.x.mean(axis=0)
        self.scale = sample.x.std(axis=0)
        self.scale[self.scale == 0.0] = 1.0
        self.exponents = _poly_exponents(sample.d, degree)
        z = (sample.x - self.center) / self.scale
        design = np.column_stack([
            np.prod(z ** np.asarray(alpha), axis=1)
            for alpha in self.exponents])
        coef, _, rank, _ = np.linalg.lstsq(design, sample.y, rcond=None)
        self.coef = coef
        self.rank = int(rank)
        self.num_terms = design.shape[1]
        resid = sample.y - design @ coef
        dof = max(sample.n - self.num_terms, 1)
        self.sigma2 = float(resid @ resid) / dof

    @property
    def degenerate(self) -> bool:
        return self.rank < self.num_terms

    def derivative(self, x: np.ndarray, gamma) -> np.ndarray:
        """d^gamma of the fitted polynomial at the rows of ``x``."""
        z = (np.atleast_2d(x) - self.center) / self.scale
        out = np.zeros(z.shape[0])
        for coef, alpha in zip(self.coef, self.exponents):
            if any(a < g for a, g in zip(alpha, gamma)):
                continue
            term = np.full(z.shape[0], coef)
            for ell, (a, g) in enumerate(zip(alpha, gamma)):
                fac = math.perm(a, g)
                term = term * fac * z[:, ell] ** (a - g)
            out += term
        return out / np.prod(self.scale ** np.asarray(gamma))


def _gamma(q, ell: int, m: int):
    g = list(q)
    g[ell] = m
    return tuple(g)


def _psi(family: Family, m: int, qa: int, qb: int) -> float:
    if qa == qb:
        return kernel_moment(family, m, qa, qa)
    return kernel_mean(family, m, qa) * kernel_mean(family, m, qb)


def _bias_constant_from_derivs(derivs: dict, widths: np.ndarray,
                               family: Family, m: int, q) -> float:
    """Average over the sample of the squared leading bias, with the kernel
    position integrated out per cell; ``widths[i, l]`` are cell widths."""
    d = widths.shape[1]
    total = np.zeros(widths.shape[0])
    for ell in range(d):
        for ellp in range(d):
            psi = _psi(family, m, q[ell], q[ellp])
            if psi == 0.0:
                continue
            total += (widths[:, ell] ** (m - q[ell])
                      * widths[:, ellp] ** (m - q[ellp])
                      * derivs[ell] * derivs[ellp] * psi)
    return float(np.mean(total))


def _fallback_report(sample: Sample, spec: BasisSpec, reason: str) -> TuningReport:
    warnings.warn(f"tuning pilot failed ({reason}); falling back to "
                  "kappa = ceil(n^(1/(2m+d)))", UserWarning, stacklevel=3)
    kappa = max(1, math.ceil(sample.n ** rate_exponent(spec.m, sample.d)))
    kappa = min(kappa, max_feasible_kappa(spec.family, spec.m, sample.d,
                                          sample.n))
    return TuningReport(kappa_rot=kappa, kappa_dpi=None, bias_constant=0.0,
                        variance_constant=0.0,
                        rate_exponent=rate_exponent(spec.m, sample.d),
                        fallback=True)


def select_rot(sample: Sample, spec: BasisSpec,
               spacing: Spacing = Spacing.EVENLY) -> TuningReport:
    """Rule-of-thumb selector from a global polynomial pilot of total degree
    m + 2: its m-th order derivatives feed the bias constant, its residual
    variance the (homoskedastic) variance constant."""
    m, d, q = spec.m, sample.d, spec.q
    if len(q) != d:
        raise InputError(f"derivative multi-index has {len(q)} entries, "
                         f"expected {d}")
    num_terms = len(_poly_exponents(d, m + 2))
    if sample.n <= num_terms:
        raise InputError(
            f"n={sample.n} too small for the degree-{m + 2} pilot "
            f"({num_terms} terms)")
    pilot = _PolyPilot(sample, m + 2)
    if pilot.degenerate:
        return _fallback_report(sample, spec, "rank-deficient pilot")

    ranges = sample.x.max(axis=0) - sample.x.min(axis=0)
    derivs = {ell: pilot.derivative(sample.x, _gamma(q, ell, m))
              for ell in range(d)}
    widths = np.broadcast_to(ranges, (sample.n, d))
    bias_c = _bias_constant_from_derivs(derivs, widths, spec.family, m, q)
    var_c = pilot.sigma2
    for ell in range(d):
        var_c *= (variance_constant_1d(spec.family, m, q[ell])
                  / ranges[ell] ** (2 * q[ell]))
    kappa = kappa_from_constants(bias_c, var_c, m, d, sum(q), sample.n)
    kappa = min(kappa, max_feasible_kappa(spec.family, m, d, sample.n))
    return TuningReport(kappa_rot=kappa, kappa_dpi=None, bias_constant=bias_c,
                        variance_constant=var_c,
                        rate_exponent=rate_exponent(m, d))


def select_dpi(sample: Sample, spec: BasisSpec,
               spacing: Spacing = Spacing.EVENLY) -> TuningReport:
    """Direct plug-in selector: refit the IMSE constants nonparametrically on
    the rule-of-thumb partition (order m+1 fit for the m-th derivatives, an
    order-m pilot fit for the heteroskedastic variance)."""
    m, d, q = spec.m, sample.d, spec.q
    rot = select_rot(sample, spec, spacing)
    if rot.fallback:
        return rot
    kappa0 = rot.kappa_rot
    try:
        part = make_partition(sample, kappa0, spacing)
        aux_kappa = min(kappa0, max_feasible_kappa(spec.family, m + 1, d,
                                                   sample.n))
        aux_part = (part if aux_kappa == kappa0
                    else make_partition(sample, aux_kappa, spacing))
        aux_fit = fit_ls(build_design(sample, spec.with_order(m + 1),
                                      aux_part), sample.y)
        pilot_design = build_design(sample, spec, part)
        pilot_fit = fit_ls(pilot_design, sample.y)
    except Exception as exc:  # noqa: BLE001 - any pilot failure falls back
        warnings.warn(f"DPI pilot failed ({exc}); returning the "
                      "rule-of-thumb kappa", UserWarning, stacklevel=2)
        return TuningReport(kappa_rot=kappa0, kappa_dpi=kappa0,
                            bias_constant=rot.bias_constant,
                            variance_constant=rot.variance_constant,
                            rate_exponent=rot.rate_exponent)

    # bias constant from nonparametric m-th derivatives and local cell widths
    aux_rows = {}
    for ell in range(d):
        rows = design_rows(aux_part, spec.family, m + 1, sample.x,
                           _gamma(q, ell, m))
        aux_rows[ell] = rows @ aux_fit.beta
    h, _, _ = cell_geometry(part, sample.x)
    bias_c = (_bias_constant_from_derivs(aux_rows, h, spec.family, m, q)
              * kappa0 ** (2 * (m - sum(q))))

    # heteroskedastic variance constant from the order-m pilot on the same
    # partition: (1/n) sum_i eps_i^2 b_i' Q^-1 M_q Q^-1 b_i / kappa^(d+2|q|)
    bq = design_rows(part, spec.family, m, sample.x, q)
    m_q = bq.T @ bq / sample.n
    sol = pilot_design.solver.solve(pilot_design.B.T)
    s_i = np.einsum("ij,ji->i", sol.T @ m_q, sol)
    var_c = (float(np.mean(pilot_fit.residuals ** 2 * s_i))
             / kappa0 ** (d + 2 * sum(q)))

    kappa = kappa_from_constants(bias_c, var_c, m, d, sum(q), sample.n)
    kappa = min(kappa, max_feasible_kappa(spec.family, m, d, sample.n))
    return TuningReport(kappa_rot=kappa0, kappa_dpi=kappa,
                        bias_constant=bias_c, variance_constant=var_c,
                        rate_exponent=rate_exponent(m, d))
