"""Bias-corrected estimates, robust standard errors, and confidence bands.

Four estimators are exposed per evaluation point, indexed by the correction
id ``j``:

* ``j=0``  uncorrected partitioning estimator;
* ``j=1``  higher-order estimator (auxiliary fit of order ``m_bc > m``);
* ``j=2``  least squares bias correction: ``j=3`` plus removal of the least
  squares projection of the estimated per-observation approximation errors;
* ``j=3``  plug-in correction subtracting the estimated leading smoothing
  bias.

Every estimator is exactly linear in the responses, ``est = a'y / n``; the
row ``a`` drives both the sandwich variance and the multiplier simulation of
the band's supremum. Residuals always come from the main fit so variances
stay comparable across corrections.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .basis import design_rows, error_kernel
from .estimator import Fit
from .exceptions import (CappedWeightWarning, DegenerateBandWarning,
                         InputError)
from .grid import cell_geometry

DEFAULT_NUM_SIM = 2000
WEIGHT_CAP = 1e6

HC_KINDS = ("hc0", "hc1", "hc2", "hc3")


def default_hc(j: int) -> str:
    """Declared defaults: hc3 for corrected estimators, hc0 for j=0."""
    return "hc0" if j == 0 else "hc3"


def hc_weights(fit: Fit, kind: str = "hc0", cap: float = WEIGHT_CAP) -> np.ndarray:
    """Heteroskedasticity-consistent weights multiplying squared residuals."""
    kind = kind.lower()
    if kind not in HC_KINDS:
        raise InputError(f"unknown hc kind {kind!r}; expected one of {HC_KINDS}")
    n = fit.n
    if kind == "hc0":
        return np.ones(n)
    if kind == "hc1":
        k = fit.design.K
        if n <= k:
            warnings.warn("hc1 with n <= K; capping the correction factor",
                          CappedWeightWarning, stacklevel=2)
            return np.full(n, cap)
        return np.full(n, n / (n - k))
    one_minus = 1.0 - fit.leverage
    tiny = one_minus <= 1.0 / cap
    if np.any(tiny):
        warnings.warn(
            f"{int(np.count_nonzero(tiny))} leverage value(s) at 1; capping "
            f"hc weights at {cap:g}", CappedWeightWarning, stacklevel=2)
    base = np.where(tiny, cap, 1.0 / np.where(tiny, 1.0, one_minus))
    return base if kind == "hc2" else base ** 2


@dataclass(frozen=True)
class InfluenceRow:
    """Linear representation ``est = a'y / n`` of a (corrected) estimator."""

    a: np.ndarray
    j: int
    point: np.ndarray
    q: tuple[int, ...]

    def apply(self, y: np.ndarray) -> float:
        return float(self.a @ np.asarray(y) / self.a.shape[0])


def _same_partition(fit_a: Fit, fit_b: Fit) -> bool:
    pa, pb = fit_a.partition, fit_b.partition
    if pa is pb:
        return True
    return len(pa.knots) == len(pb.knots) and all(
        np.array_equal(a, b) for a, b in zip(pa.knots, pb.knots))


def _check_pair(fit_main: Fit, fit_aux: Fit | None, q, j: int):
    q = tuple(int(v) for v in np.atleast_1d(q))
    if sum(q) >= fit_main.spec.m:
        raise InputError(f"|q|={sum(q)} must be < m={fit_main.spec.m}")
    if j not in (0, 1, 2, 3):
        raise InputError(f"correction id j={j} must be in 0..3")
    if j >= 1:
        if fit_aux is None:
            raise InputError(f"correction j={j} requires an auxiliary fit")
        if fit_aux.spec.m <= fit_main.spec.m:
            raise InputError("auxiliary order m_bc must exceed m")
        if not _same_partition(fit_main, fit_aux):
            raise InputError("main and auxiliary fits use different partitions")
        if fit_aux.n != fit_main.n:
            raise InputError("main and auxiliary fits use different samples")
    return q


def _bias_coefficients(fit_main: Fit, points: np.ndarray, q) -> np.ndarray:
    """Per-dimension coefficients ``h_l^(m - q_l) * k_(m,q_l)(u_l)`` of the
    leading-error expansion at each point."""
    m = fit_main.spec.m
    family = fit_main.spec.family
    h, u, _ = cell_geometry(fit_main.partition, points)
    coeffs = np.empty(h.shape)
    for ell in range(h.shape[1]):
        kern = error_kernel(family, m, q[ell])
        coeffs[:, ell] = h[:, ell] ** (m - q[ell]) * kern(u[:, ell])
    return coeffs


def _gamma(q, ell: int, m: int) -> tuple[int, ...]:
    g = list(q)
    g[ell] = m
    return tuple(g)


def _solve_rows(fit: Fit, rows: np.ndarray) -> np.ndarray:
    """(G, K) basis rows -> (G, n) influence block ``rows' Q^-1 b(x_i)``."""
    return fit.design.solver.solve(rows.T).T @ fit.design.B.T


def _error_projection_matrix(fit_main: Fit, fit_aux: Fit) -> np.ndarray:
    """(n, K_aux) matrix G giving the estimated per-observation
    approximation errors as ``err_hat(x_i) = G[i] @ beta_aux``."""
    m = fit_main.spec.m
    x = fit_main.design.points
    q0 = (0,) * fit_main.partition.d
    coeffs = _bias_coefficients(fit_main, x, q0)
    out = np.zeros((fit_main.n, fit_aux.design.K))
    for ell in range(fit_main.partition.d):
        rows = design_rows(fit_aux.partition, fit_aux.spec.family,
                           fit_aux.spec.m, x, _gamma(q0, ell, m))
        out += coeffs[:, ell][:, None] * rows
    return out


def estimate_leading_bias(fit_main: Fit, fit_aux: Fit, point, q) -> float:
    """Estimated leading smoothing bias of the uncorrected estimator at
    ``point``: minus the q-derivative of the estimated approximation error,
    built from the auxiliary fit's m-th order derivatives and the family's
    per-cell error kernel scaled by local cell widths."""
    q = _check_pair(fit_main, fit_aux, q, 3)
    pts = np.atleast_2d(np.asarray(point, dtype=np.float64))
    m = fit_main.spec.m
    coeffs = _bias_coefficients(fit_main, pts, q)
    total = 0.0
    for ell in range(pts.shape[1]):
        rows = design_rows(fit_aux.partition, fit_aux.spec.family,
                           fit_aux.spec.m, pts, _gamma(q, ell, m))
        total += coeffs[0, ell] * float(rows[0] @ fit_aux.beta)
    return -total


def influence_matrix(fit_main: Fit, fit_aux: Fit | None, points, q,
                     j: int) -> np.ndarray:
    """Stacked influence rows, shape (num points, n)."""
    q = _check_pair(fit_main, fit_aux, q, j)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    m = fit_main.spec.m

    if j == 1:
        rows = design_rows(fit_aux.partition, fit_aux.spec.family,
                           fit_aux.spec.m, pts, q)
        return _solve_rows(fit_aux, rows)

    rows0 = design_rows(fit_main.partition, fit_main.spec.family, m, pts, q)
    a0 = _solve_rows(fit_main, rows0)
    if j == 0:
        return a0

    # plug-in: add back the q-derivative of the estimated approximation
    # error (est_3 = est_0 - leading_bias, and leading_bias = -d^q err_hat)
    coeffs = _bias_coefficients(fit_main, pts, q)
    lin = np.zeros((pts.shape[0], fit_aux.design.K))
    for ell in range(pts.shape[1]):
        rows = design_rows(fit_aux.partition, fit_aux.spec.family,
                           fit_aux.spec.m, pts, _gamma(q, ell, m))
        lin += coeffs[:, ell][:, None] * rows
    a3 = a0 + _solve_rows(fit_aux, lin)
    if j == 3:
        return a3

    # least squares: also remove the projection of the estimated
    # per-observation errors onto the main design
    gmat = _error_projection_matrix(fit_main, fit_aux)
    v = (a0 @ gmat) / fit_main.n
    return a3 - _solve_rows(fit_aux, v)


def influence_row(fit_main: Fit, fit_aux: Fit | None, point, q,
                  j: int) -> InfluenceRow:
    pts = np.atleast_1d(np.asarray(point, dtype=np.float64))
    a = influence_matrix(fit_main, fit_aux, pts, q, j)[0]
    return InfluenceRow(a=a, j=j, point=pts,
                        q=tuple(int(v) for v in np.atleast_1d(q)))


def _weighted_residuals(fit: Fit, kind: str) -> np.ndarray:
    return np.sqrt(hc_weights(fit, kind)) * fit.residuals


def _se_from_rows(a_matrix: np.ndarray, wresid: np.ndarray, n: int) -> np.ndarray:
    scaled = a_matrix * wresid[None, :]
    return np.sqrt(np.einsum("ij,ij->i", scaled, scaled)) / n


def point_se(row: InfluenceRow, fit_main: Fit, kind: str = "hc0") -> float:
    """Pre-asymptotic sandwich standard error ``sqrt(sum a_i^2 w_i e_i^2)/n``
    with residuals always taken from the main fit."""
    wresid = _weighted_residuals(fit_main, kind)
    return float(_se_from_rows(row.a[None, :], wresid, fit_main.n)[0])


def normal_quantile(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha={alpha} must be in (0, 1)")
    return float(norm.ppf(1.0 - alpha / 2.0))


def pointwise_ci(estimate: float, se: float, alpha: float):
    """Normal-quantile interval ``estimate +- z_(1-alpha/2) * se``."""
    z = normal_quantile(alpha)
    return estimate - z * se, estimate + z * se


@dataclass(frozen=True)
class PointInference:
    """All four corrected estimates with standard errors and intervals.

    Attribute access like ``estimate_2`` / ``se_0`` / ``ci_3`` indexes the
    tuples by correction id.
    """

    point: np.ndarray
    q: tuple[int, ...]
    alpha: float
    estimates: tuple[float, float, float, float]
    ses: tuple[float, float, float, float]
    cis: tuple[tuple[float, float], ...]

    def __getattr__(self, name: str):
        for prefix, source in (("estimate_", "estimates"), ("se_", "ses"),
                               ("ci_", "cis")):
            if name.startswith(prefix):
                try:
                    j = int(name[len(prefix):])
                except ValueError:
                    break
                if 0 <= j <= 3:
                    return object.__getattribute__(self, source)[j]
        raise AttributeError(name)


def point_inference(fit_main: Fit, fit_aux: Fit | None, point, q,
                    alpha: float = 0.05, hc: str | None = None) -> PointInference:
    """Estimates, ses, and intervals for all corrections at one point.

    ``hc=None`` applies the per-correction defaults (hc0 for j=0, hc3
    otherwise). Without an auxiliary fit only j=0 is populated.
    """
    y = fit_main.fitted + fit_main.residuals
    estimates, ses, cis = [], [], []
    js = (0, 1, 2, 3) if fit_aux is not None else (0,)
    for j in range(4):
        if j not in js:
            estimates.append(float("nan"))
            ses.append(float("nan"))
            cis.append((float("nan"), float("nan")))
            continue
        row = influence_row(fit_main, fit_aux, point, q, j)
        est = row.apply(y)
        se = point_se(row, fit_main, hc or default_hc(j))
        estimates.append(est)
        ses.append(se)
        cis.append(pointwise_ci(est, se, alpha))
    return PointInference(point=np.atleast_1d(np.asarray(point, float)),
                          q=tuple(int(v) for v in np.atleast_1d(q)),
                          alpha=alpha, estimates=tuple(estimates),
                          ses=tuple(ses), cis=tuple(cis))


@dataclass(frozen=True)
class BandResult:
    """Uniform confidence band over a grid of evaluation points."""

    grid: np.ndarray
    estimates: np.ndarray
    ses: np.ndarray
    critical_value: float
    band_lo: np.ndarray
    band_hi: np.ndarray
    num_sim: int
    seed: int
    j: int
    alpha: float


def _multipliers(seed: int, group: int, rep: int, n: int) -> np.ndarray:
    """Standard normal multipliers from a substream keyed by (seed, group,
    replicate); results do not depend on evaluation order."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(group, rep))
    return np.random.default_rng(ss).standard_normal(n)


def simulate_critical_value(parts, alpha: float, num_sim: int, seed: int,
                            chunk: int = 256):
    """Empirical (1 - alpha) quantile of the simulated supremum.

    ``parts`` is a list of ``(scaled_rows, coeff, group_id)`` triples:
    ``scaled_rows`` is the (num points, n_g) influence block already
    multiplied by the hc-weighted residuals, ``coeff`` the factor
    ``w_g / n_g`` on the group's sum. Returns ``(critical_value, se)``.
    """
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha={alpha} must be in (0, 1)")
    if num_sim < 100:
        raise InputError(f"num_sim={num_sim} must be >= 100")
    npts = parts[0][0].shape[0]
    var = np.zeros(npts)
    for scaled, coeff, _ in parts:
        var = var + coeff ** 2 * np.einsum("ij,ij->i", scaled, scaled)
    se = np.sqrt(var)
    valid = se > 0.0
    if not np.any(valid):
        warnings.warn("all grid points have zero standard error; "
                      "critical value set to 0", DegenerateBandWarning,
                      stacklevel=2)
        return 0.0, se
    if not np.all(valid):
        warnings.warn(
            f"{int(np.count_nonzero(~valid))} grid point(s) with zero "
            "standard error excluded from the supremum",
            DegenerateBandWarning, stacklevel=2)
    sups = np.empty(num_sim)
    se_valid = se[valid]
    for start in range(0, num_sim, chunk):
        stop = min(start + chunk, num_sim)
        acc = np.zeros((npts, stop - start))
        for scaled, coeff, gid in parts:
            ng = scaled.shape[1]
            omega = np.empty((ng, stop - start))
            for s in range(start, stop):
                omega[:, s - start] = _multipliers(seed, gid, s, ng)
            acc += coeff * (scaled @ omega)
        sups[start:stop] = np.max(np.abs(acc[valid]) / se_valid[:, None],
                                  axis=0)
    cv = float(np.quantile(sups, 1.0 - alpha, method="higher"))
    return cv, se


def uniform_band(rows, fit_main: Fit, alpha: float = 0.05,
                 num_sim: int = DEFAULT_NUM_SIM, seed: int = 0,
                 hc: str | None = None) -> BandResult:
    """Uniform band from the plug-in simulation of the supremum of the
    estimator's Gaussian approximation over the grid."""
    rows = list(rows)
    if not rows:
        raise InputError("band grid is empty")
    j = rows[0].j
    a_matrix = np.vstack([r.a for r in rows])
    grid = np.vstack([r.point for r in rows])
    kind = hc or default_hc(j)
    wresid = _weighted_residuals(fit_main, kind)
    y = fit_main.fitted + fit_main.residuals
    estimates = a_matrix @ y / fit_main.n
    scaled = a_matrix * wresid[None, :]
    cv, se = simulate_critical_value(
        [(scaled, 1.0 / fit_main.n, 0)], alpha, num_sim, seed)
    half = cv * se
    return BandResult(grid=grid, estimates=estimates, ses=se,
                      critical_value=cv, band_lo=estimates - half,
                      band_hi=estimates + half, num_sim=num_sim, seed=seed,
                      j=j, alpha=alpha)
