"""Independent oracles and Monte Carlo harnesses for verification.

Everything here is deliberately slow and simple, and shares no numerical
code with the estimator or inference modules: bases come from the textbook
recursive definitions, error kernels from exact rational arithmetic, and the
corrected estimates from explicit dense-matrix formulas via the
pseudo-inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .exceptions import InputError
from .grid import Partition, Sample

# tolerance ladder used throughout the test suite
TOL_ALGEBRA = 1e-12   # exact algebraic identities
TOL_SOLVER = 1e-8     # exactness reached through a linear solve
TOL_FD = 1e-6         # finite-difference comparisons


# ---------------------------------------------------------------------------
# closed-form OLS
# ---------------------------------------------------------------------------

def oracle_ols(x: np.ndarray, y: np.ndarray, degree: int) -> np.ndarray:
    """Textbook polynomial OLS via the normal equations."""
    x = np.asarray(x, dtype=np.float64).ravel()
    v = np.vander(x, degree + 1, increasing=True)
    xtx = v.T @ v
    if np.linalg.matrix_rank(xtx) < degree + 1:
        raise InputError("Vandermonde matrix is rank deficient")
    return np.linalg.solve(xtx, v.T @ y)


def oracle_ols_predict(coef: np.ndarray, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return sum(c * x ** k for k, c in enumerate(coef))


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def fd_derivative(f, point: float, order: int = 1, step: float = 1e-5) -> float:
    """Central finite difference of the given order (binomial stencil)."""
    if order == 0:
        return float(f(point))
    total = 0.0
    for k in range(order + 1):
        offset = (order / 2.0 - k) * step
        total += (-1.0) ** k * math.comb(order, k) * f(point + offset)
    return total / step ** order


# ---------------------------------------------------------------------------
# naive basis evaluation (textbook recursions, scalar, slow)
# ---------------------------------------------------------------------------

def _naive_extended_knots(knots: np.ndarray, m: int) -> np.ndarray:
    return np.concatenate((np.repeat(knots[0], m - 1), knots,
                           np.repeat(knots[-1], m - 1)))


def _naive_b(j: int, p: int, x: float, t: np.ndarray, t_end: float) -> float:
    if p == 0:
        inside = t[j] <= x < t[j + 1]
        at_end = x == t_end and t[j] < t[j + 1] == t_end
        return 1.0 if (inside or at_end) else 0.0
    left = 0.0
    if t[j + p] > t[j]:
        left = (x - t[j]) / (t[j + p] - t[j]) * _naive_b(j, p - 1, x, t, t_end)
    right = 0.0
    if t[j + p + 1] > t[j + 1]:
        right = ((t[j + p + 1] - x) / (t[j + p + 1] - t[j + 1])
                 * _naive_b(j + 1, p - 1, x, t, t_end))
    return left + right


def _naive_b_deriv(j: int, p: int, nu: int, x: float, t: np.ndarray,
                   t_end: float) -> float:
    if nu == 0:
        return _naive_b(j, p, x, t, t_end)
    if p == 0:
        return 0.0
    left = 0.0
    if t[j + p] > t[j]:
        left = _naive_b_deriv(j, p - 1, nu - 1, x, t, t_end) / (t[j + p] - t[j])
    right = 0.0
    if t[j + p + 1] > t[j + 1]:
        right = (_naive_b_deriv(j + 1, p - 1, nu - 1, x, t, t_end)
                 / (t[j + p + 1] - t[j + 1]))
    return p * (left - right)


def naive_bspline_row(knots: np.ndarray, m: int, nu: int, x: float) -> np.ndarray:
    """All K = kappa + m - 1 B-spline (derivative) values at one point."""
    t = _naive_extended_knots(knots, m)
    nb = t.shape[0] - m
    return np.array([_naive_b_deriv(j, m - 1, nu, x, t, knots[-1])
                     for j in range(nb)])


def _naive_cell(knots: np.ndarray, x: float) -> int:
    ncell = knots.shape[0] - 1
    for j in range(ncell):
        if knots[j] <= x < knots[j + 1]:
            return j
    if x == knots[-1]:
        return ncell - 1
    raise InputError(f"{x} outside [{knots[0]}, {knots[-1]}]")


def naive_piecewise_row(knots: np.ndarray, m: int, nu: int, x: float) -> np.ndarray:
    ncell = knots.shape[0] - 1
    cell = _naive_cell(knots, x)
    row = np.zeros(ncell * m)
    tloc = x - knots[cell]
    for k in range(m):
        if k >= nu:
            row[cell * m + k] = (math.factorial(k) / math.factorial(k - nu)
                                 * tloc ** (k - nu))
    return row


def naive_tensor_row(p: Partition, family: str, m: int, q, point) -> np.ndarray:
    """Tensor-product basis row built from the naive univariate recursions."""
    point = np.atleast_1d(np.asarray(point, dtype=np.float64))
    row = None
    for ell in range(p.d):
        if family in ("bspline", "bs"):
            r = naive_bspline_row(p.knots[ell], m, q[ell], point[ell])
        else:
            r = naive_piecewise_row(p.knots[ell], m, q[ell], point[ell])
        row = r if row is None else np.outer(row, r).ravel()
    return row


# ---------------------------------------------------------------------------
# exact error kernels via rational arithmetic
# ---------------------------------------------------------------------------

def _frac_poly_integral(coefs):
    """Antiderivative coefficients of a Fraction-coefficient polynomial."""
    return [Fraction(0)] + [c / (k + 1) for k, c in enumerate(coefs)]


def _frac_poly_eval(coefs, x: Fraction) -> Fraction:
    acc = Fraction(0)
    for c in reversed(coefs):
        acc = acc * x + c
    return acc


def oracle_bernoulli(m: int):
    """Fraction coefficients of the m-th Bernoulli polynomial."""
    coefs = [Fraction(1)]
    for k in range(1, m + 1):
        coefs = [k * c for c in _frac_poly_integral(coefs)]
        shift = _frac_poly_eval(_frac_poly_integral(coefs), Fraction(1))
        coefs[0] -= shift
    return coefs


def oracle_legendre_monic(m: int):
    """Fraction coefficients of the monic polynomial of degree m orthogonal
    to all lower degrees on [0, 1] (exact-moment normal equations)."""
    # solve  sum_j c_j/(i+j+1) = -1/(i+m+1)  for i < m
    a = [[Fraction(1, i + j + 1) for j in range(m)] for i in range(m)]
    b = [Fraction(-1, i + m + 1) for i in range(m)]
    # Gaussian elimination in exact arithmetic
    for col in range(m):
        piv = next(r for r in range(col, m) if a[r][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        b[col], b[piv] = b[piv], b[col]
        inv = 1 / a[col][col]
        a[col] = [v * inv for v in a[col]]
        b[col] *= inv
        for r in range(m):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [v - f * w for v, w in zip(a[r], a[col])]
                b[r] -= f * b[col]
    return b + [Fraction(1)]


def _frac_poly_deriv(coefs, nu: int):
    for _ in range(nu):
        coefs = [k * c for k, c in enumerate(coefs)][1:] or [Fraction(0)]
    return coefs


def oracle_error_kernel(family: str, m: int, nu: int):
    """Float evaluator of the leading error kernel derivative (already
    divided by m!), from exact rational coefficients."""
    base = (oracle_bernoulli(m) if family in ("bspline", "bs")
            else oracle_legendre_monic(m))
    coefs = [c / math.factorial(m) for c in _frac_poly_deriv(base, nu)]
    floats = [float(c) for c in coefs]

    def evaluate(u):
        acc = np.zeros_like(np.asarray(u, dtype=np.float64))
        for c in reversed(floats):
            acc = acc * u + c
        return acc

    return evaluate


# ---------------------------------------------------------------------------
# dense brute-force corrected estimator
# ---------------------------------------------------------------------------

def brute_force_estimator(sample: Sample, family: str, m: int, p: Partition,
                          point, q, j: int, m_bc: int | None = None) -> float:
    """Recompute the corrected estimate at one point from explicit dense
    matrices (pseudo-inverse throughout); n <= 500 and K <= 60 only."""
    if m_bc is None:
        m_bc = m + 1
    q = tuple(int(v) for v in np.atleast_1d(q))
    n = sample.n
    if n > 500:
        raise InputError("brute-force oracle is limited to n <= 500")

    def dense(mm: int, qq) -> np.ndarray:
        return np.vstack([naive_tensor_row(p, family, mm, qq, xi)
                          for xi in sample.x])

    q0 = (0,) * sample.d
    bmat = dense(m, q0)
    if bmat.shape[1] > 60:
        raise InputError("brute-force oracle is limited to K <= 60")
    qinv = np.linalg.pinv(bmat.T @ bmat / n)
    beta = qinv @ bmat.T @ sample.y / n
    r_q = naive_tensor_row(p, family, m, q, point)
    est0 = float(r_q @ beta)
    if j == 0:
        return est0

    baux = dense(m_bc, q0)
    qinv_aux = np.linalg.pinv(baux.T @ baux / n)
    beta_aux = qinv_aux @ baux.T @ sample.y / n
    if j == 1:
        return float(naive_tensor_row(p, family, m_bc, q, point) @ beta_aux)

    def geom(z):
        h = np.empty(sample.d)
        u = np.empty(sample.d)
        for ell in range(sample.d):
            cell = _naive_cell(p.knots[ell], float(z[ell]))
            left, right = p.knots[ell][cell], p.knots[ell][cell + 1]
            h[ell] = right - left
            u[ell] = (z[ell] - left) / h[ell]
        return h, u

    def err_hat(z, qq) -> float:
        """q-derivative of the estimated leading approximation error."""
        h, u = geom(z)
        total = 0.0
        for ell in range(sample.d):
            kern = oracle_error_kernel(family, m, qq[ell])
            gamma = list(qq)
            gamma[ell] = m
            deriv = float(naive_tensor_row(p, family, m_bc, tuple(gamma), z)
                          @ beta_aux)
            total += h[ell] ** (m - qq[ell]) * kern(u[ell]) * deriv
        return total

    point = np.atleast_1d(np.asarray(point, dtype=np.float64))
    est3 = est0 + err_hat(point, q)
    if j == 3:
        return est3

    errs = np.array([err_hat(xi, q0) for xi in sample.x])
    proj = float(r_q @ qinv @ bmat.T @ errs / n)
    return est3 - proj


# ---------------------------------------------------------------------------
# data generating processes and Monte Carlo drivers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DgpSpec:
    """Closed-form mean and noise-sd functions with a covariate sampler."""

    id: str
    mean: callable
    sd: callable
    dim: int = 1

    def draw(self, n: int, rng: np.random.Generator) -> Sample:
        x = rng.uniform(0.0, 1.0, size=(n, self.dim))
        mu = self.mean(x)
        eps = rng.standard_normal(n) * self.sd(x)
        return Sample(y=mu + eps, x=x)

    def truth(self, points: np.ndarray) -> np.ndarray:
        return self.mean(np.atleast_2d(points))


def _flat_mean(x):
    return np.zeros(x.shape[0])


def _flat_sd(x):
    return np.ones(x.shape[0])


def _sinebump_mean(x):
    z = x[:, 0]
    return np.sin(2.0 * np.pi * z) + 2.0 * np.exp(-(z - 0.55) ** 2 / 0.02)


def _sinebump_sd(x):
    return 0.3 * (1.0 + x[:, 0])


def _line_mean(x):
    return 1.0 + 2.0 * x[:, 0]


def _line_sd(x):
    return 0.5 * np.ones(x.shape[0])


DGPS = {
    "flat0": DgpSpec(id="flat0", mean=_flat_mean, sd=_flat_sd),
    "sinebump": DgpSpec(id="sinebump", mean=_sinebump_mean, sd=_sinebump_sd),
    "line": DgpSpec(id="line", mean=_line_mean, sd=_line_sd),
}


def get_dgp(dgp_id: str) -> DgpSpec:
    try:
        return DGPS[dgp_id]
    except KeyError:
        raise InputError(f"unknown DGP id {dgp_id!r}; "
                         f"known: {sorted(DGPS)}") from None


def rate_slope(select, dgp: DgpSpec, n_values, reps: int, seed: int) -> float:
    """Log-log slope of the selected kappa against n, averaged over
    replications; ``select`` maps a Sample to an integer kappa."""
    mean_logs = []
    for n in n_values:
        logs = []
        for rep in range(reps):
            ss = np.random.SeedSequence(entropy=seed, spawn_key=(n, rep))
            sample = dgp.draw(n, np.random.default_rng(ss))
            logs.append(math.log(select(sample)))
        mean_logs.append(np.mean(logs))
    slope = np.polyfit(np.log(np.asarray(n_values, dtype=float)),
                       mean_logs, 1)[0]
    return float(slope)


def run_coverage(dgp: DgpSpec, n: int, reps: int, *, family="bspline", m=2,
                 m_bc=None, spacing="evenly-spaced", kselect="dpi",
                 kappa=None, bc=(0, 3), hc=None, alpha=0.05, grid_count=50,
                 num_sim=1000, band=True, seed=0) -> dict:
    """Empirical coverage of pointwise intervals and uniform bands.

    Per replication: draw from the DGP, select kappa (unless fixed), fit,
    and check whether the true mean is covered at the median grid point
    (pointwise, per correction) and over the whole grid (band). All
    randomness derives from substreams of ``seed``; results are
    deterministic and independent of execution order.
    """
    from .basis import BasisSpec, Family
    from .estimator import build_design, fit_ls
    from .grid import Spacing, make_partition
    from .inference import (default_hc, influence_matrix, normal_quantile,
                            simulate_critical_value, _weighted_residuals)
    from .tuning import select_dpi, select_rot

    if reps < 1:
        raise InputError("reps must be >= 1")
    if m_bc is None:
        m_bc = m + 1
    bc = tuple(int(j) for j in np.atleast_1d(bc))
    q = (0,) * dgp.dim
    spec = BasisSpec(Family(family), m, q)
    spec_aux = spec.with_order(m_bc)
    spacing = Spacing(spacing)
    levels = np.linspace(0.0, 1.0, grid_count)

    hits_point = {j: 0 for j in bc}
    hits_band = {j: 0 for j in bc}
    width_point = {j: 0.0 for j in bc}
    width_band = {j: 0.0 for j in bc}
    kappas = []
    z = normal_quantile(alpha)

    for rep in range(reps):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(rep,))
        rng = np.random.default_rng(ss)
        sample = dgp.draw(n, rng)
        if kappa is not None:
            kap = int(kappa)
        elif kselect == "rot":
            kap = select_rot(sample, spec, spacing).kappa_rot
        else:
            kap = select_dpi(sample, spec, spacing).kappa
        kappas.append(kap)
        part = make_partition(sample, kap, spacing)
        fit_main = fit_ls(build_design(sample, spec, part), sample.y)
        fit_aux = fit_ls(build_design(sample, spec_aux, part), sample.y)

        grid = np.column_stack([np.quantile(sample.x[:, ell], levels)
                                for ell in range(dgp.dim)])
        truth = dgp.truth(grid)
        mid = grid.shape[0] // 2
        band_seed = int(np.random.SeedSequence(
            entropy=seed, spawn_key=(rep, 1)).generate_state(1)[0])

        for j in bc:
            kind = hc or default_hc(j)
            a = influence_matrix(fit_main, fit_aux, grid, q, j)
            est = a @ sample.y / n
            wresid = _weighted_residuals(fit_main, kind)
            scaled = a * wresid[None, :]
            if band:
                cv, se = simulate_critical_value(
                    [(scaled, 1.0 / n, 0)], alpha, num_sim, band_seed)
                ok = np.abs(est - truth) <= cv * se
                hits_band[j] += bool(np.all(ok))
                width_band[j] += float(np.mean(2.0 * cv * se))
            else:
                se = np.sqrt(np.einsum("ij,ij->i", scaled, scaled)) / n
            covered = abs(est[mid] - truth[mid]) <= z * se[mid]
            hits_point[j] += bool(covered)
            width_point[j] += 2.0 * z * float(se[mid])

    out = {
        "dgp": dgp.id, "n": n, "reps": reps, "alpha": alpha,
        "kselect": "fixed" if kappa is not None else kselect,
        "avg_kappa": float(np.mean(kappas)),
        "corrections": {},
    }
    for j in bc:
        entry = {
            "pointwise_coverage": hits_point[j] / reps,
            "avg_ci_width": width_point[j] / reps,
        }
        if band:
            entry["band_coverage"] = hits_band[j] / reps
            entry["avg_band_width"] = width_band[j] / reps
        out["corrections"][str(j)] = entry
    return out
