"""Linear combinations of group-wise regression functions.

Groups are independent sub-samples (split by a label column); the target is
``theta(x) = sum_g w_g mu_g(x)``. Estimates combine the per-group corrected
estimators, variances add as ``sum_g w_g^2 se_g(x)^2`` (block-diagonal
covariance), and the uniform band simulates the supremum with group-wise
independent multiplier draws on the stacked influence rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import Fit, build_design, fit_ls
from .exceptions import InputError
from .grid import Sample, Spacing, check_support, make_partition
from .inference import (DEFAULT_NUM_SIM, BandResult, _weighted_residuals,
                        default_hc, influence_matrix, normal_quantile,
                        simulate_critical_value)
from .tuning import select_dpi, select_rot


@dataclass(frozen=True)
class LincomSpec:
    """Disjoint group samples (sorted by label) and their weights."""

    labels: tuple
    groups: tuple[Sample, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.groups) or \
                len(self.labels) != len(self.weights):
            raise InputError("labels, groups, and weights must align")
        if not self.groups:
            raise InputError("at least one group is required")
        if all(w == 0.0 for w in self.weights):
            raise InputError("weights must not all be zero")
        order = np.argsort(np.asarray(self.labels, dtype=object), kind="stable")
        object.__setattr__(self, "labels",
                           tuple(self.labels[i] for i in order))
        object.__setattr__(self, "groups",
                           tuple(self.groups[i] for i in order))
        object.__setattr__(self, "weights",
                           tuple(float(self.weights[i]) for i in order))

    @classmethod
    def from_labels(cls, y, x, labels, weights) -> "LincomSpec":
        """Split rows by label; ``weights`` maps sorted unique labels to
        coefficients (dict, or sequence in sorted-label order)."""
        labels = np.asarray(labels)
        uniq = sorted(set(labels.tolist()))
        if isinstance(weights, dict):
            wvec = [float(weights[u]) for u in uniq]
        else:
            wvec = [float(w) for w in weights]
            if len(wvec) != len(uniq):
                raise InputError(
                    f"{len(wvec)} weights given for {len(uniq)} groups")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(y, dtype=np.float64)
        groups = []
        for u in uniq:
            mask = labels == u
            if not np.any(mask):
                raise InputError(f"group {u!r} is empty")
            groups.append(Sample(y=y[mask], x=x[mask]))
        return cls(labels=tuple(uniq), groups=tuple(groups),
                   weights=tuple(wvec))


@dataclass(frozen=True)
class LincomResult:
    grid: np.ndarray
    estimates: np.ndarray  # (4, num grid points); NaN where unavailable
    ses: np.ndarray
    band: BandResult | None
    kappas: tuple[int, ...]
    labels: tuple
    weights: tuple[float, ...]
    alpha: float
    j: int

    def pointwise(self, j: int | None = None):
        """Normal-quantile pointwise interval arrays for correction ``j``."""
        jj = self.j if j is None else j
        z = normal_quantile(self.alpha)
        lo = self.estimates[jj] - z * self.ses[jj]
        hi = self.estimates[jj] + z * self.ses[jj]
        return lo, hi


def _select_kappa(sample: Sample, spec, spacing, kselect: str) -> int:
    if kselect == "rot":
        return select_rot(sample, spec, spacing).kappa_rot
    if kselect == "dpi":
        return select_dpi(sample, spec, spacing).kappa
    raise InputError(f"unknown selector {kselect!r}; expected 'rot' or 'dpi'")


def lincom_estimate(spec: LincomSpec, grid, basis_spec, m_bc: int | None = None,
                    spacing: Spacing = Spacing.EVENLY,
                    kappa: int | None = None, kselect: str = "rot",
                    shared_kappa: bool = False, j: int = 3,
                    alpha: float = 0.05, hc: str | None = None,
                    band: bool = True, num_sim: int = DEFAULT_NUM_SIM,
                    seed: int = 0) -> LincomResult:
    """Estimate ``theta(x)`` on a shared grid with robust inference.

    Each group is tuned independently unless ``kappa`` is given or
    ``shared_kappa`` forces one selector run on the pooled sample. The band
    (when requested) uses the correction ``j`` and the hc default for it
    unless ``hc`` overrides.
    """
    m = basis_spec.m
    if m_bc is None:
        m_bc = m + 1
    if m_bc <= m:
        raise InputError(f"m_bc={m_bc} must exceed m={m}")
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))

    if kappa is not None:
        kappas = [int(kappa)] * len(spec.groups)
    elif shared_kappa:
        pooled = Sample(y=np.concatenate([g.y for g in spec.groups]),
                        x=np.vstack([g.x for g in spec.groups]))
        shared = _select_kappa(pooled, basis_spec, spacing, kselect)
        kappas = [shared] * len(spec.groups)
    else:
        kappas = [_select_kappa(g, basis_spec, spacing, kselect)
                  for g in spec.groups]

    kind = hc or default_hc(j)
    npts = grid.shape[0]
    estimates = np.full((4, npts), np.nan)
    parts_by_j: dict[int, list] = {0: [], 1: [], 2: [], 3: []}
    est_acc = np.zeros((4, npts))
    for gid, (g, w, kap) in enumerate(zip(spec.groups, spec.weights, kappas)):
        part = make_partition(g, kap, spacing)
        check_support(part, grid)
        fit_main = fit_ls(build_design(g, basis_spec, part), g.y)
        fit_aux = fit_ls(build_design(g, basis_spec.with_order(m_bc), part),
                         g.y)
        wresid = _weighted_residuals(fit_main, kind)
        for jj in range(4):
            a = influence_matrix(fit_main, fit_aux, grid, basis_spec.q, jj)
            est_acc[jj] += w * (a @ g.y / g.n)
            parts_by_j[jj].append((a * wresid[None, :], w / g.n, gid))
    estimates = est_acc

    ses = np.empty((4, npts))
    for jj in range(4):
        var = np.zeros(npts)
        for scaled, coeff, _ in parts_by_j[jj]:
            var = var + coeff ** 2 * np.einsum("ij,ij->i", scaled, scaled)
        ses[jj] = np.sqrt(var)

    band_result = None
    if band:
        cv, se = simulate_critical_value(parts_by_j[j], alpha, num_sim, seed)
        half = cv * se
        band_result = BandResult(grid=grid, estimates=estimates[j], ses=se,
                                 critical_value=cv,
                                 band_lo=estimates[j] - half,
                                 band_hi=estimates[j] + half,
                                 num_sim=num_sim, seed=seed, j=j, alpha=alpha)

    return LincomResult(grid=grid, estimates=estimates, ses=ses,
                        band=band_result, kappas=tuple(kappas),
                        labels=spec.labels, weights=spec.weights,
                        alpha=alpha, j=j)
