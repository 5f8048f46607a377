"""Command-line interface: CSV in, JSON (and plot CSV) out.

Subcommands: ``fit`` (estimation and inference over a grid), ``select``
(kappa selection report), ``lincom`` (linear combinations of group
regression functions), ``simulate`` (Monte Carlo coverage harness).

Exit codes: 0 success, 2 input error, 3 numerical failure. All numeric
output is serialized with 17 significant digits so parsing it back
reproduces the doubles exactly; outputs are written atomically.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
from dataclasses import dataclass

SCHEMA = "lspart/1"


def _setup_threads():
    cap = os.environ.get("LSPART_THREADS", "").strip()
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def fmt17(value) -> str:
    return format(float(value), ".17g")


def atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(obj):
    import numpy as np

    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: str, obj: dict):
    atomic_write(path, json.dumps(obj, indent=2, default=_json_default) + "\n")


def read_csv_columns(path: str, columns):
    """Strict CSV reader: header required, every requested cell must parse
    as a finite float (no NA / empty-cell handling)."""
    from .exceptions import InputError

    try:
        handle = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file (header row required)") from None
        header = [h.strip() for h in header]
        missing = [c for c in columns if c not in header]
        if missing:
            raise InputError(
                f"{path}: missing column(s) {missing}; found {header}")
        idx = [header.index(c) for c in columns]
        out = [[] for _ in columns]
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise InputError(
                    f"{path}: row {rownum} has {len(row)} fields, "
                    f"expected {len(header)}")
            for slot, col in enumerate(idx):
                cell = row[col].strip()
                if not cell:
                    raise InputError(
                        f"{path}: empty cell at row {rownum}, "
                        f"column {columns[slot]!r}")
                try:
                    val = float(cell)
                except ValueError:
                    raise InputError(
                        f"{path}: cannot parse {cell!r} at row {rownum}, "
                        f"column {columns[slot]!r}") from None
                if val != val or val in (float("inf"), float("-inf")):
                    raise InputError(
                        f"{path}: non-finite value at row {rownum}, "
                        f"column {columns[slot]!r}")
                out[slot].append(val)
    if not out[0]:
        raise InputError(f"{path}: no data rows")
    return out


def read_csv_labels(path: str, column: str):
    from .exceptions import InputError

    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = [h.strip() for h in next(reader)]
        if column not in header:
            raise InputError(f"{path}: missing column {column!r}")
        col = header.index(column)
        labels = []
        for rownum, row in enumerate(reader, start=2):
            cell = row[col].strip()
            if not cell:
                raise InputError(
                    f"{path}: empty cell at row {rownum}, column {column!r}")
            labels.append(cell)
    return labels


@dataclass
class RunConfig:
    """Validated run options shared by the estimation subcommands."""

    input: str | None
    y_col: str
    x_cols: list
    group_col: str | None
    method: str
    m: int
    m_bc: int
    deriv: tuple
    kappa: int | None
    kselect: str
    knots: str
    bc: int
    hc: str
    alpha: float
    band: bool
    nsim: int
    seed: int
    grid: int
    grid_file: str | None
    weights: list | None
    out: str | None
    plot_out: str | None

    def validate(self):
        from .exceptions import InputError

        if self.method not in ("bs", "pp"):
            raise InputError(f"--method must be bs or pp, got {self.method!r}")
        if self.m < 1:
            raise InputError("--m must be >= 1")
        if self.bc not in (0, 1, 2, 3):
            raise InputError("--bc must be one of 0,1,2,3")
        if self.bc >= 1 and self.m_bc <= self.m:
            raise InputError(
                f"--m-bc ({self.m_bc}) must exceed --m ({self.m}) when bc >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise InputError("--alpha must be in (0, 1)")
        if self.knots not in ("uniform", "quantile"):
            raise InputError("--knots must be uniform or quantile")
        if self.kselect not in ("rot", "dpi"):
            raise InputError("--kselect must be rot or dpi")
        if self.nsim < 100:
            raise InputError("--nsim must be >= 100")
        if self.seed < 0:
            raise InputError("--seed must be non-negative")
        if self.grid < 2:
            raise InputError("--grid must be >= 2")


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig(
        input=getattr(args, "input", None),
        y_col=getattr(args, "y_col", "y"),
        x_cols=[c.strip() for c in getattr(args, "x_cols", "x").split(",")],
        group_col=getattr(args, "group_col", None),
        method=args.method,
        m=args.m,
        m_bc=args.m_bc if args.m_bc is not None else args.m + 1,
        deriv=tuple(int(v) for v in str(args.deriv).split(",")),
        kappa=args.kappa,
        kselect=args.kselect,
        knots=args.knots,
        bc=args.bc,
        hc=f"hc{args.hc}",
        alpha=args.alpha,
        band=args.band,
        nsim=args.nsim,
        seed=args.seed,
        grid=args.grid,
        grid_file=getattr(args, "grid_file", None),
        weights=None,
        out=args.out,
        plot_out=getattr(args, "plot_out", None),
    )
    if getattr(args, "weights", None):
        cfg.weights = [float(w) for w in args.weights.split(",")]
    cfg.validate()
    return cfg


def _spacing(cfg: RunConfig):
    from .grid import Spacing

    return Spacing.EVENLY if cfg.knots == "uniform" else Spacing.QUANTILE


def _family(cfg: RunConfig):
    from .basis import Family

    return Family.BSPLINE if cfg.method == "bs" else Family.PIECEWISE


def _load_sample(cfg: RunConfig):
    from .exceptions import InputError
    from .grid import Sample
    import numpy as np

    if cfg.input is None:
        raise InputError("--input is required")
    cols = read_csv_columns(cfg.input, [cfg.y_col] + cfg.x_cols)
    y = np.asarray(cols[0])
    x = np.column_stack([np.asarray(c) for c in cols[1:]])
    sample = Sample(y=y, x=x)
    if len(cfg.deriv) == 1 and sample.d > 1:
        cfg.deriv = tuple([cfg.deriv[0]] * sample.d)
    if len(cfg.deriv) != sample.d:
        raise InputError(
            f"--deriv has {len(cfg.deriv)} entries for {sample.d} covariates")
    return sample


def _quantile_grid(x, count: int):
    import numpy as np

    from .exceptions import InputError

    levels = np.linspace(0.0, 1.0, count)
    d = x.shape[1]
    axes = [np.quantile(x[:, ell], levels) for ell in range(d)]
    if d == 1:
        return axes[0][:, None]
    if d == 2:
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.column_stack([g0.ravel(), g1.ravel()])
    raise InputError("default grids cover d <= 2; pass --grid-file for d > 2")


def _build_grid(cfg: RunConfig, x):
    import numpy as np

    if cfg.grid_file:
        cols = read_csv_columns(cfg.grid_file,
                                [f"x{i + 1}" for i in range(x.shape[1])])
        return np.column_stack([np.asarray(c) for c in cols])
    return _quantile_grid(x, cfg.grid)


def _select_kappa(cfg: RunConfig, sample, spec, spacing):
    from .tuning import select_dpi, select_rot

    if cfg.kappa is not None:
        return int(cfg.kappa), None
    report = (select_rot(sample, spec, spacing) if cfg.kselect == "rot"
              else select_dpi(sample, spec, spacing))
    return report.kappa, report


def _report_dict(report) -> dict | None:
    if report is None:
        return None
    return {
        "kappa_rot": report.kappa_rot,
        "kappa_dpi": report.kappa_dpi,
        "bias_constant": report.bias_constant,
        "variance_constant": report.variance_constant,
        "rate_exponent": report.rate_exponent,
        "fallback": report.fallback,
    }


def _plot_csv_text(grid, estimates, ses, ci_lo, ci_hi, band_lo, band_hi) -> str:
    d = grid.shape[1]
    cols = [f"x{i + 1}" for i in range(d)]
    cols += [f"estimate_{j}" for j in range(4)]
    cols += [f"se_{j}" for j in range(4)]
    cols += ["ci_lo", "ci_hi"]
    if band_lo is not None:
        cols += ["band_lo", "band_hi"]
    lines = [",".join(cols)]
    for i in range(grid.shape[0]):
        row = [fmt17(grid[i, ell]) for ell in range(d)]
        row += [fmt17(estimates[j][i]) for j in range(4)]
        row += [fmt17(ses[j][i]) for j in range(4)]
        row += [fmt17(ci_lo[i]), fmt17(ci_hi[i])]
        if band_lo is not None:
            row += [fmt17(band_lo[i]), fmt17(band_hi[i])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def run_fit(cfg: RunConfig) -> dict:
    import numpy as np

    from .basis import BasisSpec, basis_dim
    from .estimator import build_design, fit_ls
    from .grid import make_partition
    from .inference import (default_hc, influence_matrix, normal_quantile,
                            simulate_critical_value, _weighted_residuals)

    sample = _load_sample(cfg)
    spacing = _spacing(cfg)
    spec = BasisSpec(_family(cfg), cfg.m, cfg.deriv)
    kappa, report = _select_kappa(cfg, sample, spec, spacing)
    part = make_partition(sample, kappa, spacing)
    fit_main = fit_ls(build_design(sample, spec, part), sample.y)
    fit_aux = fit_ls(build_design(sample, spec.with_order(cfg.m_bc), part),
                     sample.y)
    grid = _build_grid(cfg, sample.x)

    estimates, ses = {}, {}
    scaled_rows = {}
    for j in range(4):
        kind = cfg.hc if cfg.hc else default_hc(j)
        a = influence_matrix(fit_main, fit_aux, grid, cfg.deriv, j)
        estimates[j] = a @ sample.y / sample.n
        wresid = _weighted_residuals(fit_main, kind)
        scaled = a * wresid[None, :]
        ses[j] = np.sqrt(np.einsum("ij,ij->i", scaled, scaled)) / sample.n
        if j == cfg.bc:
            scaled_rows[j] = scaled

    z = normal_quantile(cfg.alpha)
    ci_lo = estimates[cfg.bc] - z * ses[cfg.bc]
    ci_hi = estimates[cfg.bc] + z * ses[cfg.bc]

    band_lo = band_hi = None
    critical_value = None
    if cfg.band:
        cv, se_band = simulate_critical_value(
            [(scaled_rows[cfg.bc], 1.0 / sample.n, 0)], cfg.alpha, cfg.nsim,
            cfg.seed)
        critical_value = cv
        band_lo = estimates[cfg.bc] - cv * se_band
        band_hi = estimates[cfg.bc] + cv * se_band

    result = {
        "schema": SCHEMA,
        "command": "fit",
        "n": sample.n,
        "d": sample.d,
        "K": basis_dim(spec, part),
        "kappa": list(part.kappa),
        "method": cfg.method,
        "m": cfg.m,
        "m_bc": cfg.m_bc,
        "deriv": list(cfg.deriv),
        "knots": cfg.knots,
        "bc": cfg.bc,
        "hc": cfg.hc,
        "alpha": cfg.alpha,
        "band": cfg.band,
        "num_sim": cfg.nsim if cfg.band else None,
        "seed": cfg.seed,
        "selector": _report_dict(report),
        "critical_value": critical_value,
        "grid": [
            {
                "x": list(grid[i]),
                "estimates": [estimates[j][i] for j in range(4)],
                "ses": [ses[j][i] for j in range(4)],
                "ci": [ci_lo[i], ci_hi[i]],
                "band": ([band_lo[i], band_hi[i]] if cfg.band else None),
            }
            for i in range(grid.shape[0])
        ],
    }
    if cfg.plot_out:
        atomic_write(cfg.plot_out, _plot_csv_text(
            grid, estimates, ses, ci_lo, ci_hi, band_lo, band_hi))
    return result


def run_select(cfg: RunConfig) -> dict:
    from .basis import BasisSpec
    from .tuning import select_dpi, select_rot

    sample = _load_sample(cfg)
    spacing = _spacing(cfg)
    spec = BasisSpec(_family(cfg), cfg.m, cfg.deriv)
    rot = select_rot(sample, spec, spacing)
    dpi = select_dpi(sample, spec, spacing)
    return {
        "schema": SCHEMA,
        "command": "select",
        "n": sample.n,
        "d": sample.d,
        "method": cfg.method,
        "m": cfg.m,
        "deriv": list(cfg.deriv),
        "knots": cfg.knots,
        "rot": _report_dict(rot),
        "dpi": _report_dict(dpi),
    }


def run_lincom(cfg: RunConfig) -> dict:
    import numpy as np

    from .basis import BasisSpec
    from .exceptions import InputError
    from .inference import normal_quantile
    from .lincom import LincomSpec, lincom_estimate

    if cfg.group_col is None:
        raise InputError("lincom requires --group-col")
    if cfg.weights is None:
        raise InputError("lincom requires --weights")
    sample = _load_sample(cfg)
    labels = read_csv_labels(cfg.input, cfg.group_col)
    spec = LincomSpec.from_labels(sample.y, sample.x, labels, cfg.weights)
    spacing = _spacing(cfg)
    basis_spec = BasisSpec(_family(cfg), cfg.m, cfg.deriv)

    # grid: pooled quantiles restricted to the intersection of group supports
    lo = np.max([g.x.min(axis=0) for g in spec.groups], axis=0)
    hi = np.min([g.x.max(axis=0) for g in spec.groups], axis=0)
    if np.any(lo >= hi):
        raise InputError("group supports do not overlap")
    if cfg.grid_file:
        grid = _build_grid(cfg, sample.x)
    else:
        clipped = np.clip(sample.x, lo, hi)
        grid = _quantile_grid(clipped, cfg.grid)

    result = lincom_estimate(
        spec, grid, basis_spec, m_bc=cfg.m_bc, spacing=spacing,
        kappa=cfg.kappa, kselect=cfg.kselect, j=cfg.bc, alpha=cfg.alpha,
        hc=cfg.hc, band=cfg.band, num_sim=cfg.nsim, seed=cfg.seed)

    z = normal_quantile(cfg.alpha)
    ci_lo = result.estimates[cfg.bc] - z * result.ses[cfg.bc]
    ci_hi = result.estimates[cfg.bc] + z * result.ses[cfg.bc]
    band_lo = result.band.band_lo if result.band is not None else None
    band_hi = result.band.band_hi if result.band is not None else None

    out = {
        "schema": SCHEMA,
        "command": "lincom",
        "n": sample.n,
        "d": sample.d,
        "groups": [str(lab) for lab in result.labels],
        "weights": list(result.weights),
        "kappas": list(result.kappas),
        "method": cfg.method,
        "m": cfg.m,
        "m_bc": cfg.m_bc,
        "deriv": list(cfg.deriv),
        "bc": cfg.bc,
        "hc": cfg.hc,
        "alpha": cfg.alpha,
        "band": cfg.band,
        "seed": cfg.seed,
        "critical_value": (result.band.critical_value
                           if result.band is not None else None),
        "grid": [
            {
                "x": list(grid[i]),
                "estimates": [result.estimates[j][i] for j in range(4)],
                "ses": [result.ses[j][i] for j in range(4)],
                "ci": [ci_lo[i], ci_hi[i]],
                "band": ([band_lo[i], band_hi[i]]
                         if band_lo is not None else None),
            }
            for i in range(grid.shape[0])
        ],
    }
    if cfg.plot_out:
        est = {j: result.estimates[j] for j in range(4)}
        se = {j: result.ses[j] for j in range(4)}
        atomic_write(cfg.plot_out, _plot_csv_text(
            grid, est, se, ci_lo, ci_hi, band_lo, band_hi))
    return out


def run_simulate(args) -> dict:
    from .exceptions import InputError
    from .testkit import get_dgp, run_coverage

    if args.reps < 1:
        raise InputError("--reps must be >= 1")
    dgp = get_dgp(args.dgp)
    bc = tuple(int(v) for v in str(args.bc).split(","))
    table = run_coverage(
        dgp, args.n, args.reps, family=("bspline" if args.method == "bs"
                                        else "piecewise-poly"),
        m=args.m, m_bc=args.m_bc, spacing=("evenly-spaced"
                                           if args.knots == "uniform"
                                           else "quantile-spaced"),
        kselect=args.kselect, kappa=args.kappa, bc=bc,
        hc=(f"hc{args.hc}" if args.hc is not None else None),
        alpha=args.alpha, grid_count=args.grid, num_sim=args.nsim,
        band=args.band, seed=args.seed)
    table["schema"] = SCHEMA
    table["command"] = "simulate"
    table["seed"] = args.seed
    return table


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lspart",
        description="Partitioning-based least squares regression with "
                    "robust bias-corrected inference")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p, with_input=True):
        if with_input:
            p.add_argument("--input", required=True, help="input CSV path")
            p.add_argument("--y-col", dest="y_col", default="y")
            p.add_argument("--x-cols", dest="x_cols", default="x",
                           help="comma-separated covariate columns")
        p.add_argument("--method", choices=("bs", "pp"), default="bs",
                       help="basis family: B-splines or piecewise polynomials")
        p.add_argument("--m", type=int, default=2, help="basis order")
        p.add_argument("--m-bc", dest="m_bc", type=int, default=None,
                       help="bias-correction order (default m+1)")
        p.add_argument("--deriv", default="0",
                       help="derivative multi-index, comma-separated")
        p.add_argument("--kappa", type=int, default=None,
                       help="explicit kappa (skips selection)")
        p.add_argument("--kselect", choices=("rot", "dpi"), default="dpi")
        p.add_argument("--knots", choices=("uniform", "quantile"),
                       default="uniform")
        p.add_argument("--bc", type=int, choices=(0, 1, 2, 3), default=3,
                       help="bias-correction id for intervals and bands")
        p.add_argument("--hc", type=int, choices=(0, 1, 2, 3), default=3)
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--band", action="store_true",
                       help="simulate a uniform confidence band")
        p.add_argument("--nsim", type=int, default=2000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--grid", type=int, default=50,
                       help="evaluation points per covariate (quantile grid)")
        p.add_argument("--grid-file", dest="grid_file", default=None,
                       help="CSV with explicit grid points (columns x1..xd)")
        p.add_argument("--out", default=None, help="output JSON path")

    p_fit = sub.add_parser("fit", help="estimate and report inference")
    common(p_fit)
    p_fit.add_argument("--plot-out", dest="plot_out", default=None,
                       help="plot-data CSV path")

    p_sel = sub.add_parser("select", help="report selected kappa")
    common(p_sel)

    p_lin = sub.add_parser("lincom",
                           help="linear combination of group functions")
    common(p_lin)
    p_lin.add_argument("--group-col", dest="group_col", required=True)
    p_lin.add_argument("--weights", required=True,
                       help="comma-separated weights, sorted-label order")
    p_lin.add_argument("--plot-out", dest="plot_out", default=None)

    p_sim = sub.add_parser("simulate", help="Monte Carlo coverage harness")
    common(p_sim, with_input=False)
    p_sim.add_argument("--dgp", required=True,
                       help="built-in DGP id (flat0, sinebump, line)")
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--reps", type=int, required=True)
    p_sim.set_defaults(bc="0,3")
    return parser


def main(argv=None) -> int:
    _setup_threads()
    parser = build_parser()
    args = parser.parse_args(argv)

    from .exceptions import InputError, NumericsError

    try:
        if args.cmd == "simulate":
            result = run_simulate(args)
        else:
            cfg = _config_from_args(args)
            if args.cmd == "fit":
                result = run_fit(cfg)
            elif args.cmd == "select":
                result = run_select(cfg)
            else:
                result = run_lincom(cfg)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3

    out_path = getattr(args, "out", None)
    text = json.dumps(result, indent=2) + "\n"
    if out_path:
        atomic_write(out_path, text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
