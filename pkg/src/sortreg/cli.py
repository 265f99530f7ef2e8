"""
Command-line interface: ``sortreg {estimate,test,select-j,simulate}``.

Errors are reported on stderr as one JSON record ``{"code", "error",
"message", "location"}`` with exit status 2 (configuration), 3 (data),
4 (numerical failure) or 5 (evaluation point in an empty portfolio).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace

import numpy as np
from scipy.stats import norm

from .estimator import fit_panel, linear_functional, step_values
from .exceptions import (ConfigError, DataError, EmptyCellAt, EmptyGrid, ExperimentFailed,
                         InsufficientPeriods, InvalidSpec, JTooLarge, NoControls,
                         NonPositiveValue, PeriodFitFailed, SortregError, ZeroVariance)
from .inference import t_test_hml
from .io import apply_transforms, dumps, read_panel, write_records
from .simulate import PRESETS, DgpSpec, figure1_traces, mc_coverage, mc_mse_curve, preset
from .tuning import select_j_factor, select_j_star

EXIT_CODES = [
    (EmptyCellAt, 5),
    ((PeriodFitFailed, ExperimentFailed), 4),
    ((ConfigError, InvalidSpec, EmptyGrid, JTooLarge), 2),
    ((DataError, NoControls, InsufficientPeriods), 3),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def _names(text):
    return [c for c in (text or "").split(",") if c]


def _add_data_args(p):
    p.add_argument("--input", required=True, help="long-format delimited file with a header")
    p.add_argument("--time-col", required=True)
    p.add_argument("--asset-col")
    p.add_argument("--return-col", required=True)
    p.add_argument("--char-cols", required=True, help="comma-separated characteristic columns")
    p.add_argument("--control-cols", default="", help="comma-separated control columns")
    p.add_argument("--weight-col")
    p.add_argument("--weighting", choices=["equal", "value"], default="equal")
    p.add_argument("--transform", action="append", default=[],
                   help="zscore:COL or log:COL; repeatable, applied in order")


def _add_j_args(p, default_rule="fixed"):
    p.add_argument("--j", help="portfolios per characteristic: an integer or one per period")
    p.add_argument("--j-rule", choices=["fixed", "star", "factor"], default=default_rule)
    p.add_argument("--grid", help="comma-separated candidate J values for star/factor")
    p.add_argument("--j-pilot", type=int)


def _add_points_args(p):
    p.add_argument("--zh", help="high evaluation point (comma-separated for d > 1)")
    p.add_argument("--zl", help="low evaluation point")
    p.add_argument("--zh-q", type=float, help="high point as a standard-normal quantile level")
    p.add_argument("--zl-q", type=float, help="low point as a standard-normal quantile level")


def _add_out_args(p):
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sortreg", description="Portfolio sorting estimation and inference.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="estimate mu on a grid and per-period fits")
    _add_data_args(p)
    _add_j_args(p)
    _add_points_args(p)
    p.add_argument("--points", type=int, help="grid points per characteristic")
    _add_out_args(p)

    p = sub.add_parser("test", help="high-minus-low t-test")
    _add_data_args(p)
    _add_j_args(p, default_rule="star")
    _add_points_args(p)
    p.add_argument("--variance", choices=["fm", "pi"], default="fm")
    p.add_argument("--reference", choices=["normal", "t"], default="normal")
    _add_out_args(p)

    p = sub.add_parser("select-j", help="data-driven number of portfolios")
    _add_data_args(p)
    p.add_argument("--j-rule", choices=["star", "factor"], default="star",
                   help="objective used to pick the grid candidate")
    p.add_argument("--grid")
    p.add_argument("--j-pilot", type=int)
    p.add_argument("--uniform", action="store_true", help="same J in every period")
    _add_points_args(p)
    _add_out_args(p)

    p = sub.add_parser("simulate", help="Monte Carlo experiments on synthetic panels")
    p.add_argument("--preset", choices=sorted(PRESETS), default="quadratic")
    p.add_argument("--config", help="JSON file of data-generating-process overrides")
    p.add_argument("--experiment", choices=["coverage", "mse-curve", "traces"])
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--j", help="fixed J for the coverage experiment")
    p.add_argument("--j-rule", choices=["fixed", "star", "factor"], default="star")
    p.add_argument("--grid", help="J values: tuning candidates, or the curve grid for mse-curve")
    p.add_argument("--j-pilot", type=int)
    p.add_argument("--variance", choices=["fm", "pi"], default="fm")
    _add_points_args(p)
    _add_out_args(p)
    return parser


# ---------------------------------------------------------------- helpers

def _load(args):
    chars = _names(args.char_cols)
    loaded = read_panel(args.input, args.time_col, args.return_col, chars,
                        _names(args.control_cols), args.weight_col, args.asset_col)
    if args.weighting == "value" and not args.weight_col:
        raise ConfigError("value weighting needs --weight-col")
    panel = apply_transforms(loaded.panel, args.transform, chars)
    return loaded, panel


def _points(args, d, required=True):
    pts = []
    for name in ("h", "l"):
        raw = getattr(args, f"z{name}")
        q = getattr(args, f"z{name}_q")
        if raw is not None and q is not None:
            raise ConfigError(f"give either --z{name} or --z{name}-q, not both")
        if q is not None:
            if not 0.0 < q < 1.0:
                raise ConfigError(f"quantile level must lie in (0, 1), got {q}")
            # quantile levels live on the z-scored characteristic scale
            z = [float(norm.ppf(q))] * d
        elif raw is not None:
            z = _floats(raw)
            if len(z) != d:
                raise ConfigError(f"--z{name} needs {d} coordinates, got {len(z)}")
        elif required:
            raise ConfigError(f"an evaluation point is required: --z{name} or --z{name}-q")
        else:
            z = None
        pts.append(None if z is None else tuple(z))
    return pts


def _j_sequence(args, panel, z_H, z_L):
    """Per-period J and the tuning result that produced it, if any."""
    if args.j_rule == "fixed":
        if args.j is None:
            raise ConfigError("the fixed J rule needs --j")
        js = _ints(args.j)
        if len(js) == 1:
            js = js * panel.T
        elif len(js) != panel.T:
            raise ConfigError(f"--j lists {len(js)} values for {panel.T} periods")
        return np.asarray(js), None
    if args.j is not None:
        raise ConfigError("give either --j or a data-driven --j-rule, not both")
    if z_H is None or z_L is None:
        raise ConfigError(f"--j-rule {args.j_rule} needs evaluation points")
    grid = _ints(args.grid) if args.grid else None
    select = select_j_star if args.j_rule == "star" else select_j_factor
    res = select(panel, z_H, z_L, grid=grid, j_pilot=args.j_pilot, weighting=args.weighting,
                 workers=args.workers)
    seq = res.j_star_sequence if args.j_rule == "star" else res.j_factor_sequence
    return seq, res


def _tuning_record(res):
    return {
        "record": "tuning", "objective": res.objective, "selected": res.selected,
        "grid": res.grid, "criterion": res.mse_hat, "b_hat": res.b_hat, "v1_hat": res.v1_hat,
        "v2_hat": res.v2_hat, "j_pilot": res.j_pilot, "n_bar": res.n_bar, "T": res.T,
        "d": res.d, "unimodal": res.unimodal, "flags": list(res.flags),
        "constants": res.constants,
    }


def _j_rows(res, labels, panel):
    return [{"record": "j_t", "t": lab, "n": int(n), "j_star": int(a), "j_factor": int(b)}
            for lab, n, a, b in zip(labels, panel.n_t, res.j_star_sequence,
                                    res.j_factor_sequence)]


def _eval_grid(panel, n_points):
    d = panel.d
    Z = np.vstack([p.characteristics for p in panel])
    axes = [np.linspace(*np.quantile(Z[:, k], [0.01, 0.99]), n_points) for k in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


# ---------------------------------------------------------------- commands

def cmd_estimate(args):
    loaded, panel = _load(args)
    labels = loaded.time_labels
    z_H, z_L = _points(args, panel.d, required=args.j_rule != "fixed")
    js, tuning = _j_sequence(args, panel, z_H, z_L)
    series = fit_panel(panel, js, args.weighting, args.workers)
    ok = [f.ok for f in series]
    if not any(ok):
        raise PeriodFitFailed([f.t for f in series])

    records = [{
        "record": "run", "command": "estimate", "T": panel.T, "d": panel.d, "d_x": panel.d_x,
        "dropped_rows": loaded.dropped_rows, "weighting": args.weighting,
        "j_rule": args.j_rule, "transforms": list(args.transform),
        "failed_periods": [lab for lab, o in zip(labels, ok) if not o],
    }, {"record": "j_sequence", "t": list(labels), "J": js}]
    if tuning is not None:
        records.append(_tuning_record(tuning))
        records.extend(_j_rows(tuning, labels, panel))

    n_points = args.points or (101 if panel.d == 1 else 21)
    grid = _eval_grid(panel, n_points)
    vals = np.array([step_values(f, grid) for f in series])  # (T, m)
    counts = np.array([np.asarray(f.partition.counts)[f.partition.locate_many(grid)] for f in series])
    used = np.isfinite(vals)
    for k, z in enumerate(grid):
        m = used[:, k]
        est = float(np.sum(vals[m, k]) / m.sum()) if m.any() else float("nan")
        records.append({
            "record": "trace", "z": z[0] if panel.d == 1 else z, "estimate": est,
            "periods_used": int(m.sum()), "mean_count": float(np.mean(counts[:, k])),
            "min_count": int(np.min(counts[:, k])),
        })
    if z_H is not None and z_L is not None:
        est = linear_functional(series, [(z_H, 1.0), (z_L, -1.0)])
        records.append({"record": "contrast", "z_H": z_H, "z_L": z_L, "estimate": est.value,
                        "trace": est.trace})
    for lab, f in zip(labels, series):
        records.append({
            "record": "period", "t": lab, "n": f.partition.cell_of.size, "J": f.J, "ok": f.ok,
            "breakpoints": list(f.partition.breakpoints), "counts": f.partition.counts,
            "cell_values": f.cell_values,
        })
    if panel.d_x:
        for lab, f in zip(labels, series):
            records.append({"record": "beta", "t": lab, "beta": f.beta_hat})
    write_records(args.out, records, args.format)


def cmd_test(args):
    loaded, panel = _load(args)
    z_H, z_L = _points(args, panel.d)
    js, tuning = _j_sequence(args, panel, z_H, z_L)
    series = fit_panel(panel, js, args.weighting, args.workers)
    res = t_test_hml(series, z_H, z_L, variance=args.variance, reference=args.reference)
    rec = {"record": "test", "z_H": z_H, "z_L": z_L}
    rec.update(res.as_dict())
    rec.update({"j_rule": args.j_rule, "J": js, "t": list(loaded.time_labels),
                "dropped_rows": loaded.dropped_rows})
    records = [rec]
    if tuning is not None:
        records.append(_tuning_record(tuning))
    write_records(args.out, records, args.format)


def cmd_select_j(args):
    loaded, panel = _load(args)
    z_H, z_L = _points(args, panel.d)
    grid = _ints(args.grid) if args.grid else None
    select = select_j_star if args.j_rule == "star" else select_j_factor
    res = select(panel, z_H, z_L, grid=grid, j_pilot=args.j_pilot, weighting=args.weighting,
                 uniform=args.uniform, workers=args.workers)
    records = [_tuning_record(res)]
    records += _j_rows(res, loaded.time_labels, panel)
    write_records(args.out, records, args.format)


def _spec(args) -> DgpSpec:
    spec = preset(args.preset)
    overrides = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        known = {f.name for f in fields(DgpSpec)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for key in ("beta", "z_params", "n_list", "z_H", "z_L"):
            if isinstance(overrides.get(key), list):
                overrides[key] = tuple(overrides[key])
    if args.seed is not None:
        overrides["seed"] = args.seed
    spec = replace(spec, **overrides)
    z_H, z_L = _points(args, spec.d, required=False)
    if z_H is not None:
        spec = replace(spec, z_H=z_H)
    if z_L is not None:
        spec = replace(spec, z_L=z_L)
    return spec


def cmd_simulate(args):
    spec = _spec(args)
    experiment = args.experiment or ("traces" if args.preset == "figure1" else "coverage")
    head = {"record": "run", "command": "simulate", "preset": args.preset,
            "experiment": experiment, "seed": spec.seed, "spec": _spec_dict(spec)}
    grid = _ints(args.grid) if args.grid else None
    if experiment == "traces":
        traces = figure1_traces(replace(spec, T=max(spec.T, 50)))
        records = [head] + [dict(record="trace", **tr) for tr in traces]
    elif experiment == "coverage":
        J = None
        if args.j_rule == "fixed":
            if args.j is None:
                raise ConfigError("the fixed J rule needs --j")
            J = int(args.j)
        rep = mc_coverage(spec, args.reps, j_rule=args.j_rule, J=J, variance=args.variance,
                          workers=args.workers, grid=grid, j_pilot=args.j_pilot)
        records = [head, dict(record="mc_report", **rep.as_dict())]
    else:
        j_grid = grid or [2, 4, 8, 16, 32, 64]
        rep = mc_mse_curve(spec, args.reps, j_grid, workers=args.workers,
                           select=args.j_rule == "star", j_pilot=args.j_pilot)
        records = [head, dict(record="mc_report", **rep.as_dict())]
    write_records(args.out, records, args.format)


def _spec_dict(spec):
    return {f.name: getattr(spec, f.name) for f in fields(spec)}


COMMANDS = {"estimate": cmd_estimate, "test": cmd_test, "select-j": cmd_select_j,
            "simulate": cmd_simulate}


def _location(exc):
    if isinstance(exc, EmptyCellAt):
        return {"z": list(exc.z), "periods": exc.periods}
    if isinstance(exc, PeriodFitFailed):
        return {"periods": exc.periods}
    if isinstance(exc, ZeroVariance):
        return {"period": exc.t, "column": exc.column}
    if isinstance(exc, NonPositiveValue):
        return {"period": exc.t, "row": exc.row, "column": exc.column}
    return None


def exit_code(exc) -> int:
    for kinds, code in EXIT_CODES:
        if isinstance(exc, kinds):
            return code
    return 3


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "workers", 1) < 1:
            raise ConfigError("--workers must be at least 1")
        COMMANDS[args.command](args)
    except SortregError as exc:
        code = exit_code(exc)
        sys.stderr.write(dumps({"code": code, "error": type(exc).__name__,
                                "message": str(exc), "location": _location(exc)}) + "\n")
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
