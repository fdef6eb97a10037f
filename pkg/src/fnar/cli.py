"""Command-line interface: simulate panels, estimate, run the replication
study, and compute propagation effects, all through plain text tables."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import montecarlo
from .basis import build_bspline_basis, build_quadrature
from .effects import (
    ShockFunction,
    impulse_response,
    marginal_effects,
    risk_key_player,
    total_impact,
)
from .errors import (
    CannotDifferenceError,
    FnarError,
    HarnessError,
    IllConditionedBasisError,
    InvalidArgumentError,
    MissingDataError,
    NonStationaryDgpError,
    NumericalFailureError,
    SchemaError,
    UnderidentifiedError,
    VarianceUnavailableError,
)
from .estimator import (
    MomentSpec,
    estimate_fixed_effects,
    estimate_variance,
    fit_2sls,
    fit_gmm,
    fit_report_text,
    functional_estimate_table,
    interpolate_response,
)
from .interaction import KernelIntegral, PastWindow, PointEval, epanechnikov_kernel
from .montecarlo import McConfig, format_report, run_mc
from .network import build_distance_weights, read_edge_list, write_edge_list
from .simulate import FunctionalPanel, simulate_mc_panel

EXIT_OK = 0
EXIT_IO = 2
EXIT_MODEL = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5

_DATA_ERRORS = (SchemaError, CannotDifferenceError, InvalidArgumentError, MissingDataError)
_NUMERIC_ERRORS = (
    NumericalFailureError,
    UnderidentifiedError,
    VarianceUnavailableError,
    IllConditionedBasisError,
    HarnessError,
)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_function_file(path, quad):
    """Read a two-column (s, value) table and interpolate it onto the grid."""
    pairs = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise SchemaError("expected a header with at least two columns", line=1,
                              path=str(path))
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                pairs.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError) as exc:
                raise SchemaError(str(exc), line=lineno, path=str(path)) from exc
    if not pairs:
        raise SchemaError("function table has no rows", path=str(path))
    return interpolate_response(np.array(pairs), quad)


def _read_observations(path):
    """Read `unit,period,s,y` rows into {(unit, period): [(s, y), ...]}."""
    obs = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["unit", "period", "s", "y"]:
            raise SchemaError("expected header 'unit,period,s,y'", line=1, path=str(path))
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                i, t, s, y = int(row[0]), int(row[1]), float(row[2]), float(row[3])
            except (ValueError, IndexError) as exc:
                raise SchemaError(str(exc), line=lineno, path=str(path)) from exc
            if not 0.0 <= s <= 1.0:
                raise SchemaError(f"evaluation point {s} outside [0, 1]", line=lineno,
                                  path=str(path))
            obs.setdefault((i, t), []).append((s, y))
    if not obs:
        raise SchemaError("observation table is empty", path=str(path))
    return obs


def _read_covariates(path):
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["unit", "period"]:
            raise SchemaError("expected header 'unit,period,x1,...'", line=1, path=str(path))
        d_x = len(header) - 2
        if d_x < 1:
            raise SchemaError("covariate table needs at least one x column", line=1,
                              path=str(path))
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows[(int(row[0]), int(row[1]))] = [float(v) for v in row[2:2 + d_x]]
            except (ValueError, IndexError) as exc:
                raise SchemaError(str(exc), line=lineno, path=str(path)) from exc
    return rows, d_x


def _read_coords(path):
    coords = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3:
            raise SchemaError("expected header 'unit,lon,lat'", line=1, path=str(path))
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                coords.append((int(row[0]), float(row[1]), float(row[2])))
            except (ValueError, IndexError) as exc:
                raise SchemaError(str(exc), line=lineno, path=str(path)) from exc
    coords.sort()
    ids = [c[0] for c in coords]
    if ids != list(range(len(ids))):
        raise SchemaError("unit ids must be 0..n-1 without gaps", path=str(path))
    return np.array([(lon, lat) for _, lon, lat in coords])


def _build_panel(args) -> FunctionalPanel:
    obs = _read_observations(args.observations)
    cov, d_x = _read_covariates(args.covariates)
    units = sorted({i for i, _ in obs})
    periods = sorted({t for _, t in obs})
    n, T = len(units), len(periods)
    if units != list(range(n)) or periods != list(range(T)):
        raise SchemaError("unit and period ids must be contiguous from 0")
    quad = build_quadrature(args.grid_count)
    y = np.empty((n, T, quad.count))
    x = np.empty((n, T, d_x))
    for i in range(n):
        for t in range(T):
            if (i, t) not in obs:
                raise SchemaError(f"no observations for unit {i}, period {t}",
                                  path=str(args.observations))
            if (i, t) not in cov:
                raise SchemaError(f"no covariates for unit {i}, period {t}",
                                  path=str(args.covariates))
            y[i, t] = interpolate_response(np.array(obs[(i, t)]), quad)
            x[i, t] = cov[(i, t)]
    return FunctionalPanel(y=y, x=x, quad=quad)


def _build_operator(args, quad):
    if args.operator == "point-eval":
        return PointEval(quad)
    if args.operator == "epanechnikov":
        return KernelIntegral(quad, kernel=epanechnikov_kernel)
    if args.operator == "past-window":
        return PastWindow(quad, width=args.window_width)
    raise InvalidArgumentError(f"unknown operator {args.operator!r}")


def _build_weights(args, n_expected=None):
    if args.weights is not None:
        w = read_edge_list(args.weights, n=n_expected)
    elif args.coords is not None:
        if args.threshold is None:
            raise InvalidArgumentError("--threshold is required with --coords")
        coords = _read_coords(args.coords)
        w = build_distance_weights(
            coords, args.threshold,
            inverse_distance=not args.binary_weights,
            metric=args.coord_type,
        )
    else:
        raise InvalidArgumentError("provide --weights or --coords")
    if n_expected is not None and w.n != n_expected:
        raise SchemaError(f"weights are for {w.n} units, panel has {n_expected}")
    return w


def cmd_simulate(args) -> int:
    out = Path(args.out)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    panel, truth = simulate_mc_panel(
        args.n, args.T, args.r, args.seed,
        n_quad=args.grid_count, alpha_scale=args.alpha_scale,
    )
    s_vals = panel.quad.points
    obs_rows = [
        (i, t, repr(float(s_vals[g])), repr(float(panel.y[i, t, g])))
        for i in range(panel.n) for t in range(panel.T) for g in range(panel.quad.count)
    ]
    _write_rows(out / "observations.csv", ["unit", "period", "s", "y"], obs_rows)
    cov_rows = [
        (i, t, *[repr(float(v)) for v in panel.x[i, t]])
        for i in range(panel.n) for t in range(panel.T)
    ]
    _write_rows(out / "covariates.csv",
                ["unit", "period"] + [f"x{j + 1}" for j in range(panel.d_x)], cov_rows)
    write_edge_list(truth.weights, out / "weights.csv")
    truth_rows = [
        (repr(float(s_vals[g])), repr(float(truth.alpha[g])),
         *[repr(float(truth.beta[j, g])) for j in range(truth.d_x)])
        for g in range(panel.quad.count)
    ]
    _write_rows(out / "truth_functions.csv",
                ["s", "alpha"] + [f"beta{j + 1}" for j in range(truth.d_x)], truth_rows)
    print(f"wrote panel (n={panel.n}, T={panel.T}) to {out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    out = Path(args.out)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    panel = _build_panel(args)
    weights = _build_weights(args, n_expected=panel.n)
    operator = _build_operator(args, panel.quad)
    basis = build_bspline_basis(args.inner_knots, args.degree, panel.quad)
    iv_exclude = tuple(int(v) for v in args.iv_exclude.split(",")) if args.iv_exclude else ()
    spec = MomentSpec(
        basis=basis, operator=operator, weights=weights,
        n_points=args.moment_points, iv_exclude=iv_exclude,
        weighting="identity" if args.estimator == "gmm2" else "2sls-block",
    )
    if args.estimator == "2sls":
        fit = fit_2sls(panel, spec)
    else:
        fit = fit_gmm(panel, spec)
    estimate_variance(fit, panel, spec)
    estimate_fixed_effects(fit, panel)

    (out / "fit_report.txt").write_text(fit_report_text(fit))
    header = ["s", "estimate", "se", "ci_lo", "ci_hi"]
    _write_rows(out / "alpha_hat.csv", header, functional_estimate_table(fit, "alpha"))
    for j in range(panel.d_x):
        _write_rows(out / f"beta{j + 1}_hat.csv", header,
                    functional_estimate_table(fit, "beta", j=j))
    fe_rows = [
        (i, g, repr(float(fit.fixed_effects[i, g])))
        for i in range(panel.n) for g in range(panel.quad.count)
    ]
    _write_rows(out / "fixed_effects.csv", ["unit", "grid_index", "value"], fe_rows)
    print(f"estimated {args.estimator} fit written to {out} "
          f"(converged={fit.converged}, objective={fit.objective_value:.6g})")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    if args.preset is not None:
        if args.preset not in montecarlo.PRESETS:
            raise InvalidArgumentError(
                f"unknown preset {args.preset!r}; choose from {sorted(montecarlo.PRESETS)}"
            )
        cfg = montecarlo.PRESETS[args.preset]
        overrides = {"base_seed": args.seed}
        if args.replications is not None:
            overrides["replications"] = args.replications
        if args.workers is not None:
            overrides["workers"] = args.workers
        cfg = dataclasses.replace(cfg, **overrides)
    else:
        cfg = McConfig(
            n=args.n, T=args.T, L=args.moment_points, inner_knots=args.inner_knots,
            r=args.r, estimators=tuple(args.estimators.split(",")),
            replications=args.replications or 500, base_seed=args.seed,
            workers=args.workers or 1,
        )
    report = run_mc(cfg)
    text = format_report(report)
    if args.out is not None:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"# {cfg.replications} replications, {report.failures} failures, "
          f"{report.wall_clock:.1f}s", file=sys.stderr)
    return EXIT_OK


class _EffectsSource:
    """Duck-typed effects input: grid functions plus the operator."""

    def __init__(self, alpha, beta, operator):
        self.alpha = alpha
        self.beta = beta
        self.operator = operator


def _write_propagation(result, out_dir, stem):
    out_dir = Path(out_dir)
    per_rows = [
        (ell, i, g, repr(float(result.per_order[ell, i, g])))
        for ell in range(result.order + 1)
        for i in range(result.per_order.shape[1])
        for g in range(result.per_order.shape[2])
    ]
    _write_rows(out_dir / f"{stem}_orders.csv", ["order", "unit", "grid_index", "value"],
                per_rows)
    cum_rows = [
        (i, g, repr(float(result.cumulative[i, g])))
        for i in range(result.cumulative.shape[0])
        for g in range(result.cumulative.shape[1])
    ]
    _write_rows(out_dir / f"{stem}_cumulative.csv", ["unit", "grid_index", "value"], cum_rows)


def cmd_effects(args) -> int:
    quad = build_quadrature(args.grid_count)
    weights = _build_weights(args)
    operator = _build_operator(args, quad)
    alpha = _read_function_file(args.alpha_file, quad)
    beta = None
    if args.beta_file is not None:
        beta = _read_function_file(args.beta_file, quad)[None, :]
    source = _EffectsSource(alpha, beta, operator)

    if args.effect == "marginal":
        if beta is None:
            raise InvalidArgumentError("marginal effects need --beta-file")
        out = Path(args.out)
        if not out.is_dir():
            raise FileNotFoundError(f"output directory {out} does not exist")
        result = marginal_effects(source, weights, args.unit, 0, order=args.orders)
        _write_propagation(result, out, "marginal")
        print(f"marginal effects for unit {args.unit} written to {out}")
        return EXIT_OK

    shock = ShockFunction(_read_function_file(args.shock_file, quad))
    if args.effect == "impulse":
        out = Path(args.out)
        if not out.is_dir():
            raise FileNotFoundError(f"output directory {out} does not exist")
        result = impulse_response(source, weights, args.unit, shock, order=args.orders)
        _write_propagation(result, out, "impulse")
        print(f"impulse responses for unit {args.unit} written to {out} "
              f"(total impact {total_impact(result):.6g})")
        return EXIT_OK

    # key player: report per-unit total impacts and the argmax
    impacts = [
        total_impact(impulse_response(source, weights, i, shock, order=args.orders))
        for i in range(weights.n)
    ]
    star = risk_key_player(source, weights, shock, order=args.orders)
    if args.out is not None:
        _write_rows(Path(args.out), ["unit", "total_impact"],
                    [(i, repr(float(v))) for i, v in enumerate(impacts)])
    print(f"risk key player: unit {star}")
    return EXIT_OK


def _add_weight_args(parser):
    parser.add_argument("--weights", help="edge-list file i,j,weight")
    parser.add_argument("--coords", help="coordinate file unit,lon,lat")
    parser.add_argument("--threshold", type=float, help="distance band for --coords")
    parser.add_argument("--coord-type", choices=["euclidean", "greatcircle"],
                        default="euclidean")
    parser.add_argument("--binary-weights", action="store_true",
                        help="indicator weights instead of inverse distance")


def _add_operator_args(parser):
    parser.add_argument("--operator",
                        choices=["point-eval", "epanechnikov", "past-window"],
                        default="epanechnikov")
    parser.add_argument("--window-width", type=float, default=0.25,
                        help="width of the past-window operator")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fnar",
        description="Functional network autoregression: simulate, estimate, effects.",
    )
    parser.add_argument("--config", help="JSON file with per-subcommand defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a benchmark-design panel")
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--T", type=int, required=True)
    p_sim.add_argument("--r", type=float, default=1.0)
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--grid-count", type=int, default=99)
    p_sim.add_argument("--alpha-scale", type=float, default=1.0)
    p_sim.set_defaults(func=cmd_simulate)

    p_est = sub.add_parser("estimate", help="fit the model to panel files")
    p_est.add_argument("--observations", required=True)
    p_est.add_argument("--covariates", required=True)
    _add_weight_args(p_est)
    _add_operator_args(p_est)
    p_est.add_argument("--moment-points", type=int, default=10)
    p_est.add_argument("--inner-knots", type=int, default=2)
    p_est.add_argument("--degree", type=int, default=3)
    p_est.add_argument("--grid-count", type=int, default=99)
    p_est.add_argument("--estimator", choices=["gmm1", "gmm2", "2sls"], default="gmm1")
    p_est.add_argument("--iv-exclude", default="",
                       help="comma-separated covariate indices kept out of the lags")
    p_est.add_argument("--out", required=True)
    p_est.set_defaults(func=cmd_estimate)

    p_mc = sub.add_parser("montecarlo", help="run the replication study")
    p_mc.add_argument("--preset", help=f"one of {sorted(montecarlo.PRESETS)}")
    p_mc.add_argument("--n", type=int, default=40)
    p_mc.add_argument("--T", type=int, default=5)
    p_mc.add_argument("--moment-points", type=int, default=10)
    p_mc.add_argument("--inner-knots", type=int, default=2)
    p_mc.add_argument("--r", type=float, default=1.0)
    p_mc.add_argument("--estimators", default="gmm1,gmm2,2sls")
    p_mc.add_argument("--replications", type=int)
    p_mc.add_argument("--seed", type=int, required=True)
    p_mc.add_argument("--workers", type=int)
    p_mc.add_argument("--out")
    p_mc.set_defaults(func=cmd_montecarlo)

    p_eff = sub.add_parser("effects", help="network multiplier analysis")
    p_eff.add_argument("effect", choices=["impulse", "marginal", "keyplayer"])
    p_eff.add_argument("--alpha-file", required=True,
                       help="two-column s,value table of the interaction function")
    p_eff.add_argument("--beta-file", help="two-column s,value table of a coefficient")
    p_eff.add_argument("--shock-file", help="two-column s,value table of the shock")
    _add_weight_args(p_eff)
    _add_operator_args(p_eff)
    p_eff.add_argument("--unit", type=int, default=0)
    p_eff.add_argument("--orders", type=int, default=5)
    p_eff.add_argument("--grid-count", type=int, default=99)
    p_eff.add_argument("--out")
    p_eff.set_defaults(func=cmd_effects)
    return parser


def _apply_config(parser, argv):
    """Pre-scan for --config and install its section as subcommand defaults."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, rest = probe.parse_known_args(argv)
    if known.config is None:
        return
    with open(known.config) as fh:
        config = json.load(fh)
    commands = [a for a in rest if not a.startswith("-")]
    for action in parser._subparsers._group_actions:
        for name, subparser in action.choices.items():
            section = config.get(name)
            if section and commands and commands[0] == name:
                keys = {k.replace("-", "_"): v for k, v in section.items()}
                subparser.set_defaults(**keys)
                for sub_action in subparser._actions:
                    if sub_action.dest in keys:
                        sub_action.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except NonStationaryDgpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except np.linalg.LinAlgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FnarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
