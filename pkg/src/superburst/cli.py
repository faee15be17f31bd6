"""Command-line entry point: JSON configs, runs, sweeps, and CSV outputs."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__, ensemble, observables
from .couplings import coupling_sum, write_couplings_csv
from .ensemble import (
    EnsembleResult,
    RunConfig,
    SweepResult,
    config_hash,
    serialize_config,
)
from .errors import (
    CapacityError,
    ConfigError,
    InvalidArgumentError,
    SuperburstError,
)

TIMESERIES_HEADER = ["t", "p_exc", "gamma_tot", "gamma_inst", "p_exc_stderr", "gamma_tot_stderr"]
SUMMARY_HEADER = [
    "N", "a", "mode", "param", "order", "peak_value", "peak_time", "is_burst",
    "p_sub", "gamma_dot0", "n_exc_crit", "eta_crit", "beta",
]

_SCHEMA = {
    "schema_version": int,
    "geometry": {"type": str, "n": int, "a": float},
    "dipole": list,
    "initial": {"mode": str, "n_exc": int, "eta": float},
    "disorder": {"sigma": float, "n_samples": int},
    "method": {"kind": str, "order": int, "n_traj": int},
    "integration": {"t_max": float, "sample_dt": float, "rtol": float, "atol": float},
    "seed": int,
    "output_dir": str,
}


def _coerce(value, typ, pointer):
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if typ is str and isinstance(value, str):
        return value
    if typ is list and isinstance(value, list):
        return value
    raise ConfigError(f"expected {typ.__name__}, got {type(value).__name__}", pointer)


def parse_config(source=None, overrides: dict | None = None) -> RunConfig:
    """Validate a JSON config (path or dict) and fill defaults.

    Unknown keys are rejected; error messages carry the JSON pointer of
    the offending field. ``overrides`` maps RunConfig field names to
    values and wins over the file.
    """
    if source is None:
        data = {}
    elif isinstance(source, dict):
        data = source
    else:
        try:
            with open(source) as fh:
                data = json.load(fh)
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {source}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object", "/")

    fields: dict = {}
    for key, value in data.items():
        if key not in _SCHEMA:
            raise ConfigError("unknown key", f"/{key}")
        spec = _SCHEMA[key]
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                raise ConfigError("expected an object", f"/{key}")
            for sub, subval in value.items():
                if sub not in spec:
                    raise ConfigError("unknown key", f"/{key}/{sub}")
                spec_t = spec[sub]
                coerced = _coerce(subval, spec_t, f"/{key}/{sub}")
                fields[(key, sub)] = coerced
        else:
            fields[(key,)] = _coerce(value, spec, f"/{key}")

    dipole = fields.get(("dipole",), [0.0, 0.0, 1.0])
    if len(dipole) != 3 or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in dipole
    ):
        raise ConfigError("expected three numbers", "/dipole")

    config = RunConfig(
        schema_version=fields.get(("schema_version",), 1),
        geometry_type=fields.get(("geometry", "type"), "chain"),
        n=fields.get(("geometry", "n"), 10),
        a=fields.get(("geometry", "a"), 0.1),
        dipole=tuple(float(x) for x in dipole),
        initial_mode=fields.get(("initial", "mode"), "full"),
        n_exc=fields.get(("initial", "n_exc")),
        eta=fields.get(("initial", "eta")),
        sigma=fields.get(("disorder", "sigma"), 0.0),
        n_samples=fields.get(("disorder", "n_samples")),
        method_kind=fields.get(("method", "kind"), "cumulant"),
        order=fields.get(("method", "order"), 2),
        n_traj=fields.get(("method", "n_traj"), 1000),
        t_max=fields.get(("integration", "t_max"), 10.0),
        sample_dt=fields.get(("integration", "sample_dt"), 1e-2),
        rtol=fields.get(("integration", "rtol"), 1e-6),
        atol=fields.get(("integration", "atol"), 1e-9),
        seed=fields.get(("seed",), 0),
        output_dir=fields.get(("output_dir",), "out"),
    )
    if overrides:
        kwargs = {k: v for k, v in overrides.items() if v is not None}
        if kwargs:
            config = replace(config, **kwargs)
    return config.validate()


def _fmt(x) -> str:
    """Shortest decimal round-trip representation; empty for missing."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return ""
    return repr(x)


def _atomic_write(path: str, write_body) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        write_body(fh)
    os.replace(tmp, path)


def write_timeseries_csv(series, path: str) -> None:
    def body(fh):
        w = csv.writer(fh)
        w.writerow(TIMESERIES_HEADER)
        has_err = series.p_exc_stderr is not None and np.any(series.p_exc_stderr > 0)
        for k in range(len(series.t)):
            row = [
                _fmt(series.t[k]),
                _fmt(series.p_exc[k]),
                _fmt(series.gamma_tot[k]),
                _fmt(series.gamma_inst[k]),
            ]
            if has_err:
                row += [_fmt(series.p_exc_stderr[k]), _fmt(series.gamma_tot_stderr[k])]
            else:
                row += ["", ""]
            w.writerow(row)

    _atomic_write(path, body)


def _summary_param(config: RunConfig):
    if config.initial_mode == "partial":
        return config.n_exc
    if config.initial_mode == "filling":
        return config.eta
    if config.sigma > 0:
        return config.sigma
    return None


def _order_label(config: RunConfig):
    return config.order if config.method_kind == "cumulant" else config.method_kind


def summary_row(config: RunConfig, report, beta=None) -> list:
    return [
        _fmt(config.n),
        _fmt(config.a),
        config.initial_mode,
        _fmt(_summary_param(config)),
        str(_order_label(config)),
        _fmt(report.peak_value),
        _fmt(report.peak_time),
        _fmt(report.is_burst),
        _fmt(report.p_sub),
        _fmt(report.gamma_dot0),
        _fmt(report.n_exc_crit),
        _fmt(report.eta_crit),
        _fmt(beta),
    ]


def write_summary_csv(rows: list, path: str) -> None:
    def body(fh):
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        w.writerows(rows)

    _atomic_write(path, body)


def write_provenance(config: RunConfig, path: str) -> None:
    def body(fh):
        json.dump(
            {
                "config": serialize_config(config),
                "config_hash": config_hash(config),
                "seed": config.seed,
                "package_version": __version__,
                "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")

    _atomic_write(path, body)


def _emit_result(config: RunConfig, result: EnsembleResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_timeseries_csv(result.mean_series, os.path.join(out_dir, "timeseries.csv"))
    write_summary_csv(
        [summary_row(config, result.aggregate_report)],
        os.path.join(out_dir, "summary.csv"),
    )
    write_provenance(config, os.path.join(out_dir, "provenance.json"))


def _sweep_betas(sweep: SweepResult) -> dict:
    """Power-law exponent per group of fixed non-N coordinates, keyed by id."""
    betas = {}
    groups: dict = {}
    for coords, res in sweep.points:
        if "N" not in coords:
            continue
        key = tuple(sorted((k, v) for k, v in coords.items() if k != "N"))
        groups.setdefault(key, []).append((coords["N"], res, id(res)))
    for key, members in groups.items():
        if len(members) < 3:
            continue
        sizes = [m[0] for m in members]
        peaks = [m[1].aggregate_report.peak_value for m in members]
        if any(p <= 0 for p in peaks):
            continue
        fit = observables.fit_power_law(sizes, peaks)
        for _, _, rid in members:
            betas[rid] = fit.beta
    return betas


def _emit_sweep(config: RunConfig, sweep: SweepResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    betas = _sweep_betas(sweep)
    rows = [
        summary_row(res.config, res.aggregate_report, betas.get(id(res)))
        for _, res in sweep.points
    ]
    write_summary_csv(rows, os.path.join(out_dir, "summary.csv"))
    for k, (coords, res) in enumerate(sweep.points):
        tag = "_".join(f"{name}={value}" for name, value in coords.items())
        write_timeseries_csv(
            res.mean_series, os.path.join(out_dir, f"timeseries_{k:04d}_{tag}.csv")
        )
    write_provenance(config, os.path.join(out_dir, "provenance.json"))


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("SUPERBURST_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as err:
            raise ConfigError("SUPERBURST_THREADS must be an integer") from err
    return 1


def _add_geometry_args(p):
    p.add_argument("--geometry", choices=ensemble.GEOMETRY_TYPES)
    p.add_argument("--n", type=int)
    p.add_argument("--a", type=float)
    p.add_argument("--dipole", type=str, help="comma-separated 3-vector, e.g. 0,0,1")


def _add_run_args(p):
    _add_geometry_args(p)
    p.add_argument("--config", type=str)
    p.add_argument("--mode", choices=ensemble.INITIAL_MODES)
    p.add_argument("--n-exc", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--method", choices=ensemble.METHOD_KINDS)
    p.add_argument("--order", type=int)
    p.add_argument("--n-traj", type=int)
    p.add_argument("--t-max", type=float)
    p.add_argument("--sample-dt", type=float)
    p.add_argument("--rtol", type=float)
    p.add_argument("--atol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=str)
    p.add_argument("--threads", type=int)


def _overrides_from(args) -> dict:
    dipole = None
    if args.dipole is not None:
        parts = args.dipole.split(",")
        if len(parts) != 3:
            raise ConfigError("expected three comma-separated numbers", "/dipole")
        dipole = tuple(float(x) for x in parts)
    return {
        "geometry_type": args.geometry,
        "n": args.n,
        "a": args.a,
        "dipole": dipole,
        "initial_mode": args.mode,
        "n_exc": args.n_exc,
        "eta": args.eta,
        "sigma": args.sigma,
        "n_samples": args.n_samples,
        "method_kind": args.method,
        "order": args.order,
        "n_traj": args.n_traj,
        "t_max": args.t_max,
        "sample_dt": args.sample_dt,
        "rtol": args.rtol,
        "atol": args.atol,
        "seed": args.seed,
        "output_dir": args.out,
    }


def _parse_axis(spec: str):
    if "=" not in spec:
        raise ConfigError(f"axis must look like name=v1,v2,... got {spec!r}")
    name, _, values = spec.partition("=")
    name = name.strip()
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if not vals:
        raise ConfigError(f"axis {name!r} has no values")
    caster = int if name in ("N", "n_exc", "order") else float
    return name, [caster(v) for v in vals]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="superburst",
        description="Collective decay of ordered emitter arrays: truncated-"
        "correlator dynamics, exact small-system solvers, burst criteria.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="integrate one configuration (or ensemble)")
    _add_run_args(p_run)

    p_sweep = sub.add_parser("sweep", help="Cartesian sweep over parameter axes")
    _add_run_args(p_sweep)
    p_sweep.add_argument(
        "--axis", action="append", default=[], metavar="NAME=V1,V2,...",
        help="sweep axis; repeatable; names: " + ", ".join(ensemble.SWEEP_AXES),
    )

    p_crit = sub.add_parser("criteria", help="analytic burst criteria, no integration")
    _add_geometry_args(p_crit)
    p_crit.add_argument("--n-exc", type=int, help="also report the averaged slope "
                        "for this many randomly excited emitters")
    p_crit.add_argument("--eta", type=float, help="also report the averaged slope "
                        "at this filling fraction")

    p_coup = sub.add_parser("couplings", help="dump the coupling matrices as CSV")
    _add_geometry_args(p_coup)
    p_coup.add_argument("--out", type=str, default="couplings.csv")

    p_oracle = sub.add_parser("oracle", help="run an exact small-system solver")
    _add_run_args(p_oracle)
    group = p_oracle.add_mutually_exclusive_group(required=True)
    group.add_argument("--mcwf", type=int, metavar="N_TRAJ")
    group.add_argument("--lindblad", action="store_true")
    return parser


def _geometry_couplings(args):
    overrides = {
        "geometry_type": args.geometry,
        "n": args.n,
        "a": args.a,
    }
    if args.dipole is not None:
        overrides["dipole"] = tuple(float(x) for x in args.dipole.split(","))
    config = parse_config(None, overrides)
    return config, ensemble.reference_couplings(config)


def _cmd_run(args) -> int:
    config = parse_config(args.config, _overrides_from(args))
    result = ensemble.run_ensemble(config, threads=_threads(args))
    _emit_result(config, result, config.output_dir)
    print(f"wrote {config.output_dir}/timeseries.csv, summary.csv, provenance.json")
    return 0


def _cmd_sweep(args) -> int:
    if not args.axis:
        raise ConfigError("sweep needs at least one --axis")
    config = parse_config(args.config, _overrides_from(args))
    axes = dict(_parse_axis(spec) for spec in args.axis)
    sweep = ensemble.run_sweep(config, axes, threads=_threads(args))
    _emit_sweep(config, sweep, config.output_dir)
    print(f"wrote {config.output_dir}/summary.csv ({len(sweep.points)} grid points)")
    return 0


def _cmd_criteria(args) -> int:
    config, c = _geometry_couplings(args)
    crit = ensemble.analytic_criteria(config)
    payload = {
        "N": config.n,
        "a": config.a,
        "geometry": config.geometry_type,
        "coupling_sum": coupling_sum(c),
        "gamma_dot0_full_inversion": crit["gamma_dot0_avg"],
        "n_exc_crit": crit["n_exc_crit"],
        "eta_crit": crit["eta_crit"],
    }
    if args.n_exc is not None:
        payload["gamma_dot0_avg_partial"] = observables.avg_gamma_dot0_partial(
            config.n, args.n_exc, c
        )
    if args.eta is not None:
        n_filled = max(int(round(args.eta * config.n)), 1)
        payload["gamma_dot0_avg_filling"] = observables.avg_gamma_dot0_holes(
            config.n, n_filled, c
        )
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_couplings(args) -> int:
    _, c = _geometry_couplings(args)
    write_couplings_csv(c, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_oracle(args) -> int:
    method = (
        {"method_kind": "mcwf", "n_traj": args.mcwf}
        if args.mcwf
        else {"method_kind": "lindblad"}
    )
    config = parse_config(args.config, {**_overrides_from(args), **method})
    result = ensemble.run_ensemble(config, threads=_threads(args))
    _emit_result(config, result, config.output_dir)
    print(f"wrote {config.output_dir}/timeseries.csv, summary.csv, provenance.json")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "criteria": _cmd_criteria,
        "couplings": _cmd_couplings,
        "oracle": _cmd_oracle,
    }
    validation = (ConfigError, InvalidArgumentError, CapacityError)
    try:
        return handlers[args.command](args)
    except validation as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SuperburstError as err:
        if isinstance(err.__cause__, validation):
            print(f"error: {err.__cause__}", file=sys.stderr)
            return 1
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
