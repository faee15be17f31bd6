"""Configuration-driven ensemble runs and parameter sweeps.

A run is specified by a RunConfig; stochastic ingredients (excitation
patterns, hole placements, position disorder, trajectory noise) draw
from per-sample streams spawned off the master seed, so any ensemble is
reproducible bit for bit regardless of worker count.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import cumulant, exact, lattice, observables
from .couplings import CouplingMatrices, coupling_matrices
from .errors import ConfigError, PartialEnsembleError, UnphysicalDynamicsWarning
from .observables import BurstReport, TimeSeries

GEOMETRY_TYPES = ("chain", "square")
INITIAL_MODES = ("full", "partial", "filling")
METHOD_KINDS = ("cumulant", "mcwf", "lindblad")


@dataclass(frozen=True)
class RunConfig:
    """Validated description of one simulation (or one ensemble of samples)."""

    geometry_type: str = "chain"
    n: int = 10
    a: float = 0.1
    dipole: tuple = (0.0, 0.0, 1.0)
    initial_mode: str = "full"
    n_exc: int | None = None
    eta: float | None = None
    sigma: float = 0.0
    n_samples: int | None = None
    method_kind: str = "cumulant"
    order: int = 2
    n_traj: int = 1000
    t_max: float = 10.0
    sample_dt: float = 1e-2
    rtol: float = 1e-6
    atol: float = 1e-9
    seed: int = 0
    output_dir: str = "out"
    schema_version: int = 1

    def validate(self) -> "RunConfig":
        if self.geometry_type not in GEOMETRY_TYPES:
            raise ConfigError(f"must be one of {GEOMETRY_TYPES}", "/geometry/type")
        if self.n < 1:
            raise ConfigError("must be >= 1", "/geometry/n")
        if self.a <= 0:
            raise ConfigError("spacing must be positive", "/geometry/a")
        if self.initial_mode not in INITIAL_MODES:
            raise ConfigError(f"must be one of {INITIAL_MODES}", "/initial/mode")
        if self.initial_mode == "partial":
            if self.n_exc is None:
                raise ConfigError("required for partial initial mode", "/initial/n_exc")
            if not 0 <= self.n_exc <= self.n:
                raise ConfigError("must lie in [0, n]", "/initial/n_exc")
        if self.initial_mode == "filling":
            if self.eta is None:
                raise ConfigError("required for filling initial mode", "/initial/eta")
            if not 0 < self.eta <= 1:
                raise ConfigError("must lie in (0, 1]", "/initial/eta")
        if self.sigma < 0:
            raise ConfigError("must be non-negative", "/disorder/sigma")
        if self.n_samples is not None and self.n_samples < 1:
            raise ConfigError("must be >= 1", "/disorder/n_samples")
        if self.method_kind not in METHOD_KINDS:
            raise ConfigError(f"must be one of {METHOD_KINDS}", "/method/kind")
        if self.method_kind == "cumulant" and self.order not in (1, 2, 3):
            raise ConfigError("order must be 1, 2 or 3", "/method/order")
        if self.method_kind == "mcwf" and self.n_traj < 1:
            raise ConfigError("must be >= 1", "/method/n_traj")
        if self.t_max <= 0:
            raise ConfigError("must be positive", "/integration/t_max")
        if self.sample_dt <= 0:
            raise ConfigError("must be positive", "/integration/sample_dt")
        if self.rtol <= 0 or self.atol <= 0:
            raise ConfigError("tolerances must be positive", "/integration")
        return self

    @property
    def samples(self) -> int:
        """Sample count; defaults to 100 whenever the run is stochastic."""
        if self.n_samples is not None:
            return self.n_samples
        stochastic = self.sigma > 0 or self.initial_mode in ("partial", "filling")
        return 100 if stochastic else 1


def serialize_config(config: RunConfig) -> dict:
    """Nested JSON form of a config; the CLI parser round-trips it."""
    out = {
        "schema_version": config.schema_version,
        "geometry": {"type": config.geometry_type, "n": config.n, "a": config.a},
        "dipole": list(config.dipole),
        "initial": {"mode": config.initial_mode},
        "disorder": {"sigma": config.sigma},
        "method": {"kind": config.method_kind, "order": config.order,
                   "n_traj": config.n_traj},
        "integration": {"t_max": config.t_max, "sample_dt": config.sample_dt,
                        "rtol": config.rtol, "atol": config.atol},
        "seed": config.seed,
        "output_dir": config.output_dir,
    }
    if config.n_exc is not None:
        out["initial"]["n_exc"] = config.n_exc
    if config.eta is not None:
        out["initial"]["eta"] = config.eta
    if config.n_samples is not None:
        out["disorder"]["n_samples"] = config.n_samples
    return out


def config_hash(config: RunConfig) -> str:
    payload = json.dumps(serialize_config(config), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class EnsembleResult:
    """Averaged series plus per-sample reports and the analytic criteria."""

    mean_series: TimeSeries
    sample_reports: list
    aggregate_report: BurstReport
    criteria: dict
    config: RunConfig
    n_samples: int

    @property
    def provenance(self) -> dict:
        from . import __version__

        return {
            "config_hash": config_hash(self.config),
            "seed": self.config.seed,
            "package_version": __version__,
        }


def _sample_streams(seed: int, sample_index: int):
    root = np.random.SeedSequence(seed, spawn_key=(sample_index,))
    return root.spawn(3)  # disorder, pattern, trajectory noise


def _build_system(config: RunConfig, sample_index: int):
    """Geometry, couplings and excitation pattern for one ensemble sample."""
    ss_disorder, ss_pattern, ss_traj = _sample_streams(config.seed, sample_index)
    build = lattice.build_chain if config.geometry_type == "chain" else lattice.build_square
    geom = build(config.n, config.a)

    if config.initial_mode == "filling":
        n_filled = int(round(config.eta * config.n))
        n_filled = max(n_filled, 1)
        holes = lattice.sample_hole_pattern(config.n, n_filled, ss_pattern)
        geom = lattice.remove_holes(geom, holes)
        pattern = lattice.full_excitation(geom.n_sites)
    elif config.initial_mode == "partial":
        pattern = lattice.sample_excitation_pattern(config.n, config.n_exc, ss_pattern)
    else:
        pattern = lattice.full_excitation(config.n)

    if config.sigma > 0:
        geom = lattice.apply_position_disorder(
            geom, lattice.DisorderSpec(config.sigma, ss_disorder)
        )
    c = coupling_matrices(geom, np.asarray(config.dipole))
    return geom, c, pattern, ss_traj


def run_single(config: RunConfig, sample_index: int = 0) -> tuple[TimeSeries, BurstReport]:
    """One realization: sample the randomness, build couplings, integrate."""
    config.validate()
    geom, c, pattern, ss_traj = _build_system(config, sample_index)

    if config.method_kind == "cumulant":
        if config.order == 3 and cumulant.order3_guard_applies(c.n, config.a):
            warnings.warn(
                "third-order dynamics for more than 100 emitters at spacings "
                "below a tenth of a wavelength are known to become unphysical",
                UnphysicalDynamicsWarning,
                stacklevel=2,
            )
        state = cumulant.init_state(pattern, config.order)
        series, _ = cumulant.integrate(
            state, c, config.t_max, config.sample_dt, config.rtol, config.atol
        )
        margin = 0.0
    elif config.method_kind == "mcwf":
        grid = np.arange(0.0, config.t_max + 0.5 * config.sample_dt, config.sample_dt)
        series = exact.mcwf_ensemble(
            pattern, c, grid, config.n_traj, ss_traj, rtol=config.rtol, atol=config.atol
        )
        margin = 2.0
    else:
        grid = np.arange(0.0, config.t_max + 0.5 * config.sample_dt, config.sample_dt)
        series = exact.lindblad_dense(
            pattern, c, grid, rtol=config.rtol, atol=config.atol
        )
        margin = 0.0

    report = observables.build_burst_report(series, c, pattern, stderr_margin=margin)
    return series, report


def _run_indexed(args):
    config, idx = args
    try:
        return idx, run_single(config, idx), None
    except Exception as err:  # noqa: BLE001 - reported per sample index
        return idx, None, err


def reference_couplings(config: RunConfig) -> CouplingMatrices:
    """Couplings of the ideal (full, undisordered) lattice for the criteria."""
    build = lattice.build_chain if config.geometry_type == "chain" else lattice.build_square
    return coupling_matrices(build(config.n, config.a), np.asarray(config.dipole))


def analytic_criteria(config: RunConfig) -> dict:
    """Zero-time slope and critical fractions on the ideal lattice."""
    c = reference_couplings(config)
    out = {}
    if config.initial_mode == "partial":
        out["gamma_dot0_avg"] = observables.avg_gamma_dot0_partial(
            config.n, config.n_exc, c
        )
    elif config.initial_mode == "filling":
        n_filled = max(int(round(config.eta * config.n)), 1)
        out["gamma_dot0_avg"] = observables.avg_gamma_dot0_holes(config.n, n_filled, c)
    else:
        out["gamma_dot0_avg"] = observables.gamma_dot0(
            lattice.full_excitation(config.n), c
        )
    if config.n >= 2:
        out["n_exc_crit"] = observables.critical_excitation_fraction(c)
        out["eta_crit"] = observables.critical_filling_fraction(c)
    else:
        out["n_exc_crit"] = out["eta_crit"] = None
    return out


def run_ensemble(
    config: RunConfig, threads: int = 1, fail_fast: bool = True
) -> EnsembleResult:
    """Average an ensemble of independent samples of one configuration.

    Samples are reduced in index order, so the result does not depend on
    the worker count. The aggregate burst report is computed from the
    averaged series; the instantaneous rate of the mean is the ratio of
    the mean rate to the mean population, not the mean of ratios.
    """
    config.validate()
    n_samples = config.samples
    tasks = [(config, idx) for idx in range(n_samples)]
    if threads > 1 and n_samples > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(_run_indexed, tasks))
    else:
        raw = [_run_indexed(t) for t in tasks]
    raw.sort(key=lambda r: r[0])

    failures = {idx: err for idx, _, err in raw if err is not None}
    if failures and fail_fast:
        raise PartialEnsembleError(failures) from next(iter(failures.values()))
    raw = [r for r in raw if r[2] is None]
    if failures and not raw:
        raise PartialEnsembleError(failures)

    runs = [payload for _, payload, _ in raw]
    length = min(len(series.t) for series, _ in runs)
    t = runs[0][0].t[:length]
    p_stack = np.stack([series.p_exc[:length] for series, _ in runs])
    g_stack = np.stack([series.gamma_tot[:length] for series, _ in runs])
    n_runs = len(runs)
    p_mean = p_stack.mean(axis=0)
    g_mean = g_stack.mean(axis=0)
    if n_runs > 1:
        p_err = p_stack.std(axis=0, ddof=1) / np.sqrt(n_runs)
        g_err = g_stack.std(axis=0, ddof=1) / np.sqrt(n_runs)
    else:
        series0 = runs[0][0]
        p_err = (
            series0.p_exc_stderr[:length]
            if series0.p_exc_stderr is not None
            else np.zeros(length)
        )
        g_err = (
            series0.gamma_tot_stderr[:length]
            if series0.gamma_tot_stderr is not None
            else np.zeros(length)
        )

    n_atoms = runs[0][0].n_atoms
    mean_series = observables.make_timeseries(
        t, p_mean, g_mean, n_atoms, runs[0][0].gamma0, p_err, g_err
    )
    margin = 2.0 if config.method_kind == "mcwf" else 0.0
    criteria = analytic_criteria(config)
    ref = reference_couplings(config)
    aggregate = observables.build_burst_report(mean_series, ref, None, margin)
    aggregate = replace(aggregate, gamma_dot0=criteria["gamma_dot0_avg"])
    result = EnsembleResult(
        mean_series, [rep for _, rep in runs], aggregate, criteria, config, n_runs
    )
    if failures:
        # partial result: surface the failed indices, carrying what succeeded
        error = PartialEnsembleError(failures)
        error.result = result
        raise error
    return result


SWEEP_AXES = ("N", "a", "n_exc", "eta", "sigma", "order")


def _apply_axis(config: RunConfig, axis: str, value) -> RunConfig:
    if axis == "N":
        return replace(config, n=int(value))
    if axis == "a":
        return replace(config, a=float(value))
    if axis == "n_exc":
        return replace(config, initial_mode="partial", n_exc=int(value))
    if axis == "eta":
        return replace(config, initial_mode="filling", eta=float(value))
    if axis == "sigma":
        return replace(config, sigma=float(value))
    if axis == "order":
        return replace(config, method_kind="cumulant", order=int(value))
    raise ConfigError(f"unknown sweep axis {axis!r}; pick from {SWEEP_AXES}")


@dataclass
class SweepResult:
    points: list = field(default_factory=list)  # (coords dict, EnsembleResult)

    def peaks_over(self, axis: str):
        """(axis values, aggregate peak values), sorted by axis value."""
        pairs = sorted(
            (coords[axis], res.aggregate_report.peak_value)
            for coords, res in self.points
        )
        return [v for v, _ in pairs], [p for _, p in pairs]


def run_sweep(config: RunConfig, axes: dict, threads: int = 1) -> SweepResult:
    """Cartesian product over the requested axes, one ensemble per point."""
    for axis in axes:
        if axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {axis!r}; pick from {SWEEP_AXES}")
    if any(len(v) == 0 for v in axes.values()):
        raise ConfigError("sweep axes must be nonempty")
    names = list(axes)
    result = SweepResult()
    for values in itertools.product(*(axes[name] for name in names)):
        point = config
        coords = {}
        for name, value in zip(names, values):
            point = _apply_axis(point, name, value)
            coords[name] = value
        result.points.append((coords, run_ensemble(point, threads=threads)))
    return result
