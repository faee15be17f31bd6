"""Emission observables, burst criteria, critical fractions, and scaling fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .couplings import CouplingMatrices, coupling_sum
from .errors import InvalidArgumentError, ThresholdNotReachedError
from .lattice import ExcitationPattern

# Instantaneous rate is undefined once essentially no excitation is left.
P_EXC_FLOOR = 1e-12


@dataclass(frozen=True)
class TimeSeries:
    """Sampled decay trajectory.

    gamma_inst = gamma_tot / (p_exc * gamma0); the series is truncated at
    the first sample where p_exc falls below P_EXC_FLOOR.
    """

    t: np.ndarray
    p_exc: np.ndarray
    gamma_tot: np.ndarray
    gamma_inst: np.ndarray
    n_atoms: int
    gamma0: float = 1.0
    p_exc_stderr: np.ndarray | None = None
    gamma_tot_stderr: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.t)


def make_timeseries(
    t,
    p_exc,
    gamma_tot,
    n_atoms: int,
    gamma0: float = 1.0,
    p_exc_stderr=None,
    gamma_tot_stderr=None,
) -> TimeSeries:
    """Assemble a TimeSeries, deriving gamma_inst and truncating at the floor."""
    t = np.asarray(t, dtype=float)
    p = np.asarray(p_exc, dtype=float)
    g = np.asarray(gamma_tot, dtype=float)
    if not (len(t) == len(p) == len(g)):
        raise InvalidArgumentError("time series arrays must have equal length")
    if len(t) == 0:
        raise InvalidArgumentError("time series must be nonempty")
    if np.any(np.diff(t) <= 0):
        raise InvalidArgumentError("sample times must be strictly increasing")

    dead = np.nonzero(p < P_EXC_FLOOR)[0]
    stop = int(dead[0]) if dead.size else len(t)
    stop = max(stop, 1)
    sl = slice(0, stop)
    t, p, g = t[sl], p[sl], g[sl]
    if p_exc_stderr is not None:
        p_exc_stderr = np.asarray(p_exc_stderr, dtype=float)[sl]
    if gamma_tot_stderr is not None:
        gamma_tot_stderr = np.asarray(gamma_tot_stderr, dtype=float)[sl]
    return TimeSeries(
        t, p, g, g / (p * gamma0), n_atoms, gamma0, p_exc_stderr, gamma_tot_stderr
    )


@dataclass(frozen=True)
class BurstReport:
    """Peak metrics plus the analytic zero-time criteria for one run."""

    peak_value: float  # max gamma_tot / (N gamma0)
    peak_time: float
    is_burst: bool
    p_sub: float | None
    gamma_dot0: float  # d(gamma_tot)/dt at t = 0, units gamma0^2
    n_exc_crit: float | None = None
    eta_crit: float | None = None


@dataclass(frozen=True)
class PowerLawFit:
    """Least-squares fit of peak ~ prefactor * N**beta."""

    beta: float
    prefactor: float
    residual: float


def gamma_tot(state, c: CouplingMatrices) -> float:
    """Total emission rate of a correlator state.

    gamma0 * sum of populations plus the Gamma-weighted sum of pair
    coherences; the imaginary residue of the symmetrized sum is dropped.
    """
    total = c.gamma0 * float(np.sum(state.pop))
    if getattr(state, "coh", None) is not None:
        off = c.Gamma * state.coh
        total += float((off.sum() - np.trace(off)).real)
    return total


def gamma_dot0(pattern: ExcitationPattern, c: CouplingMatrices) -> float:
    """Initial slope of the emission rate for an incoherent pattern.

    Exact for any incoherent product state: two-photon correlations at
    zero time are fully captured by pair correlators.
    """
    if pattern.n_sites != c.n:
        raise InvalidArgumentError("pattern size does not match couplings")
    e = pattern.indicator()
    gg = c.Gamma * c.Gamma.T
    np.fill_diagonal(gg, 0.0)
    pair = 2.0 * np.outer(e, e) - 0.5 * (e[:, None] + e[None, :])
    return float(-c.gamma0**2 * e.sum() + (gg * pair).sum())


def avg_gamma_dot0_partial(n_sites: int, n_exc: int, c: CouplingMatrices) -> float:
    """Mean initial slope over all excitation patterns of n_exc emitters."""
    if n_sites != c.n:
        raise InvalidArgumentError("n_sites does not match couplings")
    if n_exc < 0 or n_exc > n_sites:
        raise InvalidArgumentError("n_exc out of range")
    n_de = n_sites - n_exc
    s = coupling_sum(c) * c.gamma0**2
    weight = 1.0 - 3.0 * n_de / n_sites
    if n_sites > 1:
        weight += 2.0 * n_de * (n_de - 1) / (n_sites * (n_sites - 1))
    return float(-n_exc * c.gamma0**2 + weight * s)


def avg_gamma_dot0_holes(n_sites: int, n_filled: int, c: CouplingMatrices) -> float:
    """Mean initial slope over all placements of n_filled inverted emitters.

    Empty sites are absent from the dynamics; each placement behaves as a
    fully inverted system of the occupied sites only.
    """
    if n_sites != c.n:
        raise InvalidArgumentError("n_sites does not match couplings")
    if n_filled < 0 or n_filled > n_sites:
        raise InvalidArgumentError("n_filled out of range")
    n_hol = n_sites - n_filled
    s = coupling_sum(c) * c.gamma0**2
    weight = 1.0 - 2.0 * n_hol / n_sites
    if n_sites > 1:
        weight += n_hol * (n_hol - 1) / (n_sites * (n_sites - 1))
    return float(-n_filled * c.gamma0**2 + weight * s)


def critical_excitation_fraction(c: CouplingMatrices) -> float:
    """Excitation fraction above which the average initial slope is positive."""
    n = c.n
    if n < 2:
        raise InvalidArgumentError("critical fraction needs at least two emitters")
    s = coupling_sum(c)
    if s <= 0:
        return float("inf")
    return 0.5 + 0.5 / n + (n - 1) / (2.0 * s)


def critical_filling_fraction(c: CouplingMatrices) -> float:
    """Filling fraction above which the average initial slope is positive."""
    n = c.n
    if n < 2:
        raise InvalidArgumentError("critical fraction needs at least two emitters")
    s = coupling_sum(c)
    if s <= 0:
        return float("inf")
    return 1.0 / n + (n - 1) / s


def detect_peak(series: TimeSeries, stderr_margin: float = 0.0) -> tuple[float, float, bool]:
    """Peak of gamma_tot/(N gamma0) and whether it constitutes a burst.

    A burst requires the maximum to occur at t > 0 and to exceed the
    zero-time value strictly. For noisy (ensemble-averaged stochastic)
    series pass stderr_margin > 0 to demand an excess of that many
    standard errors at the peak.
    """
    if len(series) == 0:
        raise InvalidArgumentError("empty series")
    norm = series.n_atoms * series.gamma0
    g = series.gamma_tot / norm
    k = int(np.argmax(g))
    peak_value = float(g[k])
    peak_time = float(series.t[k])
    margin = 0.0
    if stderr_margin > 0 and series.gamma_tot_stderr is not None:
        margin = stderr_margin * float(series.gamma_tot_stderr[k]) / norm
    is_burst = peak_time > 0.0 and peak_value > float(g[0]) + margin
    return peak_value, peak_time, is_burst


def subradiant_population(series: TimeSeries, threshold: float = 0.1) -> float:
    """Excitation left when the instantaneous rate first drops below threshold.

    The crossing must happen after gamma_inst has been at or above the
    threshold; the returned p_exc is linearly interpolated between the
    straddling samples.
    """
    g = series.gamma_inst
    above = np.nonzero(g >= threshold)[0]
    if above.size == 0:
        raise ThresholdNotReachedError(
            f"gamma_inst never reached the threshold {threshold}"
        )
    start = int(above[0])
    below = np.nonzero(g[start:] < threshold)[0]
    if below.size == 0:
        raise ThresholdNotReachedError(
            f"gamma_inst never fell below {threshold}; extend t_max"
        )
    k = start + int(below[0])  # first sample strictly below, k >= 1
    frac = (threshold - g[k - 1]) / (g[k] - g[k - 1])
    return float(series.p_exc[k - 1] + frac * (series.p_exc[k] - series.p_exc[k - 1]))


def fit_power_law(sizes, peaks) -> PowerLawFit:
    """Straight-line fit in log-log: peak = prefactor * N**beta."""
    sizes = np.asarray(sizes, dtype=float)
    peaks = np.asarray(peaks, dtype=float)
    if sizes.size < 3:
        raise InvalidArgumentError("power-law fit needs at least three points")
    if np.any(sizes <= 0) or np.any(peaks <= 0):
        raise InvalidArgumentError("power-law fit needs positive sizes and peaks")
    x, y = np.log(sizes), np.log(peaks)
    (beta, logc), res = np.polyfit(x, y, 1), 0.0
    res = float(np.sum((y - (beta * x + logc)) ** 2))
    return PowerLawFit(float(beta), float(np.exp(logc)), res)


def build_burst_report(
    series: TimeSeries,
    c: CouplingMatrices,
    pattern: ExcitationPattern | None = None,
    stderr_margin: float = 0.0,
    p_sub_threshold: float = 0.1,
) -> BurstReport:
    """Assemble the peak metrics and analytic criteria for one trajectory."""
    peak_value, peak_time, is_burst = detect_peak(series, stderr_margin)
    try:
        p_sub = subradiant_population(series, p_sub_threshold)
    except ThresholdNotReachedError:
        p_sub = None
    gdot0 = gamma_dot0(pattern, c) if pattern is not None else float("nan")
    n_crit = critical_excitation_fraction(c) if c.n >= 2 else None
    eta_crit = critical_filling_fraction(c) if c.n >= 2 else None
    return BurstReport(peak_value, peak_time, is_burst, p_sub, gdot0, n_crit, eta_crit)
