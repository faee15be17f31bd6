"""Exact open-system dynamics for small emitter numbers.

Two independent routes are provided for benchmarking the truncated
dynamics: stochastic quantum trajectories on the 2^N amplitude vector
(jump/no-jump unravelling, N up to ~14) and direct propagation of the
vectorized density matrix (N up to 7).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .couplings import CouplingMatrices
from .errors import (
    CapacityError,
    InvalidArgumentError,
    InvalidCouplingsError,
    StiffnessError,
)
from .lattice import ExcitationPattern, as_rng
from .observables import TimeSeries, make_timeseries

MCWF_CAP = 14
LINDBLAD_CAP = 7

_CHUNK = 32  # trajectories per reduction chunk; fixed so results do not
             # depend on the worker count


@dataclass(frozen=True)
class PureState:
    """Amplitude vector over the 2^N product basis (bit i = site i excited)."""

    amplitudes: np.ndarray

    @property
    def norm2(self) -> float:
        return float(np.real(np.vdot(self.amplitudes, self.amplitudes)))

    @classmethod
    def from_pattern(cls, pattern: ExcitationPattern) -> "PureState":
        dim = 1 << pattern.n_sites
        amp = np.zeros(dim, dtype=complex)
        amp[sum(1 << i for i in pattern.excited)] = 1.0
        return cls(amp)


@dataclass(frozen=True)
class JumpOperatorSet:
    """Spectral decomposition of the dissipative coupling matrix.

    Row k of ``modes`` is the collective mode with decay rate
    ``eigenrates[k]``; the collective lowering operator is
    sqrt(rate) * sum_i modes[k, i] * ge_i.
    """

    eigenrates: np.ndarray
    modes: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.modes.T * self.eigenrates) @ self.modes


def diagonalize_gamma(c: CouplingMatrices) -> JumpOperatorSet:
    """Decompose Gamma into orthogonal decay channels.

    Rates below -1e-6 signal a broken propagator and raise; tiny negative
    rates from floating-point noise are clipped to zero.
    """
    if not np.allclose(c.Gamma, c.Gamma.T, atol=1e-12):
        raise InvalidCouplingsError("Gamma must be symmetric")
    rates, vectors = np.linalg.eigh(c.Gamma)
    if rates.min() < -1e-6:
        raise InvalidCouplingsError(
            f"negative collective decay rate {rates.min():.3e}; couplings are unphysical"
        )
    rates = np.clip(rates, 0.0, None)
    order = np.argsort(-rates, kind="stable")
    return JumpOperatorSet(rates[order], vectors[:, order].T)


def _transfer_matrix(n: int, coeff: np.ndarray) -> sp.csr_matrix:
    """Sparse sum_ij coeff[i,j] * eg_i ge_j on the 2^n bit basis."""
    dim = 1 << n
    states = np.arange(dim)
    rows, cols, data = [], [], []
    for j in range(n):
        src = states[(states >> j) & 1 == 1]
        for i in range(n):
            if coeff[i, j] == 0:
                continue
            if i == j:
                rows.append(src)
                cols.append(src)
                data.append(np.full(src.size, coeff[i, j]))
            else:
                ok = src[(src >> i) & 1 == 0]
                rows.append(ok - (1 << j) + (1 << i))
                cols.append(ok)
                data.append(np.full(ok.size, coeff[i, j]))
    if not rows:
        return sp.csr_matrix((dim, dim), dtype=complex)
    return sp.csr_matrix(
        (np.concatenate(data).astype(complex),
         (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    )


def _lowering_matrix(n: int, weights: np.ndarray) -> sp.csr_matrix:
    """Sparse sum_i weights[i] * ge_i."""
    dim = 1 << n
    states = np.arange(dim)
    rows, cols, data = [], [], []
    for i in range(n):
        if weights[i] == 0:
            continue
        src = states[(states >> i) & 1 == 1]
        rows.append(src - (1 << i))
        cols.append(src)
        data.append(np.full(src.size, weights[i]))
    if not rows:
        return sp.csr_matrix((dim, dim), dtype=complex)
    return sp.csr_matrix(
        (np.concatenate(data).astype(complex),
         (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    )


def _mcwf_operators(c: CouplingMatrices):
    n = c.n
    k_eff = c.J - 0.5j * c.Gamma  # diagonal: -i gamma0 / 2 (J_ii = 0)
    heff = _transfer_matrix(n, k_eff)
    jops = diagonalize_gamma(c)
    cops = [
        _lowering_matrix(n, np.sqrt(rate) * jops.modes[k])
        for k, rate in enumerate(jops.eigenrates)
        if rate > 0
    ]
    gop = _transfer_matrix(n, c.Gamma.astype(complex))  # = sum_k ck^dag ck
    weights = np.array([bin(s).count("1") for s in range(1 << n)], dtype=float)
    return heff, cops, gop, weights


def _observe(Y: np.ndarray, gop, weights):
    """p_exc and gamma_tot for each state column, normalized per column."""
    norms2 = np.abs(Y) ** 2
    total = norms2.sum(axis=0)
    p = (weights @ norms2) / total
    g = np.real(np.conj(Y) * (gop @ Y)).sum(axis=0)
    return p, g / total


def _run_trajectory(psi0, heff, cops, gop, weights, t_grid, rng, rtol, atol):
    dim = psi0.size
    p_out = np.empty(len(t_grid))
    g_out = np.empty(len(t_grid))

    def deriv(t, y):
        return -1j * (heff @ y)

    psi = psi0.astype(complex)
    t0 = 0.0
    idx = 0
    threshold = rng.random()
    while idx < len(t_grid):
        def crossing(t, y, thr=threshold):
            return float(np.real(np.vdot(y, y)) - thr)

        crossing.terminal = True
        crossing.direction = -1
        sol = solve_ivp(
            deriv,
            (t0, t_grid[-1]),
            psi,
            method="RK45",
            t_eval=t_grid[idx:],
            events=crossing,
            rtol=rtol,
            atol=atol,
        )
        if sol.status < 0:
            raise StiffnessError(f"trajectory segment failed: {sol.message}", t0)
        m = len(sol.t)
        if m:
            p_out[idx:idx + m], g_out[idx:idx + m] = _observe(sol.y, gop, weights)
            idx += m
        if sol.status != 1:
            break  # reached t_max without a further jump
        t0 = float(sol.t_events[0][0])
        psi_e = sol.y_events[0][0]
        jump_norms = np.array([np.sum(np.abs(cop @ psi_e) ** 2) for cop in cops])
        k = rng.choice(len(cops), p=jump_norms / jump_norms.sum())
        psi = cops[k] @ psi_e
        psi = psi / np.linalg.norm(psi)
        threshold = rng.random()
    return p_out, g_out


def mcwf_trajectory(
    pattern: ExcitationPattern,
    c: CouplingMatrices,
    t_grid,
    seed,
    rtol: float = 1e-6,
    atol: float = 1e-9,
    cap: int = MCWF_CAP,
) -> TimeSeries:
    """One stochastic jump/no-jump trajectory sampled on t_grid.

    Between jumps the state evolves under the non-Hermitian generator;
    a jump fires when the squared norm crosses a pre-drawn uniform
    threshold (located by the integrator's root finder), the channel is
    drawn proportionally to its instantaneous rate, and the state is
    projected and renormalized.
    """
    n = pattern.n_sites
    if n != c.n:
        raise InvalidArgumentError("pattern size does not match couplings")
    if n > cap:
        raise CapacityError(f"trajectory solver capped at {cap} emitters, got {n}")
    t_grid = np.asarray(t_grid, dtype=float)
    heff, cops, gop, weights = _mcwf_operators(c)
    psi0 = PureState.from_pattern(pattern).amplitudes
    p, g = _run_trajectory(psi0, heff, cops, gop, weights, t_grid, as_rng(seed), rtol, atol)
    return make_timeseries(t_grid, p, g, n, c.gamma0)


def _run_chunk(args):
    pattern, c, t_grid, seeds, rtol, atol = args
    heff, cops, gop, weights = _mcwf_operators(c)
    psi0 = PureState.from_pattern(pattern).amplitudes
    m = len(t_grid)
    acc = np.zeros((4, m))
    for seed in seeds:
        p, g = _run_trajectory(
            psi0, heff, cops, gop, weights, t_grid, np.random.default_rng(seed), rtol, atol
        )
        acc[0] += p
        acc[1] += p * p
        acc[2] += g
        acc[3] += g * g
    return acc


def mcwf_ensemble(
    pattern: ExcitationPattern,
    c: CouplingMatrices,
    t_grid,
    n_traj: int,
    seed,
    workers: int = 1,
    rtol: float = 1e-6,
    atol: float = 1e-9,
    cap: int = MCWF_CAP,
) -> TimeSeries:
    """Trajectory average with per-point standard errors.

    Trajectory seeds are spawned from the master seed, and accumulation
    runs in fixed chunks, so the result is bit-identical for any worker
    count and execution order.
    """
    if n_traj < 1:
        raise InvalidArgumentError("n_traj must be >= 1")
    n = pattern.n_sites
    if n > cap:
        raise CapacityError(f"trajectory solver capped at {cap} emitters, got {n}")
    t_grid = np.asarray(t_grid, dtype=float)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    traj_seeds = ss.spawn(n_traj)
    chunks = [
        (pattern, c, t_grid, traj_seeds[lo:lo + _CHUNK], rtol, atol)
        for lo in range(0, n_traj, _CHUNK)
    ]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            acc_list = list(pool.map(_run_chunk, chunks))
    else:
        acc_list = [_run_chunk(ch) for ch in chunks]
    acc = np.zeros_like(acc_list[0])
    for a in acc_list:
        acc += a

    p_mean = acc[0] / n_traj
    g_mean = acc[2] / n_traj
    if n_traj > 1:
        var_p = np.clip(acc[1] - acc[0] ** 2 / n_traj, 0.0, None) / (n_traj - 1)
        var_g = np.clip(acc[3] - acc[2] ** 2 / n_traj, 0.0, None) / (n_traj - 1)
        p_err = np.sqrt(var_p / n_traj)
        g_err = np.sqrt(var_g / n_traj)
    else:
        p_err = np.zeros_like(p_mean)
        g_err = np.zeros_like(g_mean)
    return make_timeseries(t_grid, p_mean, g_mean, n, c.gamma0, p_err, g_err)


def _liouvillian(c: CouplingMatrices):
    """Sparse generator acting on the row-major vectorized density matrix."""
    n = c.n
    dim = 1 << n
    J = c.J.copy()
    np.fill_diagonal(J, 0.0)
    H = _transfer_matrix(n, J.astype(complex))
    Gop = _transfer_matrix(n, c.Gamma.astype(complex))
    eye = sp.identity(dim, format="csr", dtype=complex)
    L = -1j * (sp.kron(H, eye) - sp.kron(eye, H.T))
    jops = diagonalize_gamma(c)
    for k, rate in enumerate(jops.eigenrates):
        if rate <= 0:
            continue
        ck = _lowering_matrix(n, np.sqrt(rate) * jops.modes[k])
        L = L + sp.kron(ck, ck.conjugate())
    L = L - 0.5 * (sp.kron(Gop, eye) + sp.kron(eye, Gop.T))
    return L.tocsr(), Gop, dim


def lindblad_dense(
    pattern: ExcitationPattern,
    c: CouplingMatrices,
    t_grid,
    rtol: float = 1e-6,
    atol: float = 1e-9,
    cap: int = LINDBLAD_CAP,
    with_diagnostics: bool = False,
):
    """Full master-equation propagation of the vectorized density matrix."""
    n = pattern.n_sites
    if n != c.n:
        raise InvalidArgumentError("pattern size does not match couplings")
    if n > cap:
        raise CapacityError(f"dense propagation capped at {cap} emitters, got {n}")
    t_grid = np.asarray(t_grid, dtype=float)
    L, Gop, dim = _liouvillian(c)
    psi0 = PureState.from_pattern(pattern).amplitudes
    rho0 = np.outer(psi0, psi0.conj()).ravel()

    sol = solve_ivp(
        lambda t, v: L @ v,
        (t_grid[0], t_grid[-1]),
        rho0,
        method="RK45",
        t_eval=t_grid,
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        last = float(sol.t[-1]) if sol.t.size else float(t_grid[0])
        raise StiffnessError(f"density-matrix propagation failed: {sol.message}", last)
    Y = sol.y

    diag_idx = np.arange(dim) * dim + np.arange(dim)
    weights = np.array([bin(s).count("1") for s in range(dim)], dtype=float)
    pops_diag = Y[diag_idx].real
    p = weights @ pops_diag
    gvec = np.asarray(Gop.T.todense()).ravel()
    g = (gvec @ Y).real
    series = make_timeseries(t_grid, p, g, n, c.gamma0)
    if not with_diagnostics:
        return series
    site_masks = np.array(
        [[(s >> i) & 1 for s in range(dim)] for i in range(n)], dtype=float
    )
    diagnostics = {
        "trace": pops_diag.sum(axis=0),
        "site_populations": site_masks @ pops_diag,
    }
    return series, diagnostics
