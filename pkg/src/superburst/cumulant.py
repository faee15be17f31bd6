"""Truncated-correlator (cumulant) dynamics of collectively decaying emitters.

The dynamical variables are expectation values of site-operator products:

  order 1:  populations  p[i] = <ee_i>
  order 2:  + pair coherences  C[i,j] = <eg_i ge_j>   (Hermitian, diag = p)
            + pair populations P2[i,j] = <ee_i ee_j>  (symmetric, diag = p)
  order 3:  + triple populations P3[i,j,k] = <ee_i ee_j ee_k>
            + mixed correlators  T[i,j,k] = <ee_i eg_j ge_k>  (i not in {j,k})

Products one order above the truncation are replaced by the standard
cumulant factorization into lower-order averages; correlators that stay
identically zero for incoherently excited initial states (single-operator
coherences and unbalanced products) are dropped throughout.

The ODE state is a flat real vector holding only canonical entries
(pairs i<j, sorted triples, mixed entries with j<k); symmetric and
conjugate partners are reconstructed on unpacking.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy.integrate import solve_ivp

from . import observables
from .couplings import CouplingMatrices
from .errors import (
    InvalidArgumentError,
    NumericalBlowupError,
    StiffnessError,
    UnphysicalDynamicsWarning,
)
from .lattice import ExcitationPattern, HolePattern


@dataclass
class CumulantState:
    """Snapshot of all stored correlators as full (redundant) arrays."""

    order: int
    pop: np.ndarray
    coh: np.ndarray | None = None      # (N, N) complex, Hermitian, diag = pop
    pop2: np.ndarray | None = None     # (N, N) real symmetric, diag = pop
    pop3: np.ndarray | None = None     # (N, N, N) real, fully symmetric
    mixed3: np.ndarray | None = None   # (N, N, N) complex, see layout fills
    time: float = 0.0

    @property
    def n(self) -> int:
        return len(self.pop)


@lru_cache(maxsize=32)
def _layout(n: int, order: int):
    """Canonical index arrays and packed-vector offsets for (n, order)."""
    iu, ju = np.triu_indices(n, k=1)
    m2 = len(iu)
    if order < 3:
        return {"iu": iu, "ju": ju, "m2": m2, "size": n + 3 * m2 if order == 2 else n}
    triples = np.array(list(combinations(range(n), 3)), dtype=int).reshape(-1, 3)
    # mixed entries: leading population index i, coherence pair j < k, i distinct
    im = np.repeat(np.arange(n), m2)
    jm = np.tile(iu, n)
    km = np.tile(ju, n)
    keep = (im != jm) & (im != km)
    im, jm, km = im[keep], jm[keep], km[keep]
    m3 = triples.shape[0]
    mm = len(im)
    return {
        "iu": iu, "ju": ju, "m2": m2,
        "i3": triples[:, 0], "j3": triples[:, 1], "k3": triples[:, 2], "m3": m3,
        "im": im, "jm": jm, "km": km, "mm": mm,
        "size": n + 3 * m2 + m3 + 2 * mm,
    }


def packed_size(n: int, order: int) -> int:
    return _layout(n, order)["size"]


def pack(state: CumulantState) -> np.ndarray:
    """Flatten canonical correlator entries into one real vector."""
    n, order = state.n, state.order
    lay = _layout(n, order)
    if order == 1:
        return state.pop.astype(float).copy()
    iu, ju = lay["iu"], lay["ju"]
    blocks = [
        state.pop,
        state.coh[iu, ju].real,
        state.coh[iu, ju].imag,
        state.pop2[iu, ju],
    ]
    if order == 3:
        blocks.append(state.pop3[lay["i3"], lay["j3"], lay["k3"]])
        tm = state.mixed3[lay["im"], lay["jm"], lay["km"]]
        blocks.extend([tm.real, tm.imag])
    return np.concatenate([np.asarray(b, dtype=float).ravel() for b in blocks])


def _full_pair_arrays(pop, coh_c, pop2_c, lay):
    n = len(pop)
    iu, ju = lay["iu"], lay["ju"]
    C = np.zeros((n, n), dtype=complex)
    C[iu, ju] = coh_c
    C[ju, iu] = np.conj(coh_c)
    C[np.arange(n), np.arange(n)] = pop
    P2 = np.zeros((n, n))
    P2[iu, ju] = pop2_c
    P2[ju, iu] = pop2_c
    P2[np.arange(n), np.arange(n)] = pop
    return C, P2


def _full_triple_arrays(pop, C, P2, p3_c, t_c, lay):
    """Scatter canonical triples and fill the coincident-index reductions.

    Coincidences reduce exactly: P3[a,a,b] = P2[a,b]; T[a,a,c] = C[a,c],
    T[a,b,b] = P2[a,b], T[a,b,a] = 0 (same-site ee.ge annihilates).
    """
    n = len(pop)
    ar = np.arange(n)
    i3, j3, k3 = lay["i3"], lay["j3"], lay["k3"]
    P3 = np.zeros((n, n, n))
    for p, q, r in ((i3, j3, k3), (i3, k3, j3), (j3, i3, k3),
                    (j3, k3, i3), (k3, i3, j3), (k3, j3, i3)):
        P3[p, q, r] = p3_c
    P3[ar, ar, :] = P2
    P3[ar, :, ar] = P2
    P3[:, ar, ar] = P2

    im, jm, km = lay["im"], lay["jm"], lay["km"]
    T = np.zeros((n, n, n), dtype=complex)
    T[im, jm, km] = t_c
    T[im, km, jm] = np.conj(t_c)
    T[ar, :, ar] = 0.0
    T[:, ar, ar] = P2
    T[ar, ar, :] = C
    return P3, T


def unpack(y: np.ndarray, n: int, order: int, time: float = 0.0) -> CumulantState:
    """Rebuild full correlator arrays from a packed vector."""
    lay = _layout(n, order)
    if order == 1:
        return CumulantState(1, y.copy(), time=time)
    m2 = lay["m2"]
    pop = y[:n]
    coh_c = y[n:n + m2] + 1j * y[n + m2:n + 2 * m2]
    pop2_c = y[n + 2 * m2:n + 3 * m2]
    C, P2 = _full_pair_arrays(pop, coh_c, pop2_c, lay)
    if order == 2:
        return CumulantState(2, pop.copy(), C, P2, time=time)
    off = n + 3 * m2
    m3, mm = lay["m3"], lay["mm"]
    p3_c = y[off:off + m3]
    t_c = y[off + m3:off + m3 + mm] + 1j * y[off + m3 + mm:off + m3 + 2 * mm]
    P3, T = _full_triple_arrays(pop, C, P2, p3_c, t_c, lay)
    return CumulantState(3, pop.copy(), C, P2, P3, T, time=time)


def init_state(
    pattern: ExcitationPattern, order: int, holes: HolePattern | None = None
) -> CumulantState:
    """Incoherent product state: chosen sites fully excited, no coherences.

    When a hole pattern is given, the excited set must lie inside the
    occupied sites and the state is built over the occupied sites only
    (renumbered in increasing site order).
    """
    if order not in (1, 2, 3):
        raise InvalidArgumentError(f"order must be 1, 2 or 3, got {order}")
    if holes is not None:
        if holes.n_sites != pattern.n_sites:
            raise InvalidArgumentError("hole pattern size does not match excitation pattern")
        if not pattern.excited <= holes.filled:
            raise InvalidArgumentError("an empty lattice site cannot be excited")
        keep = sorted(holes.filled)
        renumber = {site: idx for idx, site in enumerate(keep)}
        pattern = ExcitationPattern(
            len(keep), frozenset(renumber[s] for s in pattern.excited)
        )
    n = pattern.n_sites
    e = pattern.indicator()
    if order == 1:
        return CumulantState(1, e)
    lay = _layout(n, order)
    iu, ju = lay["iu"], lay["ju"]
    y = [e, np.zeros(lay["m2"]), np.zeros(lay["m2"]), e[iu] * e[ju]]
    if order == 3:
        y.append(e[lay["i3"]] * e[lay["j3"]] * e[lay["k3"]])
        y.extend([np.zeros(lay["mm"]), np.zeros(lay["mm"])])
    return unpack(np.concatenate(y), n, order)


def order3_guard_applies(n: int, spacing: float) -> bool:
    """Regime where third-order truncation is known to turn unphysical.

    Large arrays at deeply subwavelength spacing can develop a growing
    excited population; callers should warn (not fail) before running.
    """
    return n > 100 and spacing < 0.1


def _coeffs(c: CouplingMatrices):
    """Zero-diagonal coupling coefficient matrices used by the sums.

    A = iJ + Gamma/2 and B = conj(A) multiply coherence-type neighbours;
    Wm = -B and Wp = -A multiply them in the population equations. The
    zeroed diagonals implement the n != own-index exclusions for free.
    """
    A = 1j * c.J + 0.5 * c.Gamma
    np.fill_diagonal(A, 0.0)
    B = np.conj(A)
    return A, B, -B, -A


def rhs(state: CumulantState, c: CouplingMatrices) -> CumulantState:
    """Time derivative of every stored correlator."""
    n = state.n
    if c.n != n:
        raise InvalidArgumentError("state dimension does not match couplings")
    g0 = c.gamma0
    pop = state.pop
    if state.order == 1:
        return CumulantState(1, -g0 * pop)

    A, B, Wm, Wp = _coeffs(c)
    C, P2 = state.coh, state.pop2
    J, G = c.J, c.Gamma

    # per-site coherence inflow; the two halves are complex conjugates
    V1 = (Wm * C).sum(axis=0)           # sum_n Wm[n,i] C[n,i]
    V2 = (Wp * C).sum(axis=1)           # sum_n Wp[i,n] C[i,n]
    s = (V1 + V2).real
    dpop = -g0 * pop + s

    pi = pop[:, None]
    pj = pop[None, :]
    drive = 0.5 * G * (4.0 * P2 - pi - pj) + 1j * J * (pj - pi)

    if state.order == 2:
        # neighbour sums with the n = partner term removed explicitly
        sum1 = C @ A - pi * A            # sum_{n!=i,j} A[j,n] C[i,n]
        sum2 = B @ C - B * pj            # sum_{n!=i,j} B[n,i] C[n,j]
        dC = -g0 * C + drive + (2.0 * pj - 1.0) * sum1 + (2.0 * pi - 1.0) * sum2

        t2 = 2.0 * (Wm * C).real
        dP2 = -2.0 * g0 * P2 + pi * (s[None, :] - t2) + pj * (s[:, None] - t2.T)
        return CumulantState(2, dpop, dC, dP2)

    P3, T = state.pop3, state.mixed3

    # pair coherences: spectator-population products are stored, not factorized
    EA = np.einsum("jn,jin->ij", A, T)   # sum_n A[j,n] T[j,i,n]
    EB = np.einsum("ni,inj->ij", B, T)   # sum_n B[n,i] T[i,n,j]
    sum1 = 2.0 * (EA - A * P2) - (C @ A - pi * A)
    sum2 = 2.0 * (EB - B * P2) - (B @ C - B * pj)
    dC = -g0 * C + drive + sum1 + sum2

    # pair populations couple to the mixed triple correlators directly
    E1 = np.einsum("ni,jni->ij", Wm, T)
    E2 = np.einsum("in,jin->ij", Wp, T)
    E3 = np.einsum("nj,inj->ij", Wm, T)
    E4 = np.einsum("jn,ijn->ij", Wp, T)
    wc = Wm * C
    dP2 = -2.0 * g0 * P2 + (E1 + E2 + E3 + E4 - wc.T - wc).real

    # ---- triple populations ------------------------------------------------
    # Q[x,y,z]: contribution with active (decaying) index x and spectators y,z
    UT = np.einsum("nx,anx->ax", Wm, T)  # sum_n Wm[n,x] T[a,n,x]
    UT2 = np.einsum("xn,axn->ax", Wp, T)
    UU = (UT + UT2).T                    # [x, a]
    VV = V1 + V2                         # [x]
    coef = (P2 - 2.0 * np.outer(pop, pop))[None, :, :]          # [., y, z]
    Q = (
        pop[None, :, None] * UU[:, None, :]
        + pop[None, None, :] * UU[:, :, None]
        + coef * VV[:, None, None]
    )
    # remove the n = y term (n = z follows by y<->z symmetry)
    T_zyx = np.transpose(T, (2, 1, 0))   # [x,y,z] -> T[z,y,x]
    T_zxy = np.transpose(T, (1, 2, 0))   # [x,y,z] -> T[z,x,y]
    corr_y = Wm.T[:, :, None] * (
        pop[None, :, None] * T_zyx
        + C.T[:, :, None] * (pop[None, None, :] + coef)
    ) + Wp[:, :, None] * (
        pop[None, :, None] * T_zxy + C[:, :, None] * coef
    )
    Q -= corr_y + np.transpose(corr_y, (0, 2, 1))
    dP3 = (
        -3.0 * g0 * P3
        + (Q + np.transpose(Q, (1, 0, 2)) + np.transpose(Q, (1, 2, 0))).real
    )

    # ---- mixed triple correlators ------------------------------------------
    G1 = Wm @ C                          # [i,k] = sum_n Wm[n,i] C[n,k]
    G2 = Wp @ C.T                        # [i,j] = sum_n Wp[i,n] C[j,n]
    R = np.transpose(np.tensordot(T, B, axes=([1], [0])), (0, 2, 1))
    R1 = np.einsum("nj,jnk->jk", B, T)
    R3 = B @ C
    S = np.tensordot(T, A, axes=([2], [1]))
    S1 = np.einsum("kn,kjn->kj", A, T)
    S3 = C @ A

    two_pj = 2.0 * pop - 1.0
    full = (
        VV[:, None, None] * C[None, :, :]
        + G1[:, None, :] * C.T[:, :, None]
        + G2[:, :, None] * C[:, None, :]
        + two_pj[None, :, None] * R
        + 2.0 * pop[:, None, None] * R1[None, :, :]
        + (2.0 * P2 - 4.0 * np.outer(pop, pop))[:, :, None] * R3[None, :, :]
        + two_pj[None, None, :] * S
        + 2.0 * pop[:, None, None] * S1.T[None, :, :]
        + (2.0 * P2 - 4.0 * np.outer(pop, pop))[:, None, :] * S3[None, :, :]
    )

    pk = pop[None, None, :]
    p2ij = (2.0 * P2 - 4.0 * np.outer(pop, pop))[:, :, None]
    p2ik = (2.0 * P2 - 4.0 * np.outer(pop, pop))[:, None, :]
    corr = (
        # coherence-pair lines, n = j and n = k
        Wm.T[:, :, None] * 2.0 * (C.T[:, :, None] * C[None, :, :])
        + Wm[:, None, :] * (C.T[:, None, :] * C[None, :, :]
                            + pk * np.transpose(C, (1, 0))[:, :, None])
        + Wp[:, :, None] * (C[:, :, None] * C[None, :, :]
                            + pop[None, :, None] * C[:, None, :])
        + Wp[:, None, :] * 2.0 * (C[:, None, :] * C[None, :, :])
        # spectator-population line with coefficient B[n,j], n = i and n = k
        + B[:, :, None] * (two_pj[None, :, None] * C[:, None, :]
                           + 2.0 * pop[:, None, None] * np.transpose(T, (1, 0, 2))
                           + p2ij * C[:, None, :])
        + B.T[None, :, :] * (two_pj[None, :, None] * P2[:, None, :]
                             + 2.0 * pop[:, None, None] * P2.T[None, :, :]
                             + p2ij * pk)
        # spectator-population line with coefficient A[k,n], n = i and n = j
        + A[:, None, :] * (2.0 * pop[:, None, None] * np.transpose(T, (2, 1, 0))
                           + p2ik * C.T[:, :, None])
        + A[None, :, :] * (two_pj[None, None, :] * P2[:, :, None]
                           + 2.0 * pop[:, None, None] * np.transpose(P2, (1, 0))[None, :, :]
                           + p2ik * pop[None, :, None])
    )

    dT = (
        -2.0 * g0 * T
        + Wp[:, :, None] * np.transpose(T, (1, 0, 2))
        + Wm[:, None, :] * np.transpose(T, (2, 1, 0))
        + 1j * J[None, :, :] * (P2[:, None, :] - P2[:, :, None])
        + 0.5 * G[None, :, :] * (4.0 * P3 - P2[:, :, None] - P2[:, None, :])
        + full
        - corr
    )
    return CumulantState(3, dpop, dC, dP2, dP3, dT)


def _packed_rhs(n: int, order: int, c: CouplingMatrices):
    lay = _layout(n, order)
    if order == 1:
        g0 = c.gamma0

        def fun(t, y):
            return -g0 * y

        return fun

    def fun(t, y):
        d = rhs(unpack(y, n, order), c)
        return pack(d)

    return fun


def integrate(
    state0: CumulantState,
    c: CouplingMatrices,
    t_max: float = 10.0,
    sample_dt: float = 1e-2,
    rtol: float = 1e-6,
    atol: float = 1e-9,
) -> tuple[observables.TimeSeries, CumulantState]:
    """Propagate a correlator state and sample the emission observables.

    Adaptive embedded Runge-Kutta (Dormand-Prince 5(4)) with local error
    below atol + rtol*|y| per step; observables are evaluated on a uniform
    grid with step sample_dt.
    """
    if t_max <= 0:
        raise InvalidArgumentError("t_max must be positive")
    if sample_dt <= 0 or rtol <= 0 or atol <= 0:
        raise InvalidArgumentError("sample_dt and tolerances must be positive")
    n, order = state0.n, state0.order
    grid = np.arange(0.0, t_max + 0.5 * sample_dt, sample_dt)
    y0 = pack(state0)
    fun = _packed_rhs(n, order, c)

    def guarded(t, y):
        if not np.all(np.isfinite(y)):
            raise NumericalBlowupError(
                "non-finite values in the integrated state", float(t)
            )
        return fun(t, y)

    try:
        sol = solve_ivp(
            guarded,
            (0.0, grid[-1]),
            y0,
            method="RK45",
            t_eval=grid,
            rtol=rtol,
            atol=atol,
        )
    except ValueError as err:
        raise NumericalBlowupError(str(err), 0.0) from err
    if not sol.success or sol.t.size < grid.size:
        last = float(sol.t[-1]) if sol.t.size else 0.0
        if sol.y.size and not np.all(np.isfinite(sol.y)):
            raise NumericalBlowupError("non-finite values in the integrated state", last)
        raise StiffnessError(f"integrator failed: {sol.message}", last)
    if not np.all(np.isfinite(sol.y)):
        raise NumericalBlowupError("non-finite values in the integrated state", float(sol.t[-1]))

    p_exc = sol.y[:n].sum(axis=0)
    if order == 1:
        g_tot = c.gamma0 * p_exc
    else:
        lay = _layout(n, order)
        w = c.Gamma[lay["iu"], lay["ju"]]
        coh_re = sol.y[n:n + lay["m2"]]
        g_tot = c.gamma0 * p_exc + 2.0 * (w @ coh_re)

    if p_exc.min() < -1e-6 * max(n, 1) or (
        len(p_exc) > 1 and np.any(np.diff(p_exc) > 1e-6 * max(n, 1))
    ):
        warnings.warn(
            "truncated-correlator dynamics produced negative or growing "
            "excited population; values are reported unmodified",
            UnphysicalDynamicsWarning,
            stacklevel=2,
        )

    series = observables.make_timeseries(sol.t, p_exc, g_tot, n, c.gamma0)
    final = unpack(sol.y[:, -1], n, order, time=float(sol.t[-1]))
    return series, final
