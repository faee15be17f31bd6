"""Free-space dipole-dipole couplings.

The electromagnetic vacuum mediates a coherent shift J and a dissipative
rate Gamma between every pair of emitters. Both follow from the free-space
dipole propagator contracted with the (common) transition dipole
orientation. Internally the single-emitter rate is 1 and lengths are in
wavelengths, so the wavenumber is 2*pi.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, InvalidArgumentError
from .lattice import LatticeGeometry

WAVENUMBER = 2.0 * np.pi  # transition wavenumber for lengths in wavelengths

# Pairs closer than this (in units of 1/k) are treated as coincident; the
# near-field shift diverges like 1/(kr)^3.
MIN_KR = 1e-6


@dataclass(frozen=True)
class CouplingMatrices:
    """Symmetric N x N coherent (J) and dissipative (Gamma) coupling matrices.

    Diagonal convention: Gamma[i,i] = gamma0 (single-emitter decay) and
    J[i,i] = 0 (the single-emitter shift is absorbed into the transition
    frequency).
    """

    J: np.ndarray
    Gamma: np.ndarray
    gamma0: float = 1.0
    dipole: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        G = np.asarray(self.Gamma, dtype=float)
        J.setflags(write=False)
        G.setflags(write=False)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "Gamma", G)
        object.__setattr__(self, "dipole", np.asarray(self.dipole, dtype=float))
        if J.shape != G.shape or J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise InvalidArgumentError("J and Gamma must be square matrices of equal size")

    @property
    def n(self) -> int:
        return self.J.shape[0]


def greens_tensor(r: np.ndarray, k: float = WAVENUMBER) -> np.ndarray:
    """3x3 propagator of a point dipole in free space at separation r.

    The contact (delta-function) term is excluded; same-site couplings are
    fixed by convention instead. Satisfies G(r) = G(-r)^T.
    """
    r = np.asarray(r, dtype=float)
    dist = float(np.linalg.norm(r))
    if dist <= 0.0:
        raise InvalidArgumentError("propagator undefined at zero separation")
    kr = k * dist
    rhat = r / dist
    scalar = 1.0 + 1j / kr - 1.0 / kr**2
    dyadic = -1.0 - 3j / kr + 3.0 / kr**2
    pref = np.exp(1j * kr) / (4.0 * np.pi * dist)
    return pref * (scalar * np.eye(3) + dyadic * np.outer(rhat, rhat))


def analytic_perpendicular_coupling(kr: float) -> tuple[float, float]:
    """Closed-form (J, Gamma) for a dipole perpendicular to the separation.

    Independent of the tensor route: obtained by contracting the
    propagator with a unit dipole orthogonal to r, in units of the
    single-emitter rate.
    """
    kr = float(kr)
    if kr <= 0:
        raise InvalidArgumentError("kr must be positive")
    s, c = np.sin(kr), np.cos(kr)
    gamma = 1.5 * (s / kr + c / kr**2 - s / kr**3)
    shift = 0.75 * (-c / kr + c / kr**3 + s / kr**2)
    return shift, gamma


def coupling_matrices(
    geom: LatticeGeometry, dipole: np.ndarray | None = None, gamma0: float = 1.0
) -> CouplingMatrices:
    """Coupling matrices for a geometry and a common dipole orientation.

    The default dipole is z, perpendicular to the array plane. Pairs
    closer than MIN_KR/k raise DegenerateGeometryError naming the pair.
    """
    d = np.array([0.0, 0.0, 1.0]) if dipole is None else np.asarray(dipole, dtype=float)
    norm = np.linalg.norm(d)
    if norm == 0:
        raise InvalidArgumentError("dipole orientation must be a nonzero vector")
    d = d / norm

    pos = geom.positions
    n = geom.n_sites
    rvec = pos[:, None, :] - pos[None, :, :]
    dist = np.linalg.norm(rvec, axis=2)

    iu, ju = np.triu_indices(n, k=1)
    if iu.size:
        closest = np.argmin(dist[iu, ju])
        if WAVENUMBER * dist[iu[closest], ju[closest]] < MIN_KR:
            i, j = int(iu[closest]), int(ju[closest])
            raise DegenerateGeometryError(i, j, float(dist[i, j]))

    np.fill_diagonal(dist, 1.0)  # placeholder; diagonal overwritten below
    kr = WAVENUMBER * dist
    cos2 = np.zeros((n, n))
    if n > 1:
        proj = rvec @ d
        with np.errstate(invalid="ignore"):
            cos2 = (proj / dist) ** 2
    np.fill_diagonal(cos2, 0.0)

    scalar = 1.0 + 1j / kr - 1.0 / kr**2
    dyadic = -1.0 - 3j / kr + 3.0 / kr**2
    contracted = np.exp(1j * kr) / (4.0 * np.pi * dist) * (scalar + dyadic * cos2)
    coupling = -(3.0 * np.pi * gamma0 / WAVENUMBER) * contracted

    J = coupling.real.copy()
    Gamma = (-2.0 * coupling.imag).copy()
    np.fill_diagonal(J, 0.0)
    np.fill_diagonal(Gamma, gamma0)
    # enforce exact symmetry against floating-point asymmetries in rvec
    J = 0.5 * (J + J.T)
    Gamma = 0.5 * (Gamma + Gamma.T)
    return CouplingMatrices(J, Gamma, gamma0, d)


def dicke_limit(n: int, gamma0: float = 1.0) -> CouplingMatrices:
    """Point-like ensemble: every dissipative coupling equals gamma0, no shifts."""
    if n < 1:
        raise InvalidArgumentError("need at least one emitter")
    return CouplingMatrices(np.zeros((n, n)), np.full((n, n), gamma0), gamma0)


def coupling_sum(c: CouplingMatrices) -> float:
    """Off-diagonal sum of Gamma_ij * Gamma_ji in units of gamma0 squared."""
    g2 = c.Gamma * c.Gamma.T
    return float((g2.sum() - np.trace(g2)) / c.gamma0**2)


def write_couplings_csv(c: CouplingMatrices, path) -> None:
    """Row-major dump of the coupling matrices with header i,j,J,Gamma."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "J", "Gamma"])
        for i in range(c.n):
            for j in range(c.n):
                w.writerow([i, j, repr(float(c.J[i, j])), repr(float(c.Gamma[i, j]))])
