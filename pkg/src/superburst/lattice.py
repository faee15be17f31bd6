"""Emitter geometries: chains, square lattices, holes, excitations, disorder.

All lengths are measured in units of the transition wavelength; rates in
units of the single-emitter decay rate; time in its inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError


def as_rng(seed) -> np.random.Generator:
    """Return a Generator from an int seed, a SeedSequence, or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class LatticeGeometry:
    """Emitter positions (n_sites, 3) with the pitch and layout they came from."""

    positions: np.ndarray
    spacing: float
    dimension: str  # "chain" | "square"

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.n_sites < 1:
            raise InvalidArgumentError("geometry needs at least one site")
        if self.spacing <= 0:
            raise InvalidArgumentError("spacing must be positive")

    @property
    def n_sites(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class ExcitationPattern:
    """Subset of sites that start excited (incoherent product state)."""

    n_sites: int
    excited: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "excited", frozenset(int(i) for i in self.excited))
        if any(i < 0 or i >= self.n_sites for i in self.excited):
            raise InvalidArgumentError("excited site index out of range")

    @property
    def n_exc(self) -> int:
        return len(self.excited)

    def indicator(self) -> np.ndarray:
        e = np.zeros(self.n_sites)
        e[sorted(self.excited)] = 1.0
        return e


@dataclass(frozen=True)
class HolePattern:
    """Subset of lattice sites actually occupied by an emitter."""

    n_sites: int
    filled: frozenset

    def __post_init__(self):
        object.__setattr__(self, "filled", frozenset(int(i) for i in self.filled))
        if any(i < 0 or i >= self.n_sites for i in self.filled):
            raise InvalidArgumentError("filled site index out of range")

    @property
    def n_filled(self) -> int:
        return len(self.filled)

    @property
    def n_holes(self) -> int:
        return self.n_sites - self.n_filled


@dataclass(frozen=True)
class DisorderSpec:
    """Gaussian position disorder: per-coordinate std sigma in units of the pitch."""

    sigma: float
    seed: "int | np.random.SeedSequence | np.random.Generator" = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise InvalidArgumentError("sigma must be non-negative")


def build_chain(n: int, a: float) -> LatticeGeometry:
    """n collinear sites along x with pitch a."""
    if n < 1:
        raise InvalidArgumentError(f"chain needs n >= 1, got {n}")
    if a <= 0:
        raise InvalidArgumentError(f"spacing must be positive, got {a}")
    pos = np.zeros((n, 3))
    pos[:, 0] = a * np.arange(n)
    return LatticeGeometry(pos, a, "chain")


def build_square(n: int, a: float) -> LatticeGeometry:
    """sqrt(n) x sqrt(n) grid in the x-y plane with pitch a.

    n must be a perfect square; non-square counts are rejected rather
    than padded.
    """
    if n < 1:
        raise InvalidArgumentError(f"square lattice needs n >= 1, got {n}")
    if a <= 0:
        raise InvalidArgumentError(f"spacing must be positive, got {a}")
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise InvalidArgumentError(f"n = {n} is not a perfect square")
    ix, iy = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    pos = np.zeros((n, 3))
    pos[:, 0] = a * ix.ravel()
    pos[:, 1] = a * iy.ravel()
    return LatticeGeometry(pos, a, "square")


def apply_position_disorder(geom: LatticeGeometry, spec: DisorderSpec) -> LatticeGeometry:
    """Displace every site by independent zero-mean Gaussian draws.

    Only the coordinates spanned by the array are displaced (x for a
    chain, x and y for a square); the per-coordinate standard deviation
    is sigma * spacing. Deterministic for a given seed.
    """
    if spec.sigma == 0:
        return geom
    rng = as_rng(spec.seed)
    n_axes = 1 if geom.dimension == "chain" else 2
    delta = np.zeros((geom.n_sites, 3))
    delta[:, :n_axes] = rng.normal(
        0.0, spec.sigma * geom.spacing, size=(geom.n_sites, n_axes)
    )
    return LatticeGeometry(geom.positions + delta, geom.spacing, geom.dimension)


def _sample_subset(n_sites: int, size: int, seed, what: str) -> frozenset:
    if n_sites < 1:
        raise InvalidArgumentError("n_sites must be >= 1")
    if size < 0 or size > n_sites:
        raise InvalidArgumentError(
            f"cannot pick {size} {what} out of {n_sites} sites"
        )
    rng = as_rng(seed)
    return frozenset(int(i) for i in rng.choice(n_sites, size=size, replace=False))


def sample_excitation_pattern(n_sites: int, n_exc: int, seed) -> ExcitationPattern:
    """Uniformly random n_exc-subset of excited sites; deterministic given seed."""
    return ExcitationPattern(n_sites, _sample_subset(n_sites, n_exc, seed, "excited sites"))


def sample_hole_pattern(n_sites: int, n_filled: int, seed) -> HolePattern:
    """Uniformly random n_filled-subset of occupied sites; deterministic given seed."""
    return HolePattern(n_sites, _sample_subset(n_sites, n_filled, seed, "filled sites"))


def full_excitation(n_sites: int) -> ExcitationPattern:
    return ExcitationPattern(n_sites, frozenset(range(n_sites)))


def remove_holes(geom: LatticeGeometry, holes: HolePattern) -> LatticeGeometry:
    """Geometry restricted to the occupied sites, renumbered in site order.

    Empty sites carry no emitter and are dropped from the dynamical
    system entirely; the reduced system behaves as a fully independent
    array of n_filled emitters at the occupied positions.
    """
    if holes.n_sites != geom.n_sites:
        raise InvalidArgumentError("hole pattern size does not match geometry")
    if holes.n_filled < 1:
        raise InvalidArgumentError("cannot remove every emitter")
    keep = sorted(holes.filled)
    return LatticeGeometry(geom.positions[keep], geom.spacing, geom.dimension)
