"""Collective spontaneous emission in ordered arrays of two-level emitters.

Truncated-correlator (cumulant) dynamics up to third order for hundreds of
emitters, exact small-system solvers (quantum trajectories and dense
master-equation propagation) for benchmarking, closed-form burst criteria
and critical excitation/filling fractions, and a reproducible ensemble
runner with a CLI.
"""

__version__ = "0.1.0"

from .couplings import (
    CouplingMatrices,
    analytic_perpendicular_coupling,
    coupling_matrices,
    coupling_sum,
    dicke_limit,
    greens_tensor,
)
from .cumulant import CumulantState, init_state, integrate, rhs
from .ensemble import RunConfig, run_ensemble, run_single, run_sweep
from .exact import (
    JumpOperatorSet,
    PureState,
    diagonalize_gamma,
    lindblad_dense,
    mcwf_ensemble,
    mcwf_trajectory,
)
from .lattice import (
    DisorderSpec,
    ExcitationPattern,
    HolePattern,
    LatticeGeometry,
    apply_position_disorder,
    build_chain,
    build_square,
    full_excitation,
    remove_holes,
    sample_excitation_pattern,
    sample_hole_pattern,
)
from .observables import (
    BurstReport,
    PowerLawFit,
    TimeSeries,
    avg_gamma_dot0_holes,
    avg_gamma_dot0_partial,
    critical_excitation_fraction,
    critical_filling_fraction,
    detect_peak,
    fit_power_law,
    gamma_dot0,
    gamma_tot,
    subradiant_population,
)

__all__ = [
    "__version__",
    "BurstReport",
    "CouplingMatrices",
    "CumulantState",
    "DisorderSpec",
    "ExcitationPattern",
    "HolePattern",
    "JumpOperatorSet",
    "LatticeGeometry",
    "PowerLawFit",
    "PureState",
    "RunConfig",
    "TimeSeries",
    "analytic_perpendicular_coupling",
    "apply_position_disorder",
    "avg_gamma_dot0_holes",
    "avg_gamma_dot0_partial",
    "build_chain",
    "build_square",
    "coupling_matrices",
    "coupling_sum",
    "critical_excitation_fraction",
    "critical_filling_fraction",
    "detect_peak",
    "diagonalize_gamma",
    "dicke_limit",
    "fit_power_law",
    "full_excitation",
    "gamma_dot0",
    "gamma_tot",
    "greens_tensor",
    "init_state",
    "integrate",
    "lindblad_dense",
    "mcwf_ensemble",
    "mcwf_trajectory",
    "remove_holes",
    "rhs",
    "run_ensemble",
    "run_single",
    "run_sweep",
    "sample_excitation_pattern",
    "sample_hole_pattern",
    "subradiant_population",
]
