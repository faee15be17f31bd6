import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from superburst import couplings, cumulant, exact, lattice


def _workers() -> int:
    return min(2, os.cpu_count() or 1)


@pytest.fixture(scope="session")
def bench10():
    """Ten-emitter chain at a tenth of a wavelength, fully inverted.

    The standard benchmark bundle: truncation orders 1-3 plus a
    2000-trajectory stochastic reference, all on the same grid.
    """
    n = 10
    c = couplings.coupling_matrices(lattice.build_chain(n, 0.1))
    pattern = lattice.full_excitation(n)
    t_max = 8.0
    out = {"n": n, "couplings": c, "pattern": pattern}
    for order in (1, 2, 3):
        state = cumulant.init_state(pattern, order)
        series, _ = cumulant.integrate(state, c, t_max=t_max)
        out[f"order{order}"] = series
    grid = np.arange(0.0, t_max + 0.005, 0.01)
    out["mcwf"] = exact.mcwf_ensemble(
        pattern, c, grid, n_traj=2000, seed=20240201, workers=_workers()
    )
    return out


@pytest.fixture(scope="session")
def bench6():
    """Six-emitter chain: dense master-equation reference plus order 3."""
    n = 6
    c = couplings.coupling_matrices(lattice.build_chain(n, 0.1))
    pattern = lattice.full_excitation(n)
    grid = np.arange(0.0, 8.0 + 0.005, 0.01)
    dense = exact.lindblad_dense(pattern, c, grid)
    series3, _ = cumulant.integrate(cumulant.init_state(pattern, 3), c, t_max=8.0)
    series2, _ = cumulant.integrate(cumulant.init_state(pattern, 2), c, t_max=8.0)
    return {
        "n": n,
        "couplings": c,
        "pattern": pattern,
        "dense": dense,
        "order3": series3,
        "order2": series2,
        "grid": grid,
    }
