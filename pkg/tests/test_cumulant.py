from itertools import combinations

import numpy as np
import pytest

from eom_oracle import oracle_derivative
from superburst import couplings, cumulant, exact, lattice
from superburst.errors import (
    InvalidArgumentError,
    NumericalBlowupError,
    StiffnessError,
)
from superburst.lattice import ExcitationPattern, HolePattern, full_excitation


def chain_couplings(n, a=0.23):
    return couplings.coupling_matrices(lattice.build_chain(n, a))


class TestInitState:
    def test_full_inversion_order2(self):
        st = cumulant.init_state(full_excitation(3), 2)
        np.testing.assert_array_equal(st.pop, [1, 1, 1])
        np.testing.assert_array_equal(st.coh, np.eye(3))
        np.testing.assert_array_equal(st.pop2, np.ones((3, 3)))

    def test_single_excitation(self):
        st = cumulant.init_state(ExcitationPattern(2, frozenset({0})), 2)
        np.testing.assert_array_equal(st.pop, [1, 0])
        assert st.pop2[0, 1] == 0.0

    def test_triple_requires_all_excited(self):
        st = cumulant.init_state(ExcitationPattern(3, frozenset({0, 2})), 3)
        assert st.pop3[0, 1, 2] == 0.0
        assert st.pop2[0, 2] == 1.0
        assert np.all(st.mixed3[0, 1, 2] == 0.0)

    def test_holes_reduce_and_renumber(self):
        pattern = ExcitationPattern(5, frozenset({0, 4}))
        holes = HolePattern(5, frozenset({0, 2, 4}))
        st = cumulant.init_state(pattern, 2, holes)
        assert st.n == 3
        np.testing.assert_array_equal(st.pop, [1, 0, 1])

    def test_excited_hole_site_rejected(self):
        pattern = ExcitationPattern(4, frozenset({1}))
        holes = HolePattern(4, frozenset({0, 2}))
        with pytest.raises(InvalidArgumentError):
            cumulant.init_state(pattern, 2, holes)

    def test_bad_order_rejected(self):
        with pytest.raises(InvalidArgumentError):
            cumulant.init_state(full_excitation(2), 4)


class TestPacking:
    @pytest.mark.parametrize("n,order", [(1, 1), (3, 2), (5, 2), (4, 3), (6, 3)])
    def test_round_trip(self, n, order):
        rng = np.random.default_rng(n * 10 + order)
        y = rng.normal(size=cumulant.packed_size(n, order))
        st = cumulant.unpack(y, n, order)
        np.testing.assert_array_equal(cumulant.pack(st), y)

    def test_coincident_index_fills(self):
        # repeated indices reduce exactly via same-site operator products
        rng = np.random.default_rng(5)
        st = cumulant.unpack(rng.normal(size=cumulant.packed_size(4, 3)), 4, 3)
        for a in range(4):
            assert st.mixed3[a, a, a] == st.pop[a]
            for b in range(4):
                assert st.pop3[a, a, b] == st.pop2[a, b]
                assert st.mixed3[a, b, b] == st.pop2[a, b]
                assert st.mixed3[a, a, b] == st.coh[a, b]
                if a != b:
                    assert st.mixed3[a, b, a] == 0.0


class TestRhsSmall:
    def test_single_atom_decay(self):
        c = chain_couplings(1)
        for order in (1, 2, 3):
            st = cumulant.init_state(full_excitation(1), order)
            d = cumulant.rhs(st, c)
            assert d.pop[0] == pytest.approx(-1.0)

    def test_two_atom_initial_coherence_growth(self):
        # at full inversion the pair-coherence slope equals the pair decay rate
        c = chain_couplings(2, a=0.5)
        st = cumulant.init_state(full_excitation(2), 2)
        d = cumulant.rhs(st, c)
        g01 = c.Gamma[0, 1]
        assert d.coh[0, 1] == pytest.approx(0.5 * g01 * (4 - 1 - 1), rel=1e-12)

    def test_dimension_mismatch_rejected(self):
        st = cumulant.init_state(full_excitation(3), 2)
        with pytest.raises(InvalidArgumentError):
            cumulant.rhs(st, chain_couplings(4))


class TestRhsAgainstTermOracle:
    """Entry-by-entry agreement with the independent symbolic derivation."""

    @pytest.mark.parametrize("n,order", [(4, 2), (5, 2), (4, 3), (5, 3)])
    def test_random_states(self, n, order):
        rng = np.random.default_rng(100 * n + order)
        c = chain_couplings(n)
        for _ in range(2):
            y = rng.normal(size=cumulant.packed_size(n, order))
            st = cumulant.unpack(y, n, order)
            d = cumulant.rhs(st, c)
            for i in range(n):
                ref = oracle_derivative({i: "ee"}, st, c, order)
                assert d.pop[i] == pytest.approx(ref.real, abs=1e-10)
            for i in range(n):
                for j in range(n):
                    if i == j:
                        continue
                    ref = oracle_derivative(dict([(i, "eg"), (j, "ge")]), st, c, order)
                    assert d.coh[i, j] == pytest.approx(ref, abs=1e-10)
                    ref = oracle_derivative(dict([(i, "ee"), (j, "ee")]), st, c, order)
                    assert d.pop2[i, j] == pytest.approx(ref.real, abs=1e-10)
            if order == 3:
                for (i, j, k) in combinations(range(n), 3):
                    ref = oracle_derivative(
                        dict([(i, "ee"), (j, "ee"), (k, "ee")]), st, c, order
                    )
                    assert d.pop3[i, j, k] == pytest.approx(ref.real, abs=1e-10)
                for i in range(n):
                    for j in range(n):
                        for k in range(n):
                            if len({i, j, k}) < 3:
                                continue
                            ref = oracle_derivative(
                                dict([(i, "ee"), (j, "eg"), (k, "ge")]), st, c, order
                            )
                            assert d.mixed3[i, j, k] == pytest.approx(ref, abs=1e-10)


class TestRhsExactAtProductStates:
    """The closure is exact on uncorrelated states, so the derivative of every
    stored observable must match the full master equation there."""

    @pytest.mark.parametrize("order", [2, 3])
    def test_against_dense_generator(self, order):
        rng = np.random.default_rng(11)
        n = 5
        c = chain_couplings(n, a=0.18)
        p = rng.uniform(0.1, 0.9, size=n)
        rho = np.array([[1.0 + 0j]])
        for i in reversed(range(n)):
            rho = np.kron(rho, np.diag([1 - p[i], p[i]]).astype(complex))
        L, _, dim = exact._liouvillian(c)
        drho = (L @ rho.ravel()).reshape(dim, dim)

        lay = cumulant._layout(n, order)
        iu, ju = lay["iu"], lay["ju"]
        blocks = [p, np.zeros(lay["m2"]), np.zeros(lay["m2"]), p[iu] * p[ju]]
        if order == 3:
            blocks += [
                p[lay["i3"]] * p[lay["j3"]] * p[lay["k3"]],
                np.zeros(lay["mm"]),
                np.zeros(lay["mm"]),
            ]
        st = cumulant.unpack(np.concatenate(blocks), n, order)
        d = cumulant.rhs(st, c)

        loc = {
            "ee": np.diag([0.0, 1.0]).astype(complex),
            "eg": np.array([[0, 0], [1, 0]], dtype=complex),
            "ge": np.array([[0, 1], [0, 0]], dtype=complex),
        }

        def op(prod):
            m = np.array([[1.0 + 0j]])
            for s in reversed(range(n)):
                m = np.kron(m, loc[prod[s]] if s in prod else np.eye(2))
            return m

        for i in range(n):
            assert d.pop[i] == pytest.approx(
                np.trace(op({i: "ee"}) @ drho).real, abs=1e-12
            )
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                ref = np.trace(op(dict([(i, "eg"), (j, "ge")])) @ drho)
                assert d.coh[i, j] == pytest.approx(ref, abs=1e-12)
                ref = np.trace(op(dict([(i, "ee"), (j, "ee")])) @ drho).real
                assert d.pop2[i, j] == pytest.approx(ref, abs=1e-12)


class TestStructuralInvariants:
    def test_derivative_preserves_hermiticity(self):
        # conjugate/symmetric partners must receive conjugate/symmetric
        # derivatives (only stored, distinct-index entries are meaningful)
        rng = np.random.default_rng(2)
        for order in (2, 3):
            n = 5
            st = cumulant.unpack(
                rng.normal(size=cumulant.packed_size(n, order)), n, order
            )
            d = cumulant.rhs(st, chain_couplings(n))
            off = ~np.eye(n, dtype=bool)
            np.testing.assert_allclose(
                d.coh[off], d.coh.conj().T[off], atol=1e-12
            )
            np.testing.assert_allclose(d.pop2[off], d.pop2.T[off], atol=1e-12)
            if order == 3:
                lay = cumulant._layout(n, 3)
                im, jm, km = lay["im"], lay["jm"], lay["km"]
                np.testing.assert_allclose(
                    d.mixed3[im, jm, km],
                    np.conj(d.mixed3[im, km, jm]),
                    atol=1e-12,
                )
                i3, j3, k3 = lay["i3"], lay["j3"], lay["k3"]
                for p, q, r in ((i3, k3, j3), (j3, i3, k3), (k3, j3, i3)):
                    np.testing.assert_allclose(
                        d.pop3[i3, j3, k3], d.pop3[p, q, r], atol=1e-12
                    )

    def test_rhs_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        n, order = 5, 2
        geom = lattice.build_chain(n, 0.19)
        c = couplings.coupling_matrices(geom)
        y = rng.normal(size=cumulant.packed_size(n, order))
        st = cumulant.unpack(y, n, order)
        d = cumulant.rhs(st, c)

        perm = rng.permutation(n)
        geom_p = lattice.LatticeGeometry(geom.positions[perm], 0.19, "chain")
        c_p = couplings.coupling_matrices(geom_p)
        inv = np.argsort(perm)
        st_p = cumulant.CumulantState(
            order,
            st.pop[perm],
            st.coh[np.ix_(perm, perm)],
            st.pop2[np.ix_(perm, perm)],
        )
        d_p = cumulant.rhs(st_p, c_p)
        np.testing.assert_allclose(d_p.pop, d.pop[perm], atol=1e-12)
        np.testing.assert_allclose(d_p.coh, d.coh[np.ix_(perm, perm)], atol=1e-12)
        np.testing.assert_allclose(d_p.pop2, d.pop2[np.ix_(perm, perm)], atol=1e-12)

    def test_trajectory_hermiticity_drift(self):
        n = 5
        c = chain_couplings(n, a=0.12)
        pattern = lattice.sample_excitation_pattern(n, 3, 8)
        for order in (2, 3):
            st = cumulant.init_state(pattern, order)
            _, final = cumulant.integrate(st, c, t_max=2.0)
            assert np.max(np.abs(final.coh - final.coh.conj().T)) < 1e-9


class TestIntegrate:
    def test_single_atom_exponential(self):
        c = chain_couplings(1)
        series, final = cumulant.integrate(
            cumulant.init_state(full_excitation(1), 2), c, t_max=5.0
        )
        np.testing.assert_allclose(series.p_exc, np.exp(-series.t), atol=1e-6)
        assert final.time == pytest.approx(series.t[-1])

    def test_mean_field_partial_inversion_is_exponential(self):
        n, n_exc = 8, 3
        c = chain_couplings(n, a=0.1)
        pattern = lattice.sample_excitation_pattern(n, n_exc, 0)
        series, _ = cumulant.integrate(cumulant.init_state(pattern, 1), c, t_max=4.0)
        np.testing.assert_allclose(series.p_exc, n_exc * np.exp(-series.t), atol=1e-5)

    def test_early_decay_rate_nonnegative(self):
        c = chain_couplings(6, a=0.1)
        series, _ = cumulant.integrate(
            cumulant.init_state(full_excitation(6), 2), c, t_max=4.0
        )
        peak_idx = int(np.argmax(series.gamma_tot))
        assert np.all(series.gamma_tot[: peak_idx + 1] >= 0.0)

    def test_trajectory_permutation_equivariance(self):
        n = 4
        geom = lattice.build_chain(n, 0.15)
        pattern = ExcitationPattern(n, frozenset({0, 2}))
        series, final = cumulant.integrate(
            cumulant.init_state(pattern, 2),
            couplings.coupling_matrices(geom),
            t_max=2.0,
        )
        perm = np.array([2, 0, 3, 1])
        geom_p = lattice.LatticeGeometry(geom.positions[perm], 0.15, "chain")
        pattern_p = ExcitationPattern(
            n, frozenset(int(np.argsort(perm)[s]) for s in pattern.excited)
        )
        series_p, final_p = cumulant.integrate(
            cumulant.init_state(pattern_p, 2),
            couplings.coupling_matrices(geom_p),
            t_max=2.0,
        )
        np.testing.assert_allclose(series_p.p_exc, series.p_exc, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(final_p.pop, final.pop[perm], rtol=1e-6, atol=1e-8)

    def test_invalid_arguments(self):
        c = chain_couplings(2)
        st = cumulant.init_state(full_excitation(2), 2)
        with pytest.raises(InvalidArgumentError):
            cumulant.integrate(st, c, t_max=-1.0)
        with pytest.raises(InvalidArgumentError):
            cumulant.integrate(st, c, t_max=1.0, sample_dt=0.0)
        with pytest.raises(InvalidArgumentError):
            cumulant.integrate(st, c, t_max=1.0, rtol=-1e-6)

    def test_blowup_detected(self):
        c = chain_couplings(3, a=0.05)
        st = cumulant.init_state(full_excitation(3), 2)
        st.pop[:] = np.nan
        with pytest.raises((NumericalBlowupError, StiffnessError)):
            cumulant.integrate(st, c, t_max=1.0)


def test_order3_guard_condition():
    assert cumulant.order3_guard_applies(121, 0.05)
    assert not cumulant.order3_guard_applies(100, 0.05)
    assert not cumulant.order3_guard_applies(121, 0.1)
    assert not cumulant.order3_guard_applies(36, 0.05)
