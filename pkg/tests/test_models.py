"""Model catalog and exact-oracle cross-checks."""

import itertools
import math

import numpy as np
import pytest

from gibbstn.errors import ResourceLimitError, UsageError
from gibbstn.models import (
    CouplingTerm,
    ExactSpectrum,
    LatticeGeometry,
    build_tfi,
    build_xy_chain,
    dense_hamiltonian,
    ed_ground_state,
    ed_spectrum,
    exact_free_energy,
    free_fermion_tfi_1d,
    free_fermion_xy_chain,
    hamiltonian_action,
    lowest_energies,
)

SQRT5 = np.sqrt(5.0)


def kron_term(term, n):
    """Complex-capable kron oracle for a single coupling term."""
    paulis = {
        "I": np.eye(2, dtype=complex),
        "X": np.array([[0, 1], [1, 0]], dtype=complex),
        "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
        "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    }
    ops = [paulis["I"]] * n
    for s, p in term.factors:
        ops[s] = paulis[p]
    out = np.array([[term.coefficient]], dtype=complex)
    for op in ops:
        out = np.kron(out, op)
    return out


def kron_hamiltonian(h):
    n = h.n_sites
    mat = np.zeros((2**n, 2**n), dtype=complex)
    for t in h.terms:
        mat += kron_term(t, n)
    assert np.max(np.abs(mat.imag)) < 1e-12
    return mat.real


class TestBuilders:
    def test_tfi_two_site_terms(self):
        h = build_tfi(LatticeGeometry("chain", 2), J=1.0, g=1.0)
        got = {(t.coefficient, t.factors) for t in h.terms}
        want = {
            (1.0, ((0, "Z"), (1, "Z"))),
            (-1.0, ((0, "X"),)),
            (-1.0, ((1, "X"),)),
        }
        assert got == want

    def test_chain_pbc_bond_count(self):
        h = build_tfi(LatticeGeometry("chain", 3, "periodic"), 1.0, 1.0)
        zz = [t for t in h.terms if len(t.factors) == 2]
        assert len(zz) == 3
        assert ((2, "Z"), (0, "Z")) in [t.factors for t in zz]

    def test_square_pbc_counts(self):
        h = build_tfi(LatticeGeometry("square", 4, "periodic"), 1.0, 1.0)
        zz = [t for t in h.terms if len(t.factors) == 2]
        x = [t for t in h.terms if len(t.factors) == 1]
        assert len(zz) == 32  # 2 L^2 bonds on the torus
        assert len(x) == 16

    def test_xy_requires_chain(self):
        with pytest.raises(UsageError):
            build_xy_chain(LatticeGeometry("square", 2), 1.0)

    def test_xy_single_site_is_empty(self):
        h = build_xy_chain(LatticeGeometry("chain", 1), 1.0)
        assert h.terms == ()

    def test_term_validation(self):
        with pytest.raises(UsageError):
            CouplingTerm(1.0, [])
        with pytest.raises(UsageError):
            CouplingTerm(1.0, [(0, "Z"), (0, "X")])
        with pytest.raises(UsageError):
            CouplingTerm(1.0, [(0, "Q")])
        geom = LatticeGeometry("chain", 2)
        with pytest.raises(UsageError):
            build_tfi(geom, 1.0, 1.0).__class__(
                geom, (CouplingTerm(1.0, [(5, "Z")]),)
            )


class TestAssembly:
    @pytest.mark.parametrize("builder", [
        lambda: build_tfi(LatticeGeometry("chain", 4, "periodic"), 0.7, -1.3),
        lambda: build_xy_chain(LatticeGeometry("chain", 4), 0.9),
        lambda: build_tfi(LatticeGeometry("square", 2), 1.0, 1.8),
    ])
    def test_dense_matches_complex_kron_oracle(self, builder):
        h = builder()
        np.testing.assert_allclose(
            dense_hamiltonian(h), kron_hamiltonian(h), atol=1e-12
        )

    def test_action_matches_dense(self):
        h = build_xy_chain(LatticeGeometry("chain", 5), 1.1)
        mat = dense_hamiltonian(h)
        action = hamiltonian_action(h)
        rng = np.random.default_rng(0)
        v = rng.standard_normal(2**5)
        np.testing.assert_allclose(action(v), mat @ v, atol=1e-12)

    def test_single_y_rejected(self):
        geom = LatticeGeometry("chain", 2)
        h = build_tfi(geom, 1.0, 1.0).__class__(
            geom, (CouplingTerm(1.0, [(0, "Y")]),)
        )
        with pytest.raises(UsageError):
            dense_hamiltonian(h)


class TestEdSpectrum:
    def test_two_site_tfi(self):
        h = build_tfi(LatticeGeometry("chain", 2), 1.0, 1.0)
        spec = ed_spectrum(h, mode="full")
        np.testing.assert_allclose(
            spec.energies, [-SQRT5, -1.0, 1.0, SQRT5], atol=1e-12
        )
        assert spec.complete

    def test_single_site(self):
        h = build_tfi(LatticeGeometry("chain", 1), 1.0, 1.0)
        np.testing.assert_allclose(
            ed_spectrum(h, mode="full").energies, [-1.0, 1.0], atol=1e-14
        )

    def test_lowest_mode_matches_full(self):
        h = build_tfi(LatticeGeometry("chain", 6), 1.0, 1.2)
        full = ed_spectrum(h, mode="full")
        low = ed_spectrum(h, mode="lowest", k=4, tol=1e-12)
        assert not low.complete
        np.testing.assert_allclose(low.energies, full.energies[:4], atol=1e-9)

    def test_antialigned_ground_state_at_zero_field(self):
        for L, boundary, bonds in ((6, "open", 5), (8, "open", 7), (6, "periodic", 6)):
            h = build_tfi(LatticeGeometry("chain", L, boundary), 1.0, 0.0)
            spec = ed_spectrum(h, mode="full")
            assert spec.energies[0] == pytest.approx(-1.0 * bonds, abs=1e-10)

    def test_size_caps(self):
        h = build_tfi(LatticeGeometry("chain", 15), 1.0, 1.0)
        with pytest.raises(ResourceLimitError):
            ed_spectrum(h, mode="full")

    def test_xy_two_site_block(self):
        h = build_xy_chain(LatticeGeometry("chain", 2), 1.0)
        np.testing.assert_allclose(
            ed_spectrum(h, mode="full").energies, [-2.0, 0.0, 0.0, 2.0], atol=1e-12
        )


class TestFreeFermions:
    def test_single_spin_mode(self):
        g = 1.7
        modes = free_fermion_tfi_1d(1, 1.0, g)
        np.testing.assert_allclose(modes.excitations, [2 * g], atol=1e-12)
        beta = 0.9
        want = -math.log(2 * math.cosh(beta * g)) / beta
        assert exact_free_energy(modes, beta) == pytest.approx(want, rel=1e-12)

    def test_two_site_reassembly(self):
        modes = free_fermion_tfi_1d(2, 1.0, 1.0)
        np.testing.assert_allclose(
            lowest_energies(modes, 4), [-SQRT5, -1.0, 1.0, SQRT5], atol=1e-10
        )

    @pytest.mark.parametrize("L", [2, 3, 5, 8])
    @pytest.mark.parametrize("beta", [0.1, 1.0, 10.0])
    def test_free_energy_matches_ed(self, L, beta):
        g = 1.3
        h = build_tfi(LatticeGeometry("chain", L), 1.0, g)
        f_ed = exact_free_energy(ed_spectrum(h, "full"), beta)
        f_ff = exact_free_energy(free_fermion_tfi_1d(L, 1.0, g), beta)
        assert f_ff == pytest.approx(f_ed, abs=1e-9)

    def test_spectrum_reassembly_matches_ed(self):
        h = build_tfi(LatticeGeometry("chain", 6), 1.0, 0.8)
        full = ed_spectrum(h, "full").energies
        modes = free_fermion_tfi_1d(6, 1.0, 0.8)
        np.testing.assert_allclose(lowest_energies(modes, 20), full[:20], atol=1e-9)

    @pytest.mark.parametrize("L", [2, 4, 7])
    @pytest.mark.parametrize("beta", [0.1, 1.0, 10.0])
    def test_xy_free_energy_matches_ed(self, L, beta):
        c = 0.8
        h = build_xy_chain(LatticeGeometry("chain", L), c)
        f_ed = exact_free_energy(ed_spectrum(h, "full"), beta)
        f_ff = exact_free_energy(free_fermion_xy_chain(L, c), beta)
        assert f_ff == pytest.approx(f_ed, abs=1e-9)

    def test_periodic_unsupported(self):
        with pytest.raises(UsageError):
            free_fermion_tfi_1d(4, 1.0, 1.0, boundary="periodic")

    def test_ground_state_helper(self):
        h = build_tfi(LatticeGeometry("chain", 5), 1.0, 1.0)
        e0, v = ed_ground_state(h)
        assert e0 == pytest.approx(ed_spectrum(h, "full").energies[0], abs=1e-9)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-10)


class TestFreeEnergy:
    def test_beta_infinity_returns_ground_energy(self):
        h = build_tfi(LatticeGeometry("chain", 2), 1.0, 1.0)
        assert exact_free_energy(ed_spectrum(h, "full"), math.inf) == pytest.approx(
            -SQRT5, abs=1e-12
        )
        modes = free_fermion_tfi_1d(2, 1.0, 1.0)
        assert exact_free_energy(modes, math.inf) == pytest.approx(-SQRT5, abs=1e-10)

    def test_truncated_requires_acknowledgement(self):
        spec = ExactSpectrum([-2.0, -1.0], source="lanczos-partial", complete=False)
        with pytest.raises(UsageError):
            exact_free_energy(spec, 1.0)
        assert exact_free_energy(spec, 1.0, allow_truncated=True) == pytest.approx(
            -2.0 - math.log(1 + math.e ** (-1.0))
        )

    def test_truncated_upper_bounds_exact(self):
        h = build_tfi(LatticeGeometry("chain", 6), 1.0, 1.0)
        spec = ed_spectrum(h, "full")
        for k in (2, 10, 30):
            part = ExactSpectrum(spec.energies[:k], "full-ed", complete=False)
            assert exact_free_energy(part, 2.0, allow_truncated=True) >= exact_free_energy(
                spec, 2.0
            ) - 1e-12

    def test_invalid_beta(self):
        h = build_tfi(LatticeGeometry("chain", 2), 1.0, 1.0)
        spec = ed_spectrum(h, "full")
        with pytest.raises(UsageError):
            exact_free_energy(spec, 0.0)
        with pytest.raises(UsageError):
            exact_free_energy(spec, -1.0)

    def test_entropy_nonnegative_by_finite_differences(self):
        modes = free_fermion_tfi_1d(12, 1.0, 1.4)
        ts = np.linspace(0.05, 4.0, 40)
        h = 1e-5
        for t in ts:
            f_plus = exact_free_energy(modes, 1.0 / (t + h))
            f_minus = exact_free_energy(modes, 1.0 / (t - h))
            s = -(f_plus - f_minus) / (2 * h)
            assert s >= -1e-9

    def test_overflow_safety(self):
        spec = ExactSpectrum([-200.0, -199.5, 100.0], "full-ed", complete=False)
        f = exact_free_energy(spec, 100.0, allow_truncated=True)
        assert np.isfinite(f)
        assert f == pytest.approx(-200.0, abs=0.01)


class TestLowestEnergies:
    def test_matches_brute_force_enumeration(self):
        from gibbstn.models import FreeFermionModes

        rng = np.random.default_rng(2)
        eps = np.sort(rng.uniform(0.1, 2.0, 8))
        modes = FreeFermionModes(eps, ground_energy=-3.0)
        all_sums = sorted(
            sum(c) for r in range(9) for c in itertools.combinations(eps, r)
        )
        got = lowest_energies(modes, 40)
        np.testing.assert_allclose(got, -3.0 + np.asarray(all_sums[:40]), atol=1e-12)
