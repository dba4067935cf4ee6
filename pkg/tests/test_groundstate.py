"""Variational optimizer checks against ED and free-fermion oracles."""

import numpy as np
import pytest

from gibbstn.errors import UsageError
from gibbstn.models import (
    CouplingTerm,
    LatticeGeometry,
    build_tfi,
    ed_spectrum,
    free_fermion_tfi_1d,
    lowest_energies,
)
from gibbstn.groundstate import (
    SweepConfig,
    optimize_excited_state,
    optimize_ground_state,
)
from gibbstn.network import expectation, overlap, schmidt_spectrum

SQRT5 = np.sqrt(5.0)


class TestGroundState:
    def test_two_site_exact(self):
        h = build_tfi(LatticeGeometry("chain", 2), 1.0, 1.0)
        res = optimize_ground_state(h, SweepConfig(d_max=2, max_sweeps=8), seed=0)
        assert res.energy == pytest.approx(-SQRT5, abs=1e-10)
        assert res.converged

    def test_chain16_matches_free_fermions(self):
        h = build_tfi(LatticeGeometry("chain", 16), 1.0, 1.0)
        res = optimize_ground_state(
            h, SweepConfig(d_max=16, max_sweeps=20, tol=1e-12), seed=3
        )
        e_exact = free_fermion_tfi_1d(16, 1.0, 1.0).ground_energy
        assert abs(res.energy - e_exact) <= 1e-8 * abs(e_exact)

    def test_strong_field_product_limit(self):
        h = build_tfi(LatticeGeometry("chain", 8), 1.0, 50.0)
        res = optimize_ground_state(h, SweepConfig(d_max=4, max_sweeps=10), seed=1)
        for s in range(8):
            assert expectation(res.net, CouplingTerm(1.0, [(s, "X")])) >= 0.999

    def test_variational_bound_and_monotone_history(self):
        h = build_tfi(LatticeGeometry("chain", 10), 1.0, 0.9)
        res = optimize_ground_state(h, SweepConfig(d_max=8, max_sweeps=12), seed=2)
        e_exact = ed_spectrum(h, "full").energies[0]
        assert res.energy >= e_exact - 1e-10
        hist = np.asarray(res.sweep_history)
        assert np.all(np.diff(hist) <= 1e-10 * max(1.0, abs(hist[-1])))

    def test_monotone_in_bond_dimension(self):
        h = build_tfi(LatticeGeometry("chain", 12), 1.0, 1.0)
        energies = []
        for d in (2, 4, 8):
            res = optimize_ground_state(
                h, SweepConfig(d_max=d, ramp=((d, 10),)), seed=5
            )
            energies.append(res.energy)
        assert energies[0] >= energies[1] >= energies[2]

    def test_energy_matches_expectation(self):
        h = build_tfi(LatticeGeometry("chain", 9), 1.0, 1.2)
        res = optimize_ground_state(h, SweepConfig(d_max=8, max_sweeps=10), seed=4)
        assert expectation(res.net, h) == pytest.approx(res.energy, abs=1e-9)

    def test_canonical_and_schmidt_normalized(self):
        h = build_tfi(LatticeGeometry("chain", 8), 1.0, 1.0)
        res = optimize_ground_state(h, SweepConfig(d_max=6, max_sweeps=8), seed=6)
        assert res.net.gauge_edge == res.net.topology.root_bond
        assert res.net.isometry_defect() <= 1e-8
        lam = schmidt_spectrum(res.net)
        assert np.sum(lam.values**2) == pytest.approx(1.0, abs=1e-10)

    def test_mps_layout(self):
        h = build_tfi(LatticeGeometry("chain", 12), 1.0, 1.0)
        res = optimize_ground_state(
            h, SweepConfig(d_max=12, max_sweeps=14, layout="mps"), seed=7
        )
        e_exact = ed_spectrum(h, "full").energies[0]
        assert res.energy == pytest.approx(e_exact, abs=1e-7)

    def test_square_lattice_small(self):
        geom = LatticeGeometry("square", 2)
        h = build_tfi(geom, 1.0, 1.8)
        res = optimize_ground_state(h, SweepConfig(d_max=4, max_sweeps=10), seed=8)
        e_exact = ed_spectrum(h, "full").energies[0]
        assert res.energy == pytest.approx(e_exact, abs=1e-8)

    def test_dense_solver_small_system(self):
        h = build_tfi(LatticeGeometry("chain", 6), 1.0, 1.0)
        res = optimize_ground_state(
            h, SweepConfig(d_max=8, max_sweeps=8, solver="dense"), seed=9
        )
        e_exact = ed_spectrum(h, "full").energies[0]
        assert res.energy == pytest.approx(e_exact, abs=1e-9)


class TestExcitedState:
    def test_two_site_first_excited(self):
        h = build_tfi(LatticeGeometry("chain", 2), 1.0, 1.0)
        cfg = SweepConfig(d_max=2, max_sweeps=10)
        gs = optimize_ground_state(h, cfg, seed=0)
        ex = optimize_excited_state(h, cfg, [gs], seed=11)
        assert ex.energy == pytest.approx(-1.0, abs=1e-8)
        assert abs(overlap(gs.net, ex.net)) <= 1e-6

    def test_gap_matches_free_fermions(self):
        L, g = 12, 1.5
        h = build_tfi(LatticeGeometry("chain", L), 1.0, g)
        cfg = SweepConfig(d_max=12, max_sweeps=16, tol=1e-12)
        gs = optimize_ground_state(h, cfg, seed=1)
        ex = optimize_excited_state(h, cfg, [gs], seed=12)
        modes = free_fermion_tfi_1d(L, 1.0, g)
        gap_exact = float(lowest_energies(modes, 2)[1] - modes.ground_energy)
        gap = ex.energy - gs.energy
        assert gap == pytest.approx(gap_exact, rel=1e-6)

    def test_duplicate_reference_is_harmless(self):
        h = build_tfi(LatticeGeometry("chain", 6), 1.0, 1.2)
        cfg = SweepConfig(d_max=6, max_sweeps=12)
        gs = optimize_ground_state(h, cfg, seed=2)
        ex1 = optimize_excited_state(h, cfg, [gs], seed=13)
        ex2 = optimize_excited_state(h, cfg, [gs, gs], seed=13)
        assert ex1.energy == pytest.approx(ex2.energy, abs=1e-8)

    def test_second_excited(self):
        h = build_tfi(LatticeGeometry("chain", 8), 1.0, 1.3)
        cfg = SweepConfig(d_max=8, max_sweeps=14, tol=1e-11)
        gs = optimize_ground_state(h, cfg, seed=3)
        e1 = optimize_excited_state(h, cfg, [gs], seed=14)
        e2 = optimize_excited_state(h, cfg, [gs, e1], seed=15)
        exact = ed_spectrum(h, "full").energies
        assert gs.energy == pytest.approx(exact[0], abs=1e-8)
        assert e1.energy == pytest.approx(exact[1], abs=1e-7)
        assert e2.energy == pytest.approx(exact[2], abs=1e-6)

    def test_requires_references(self):
        h = build_tfi(LatticeGeometry("chain", 4), 1.0, 1.0)
        with pytest.raises(UsageError):
            optimize_excited_state(h, SweepConfig(d_max=4), [])

    def test_rejects_mismatched_hamiltonian(self):
        h1 = build_tfi(LatticeGeometry("chain", 4), 1.0, 1.0)
        h2 = build_tfi(LatticeGeometry("chain", 4), 1.0, 2.0)
        gs = optimize_ground_state(h1, SweepConfig(d_max=4, max_sweeps=6), seed=4)
        with pytest.raises(UsageError):
            optimize_excited_state(h2, SweepConfig(d_max=4), [gs])
