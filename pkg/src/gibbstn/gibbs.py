"""Low-rank thermal states built from a gauged network's bond subspace.

The Hamiltonian is projected onto products of the two half-network basis
vectors at the gauge bond, giving a small symmetric matrix whose spectrum
generates the thermal ensemble: keep the lowest levels, weight them with
Boltzmann factors, and every thermodynamic quantity follows from the retained
spectrum.  Observables are evaluated by projecting the operator through the
same half-networks, which equals the physical-space trace by isometry.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .environments import EnvironmentCache
from .errors import UsageError
from .groundstate import VariationalResult
from .models import HamiltonianTerms
from .network import TreeNetwork, overlap
from .tensor import SymmetricMatrix, eigh, lanczos_lowest

__all__ = [
    "EffectiveHamiltonian",
    "ThermalEnsemble",
    "effective_bond_hamiltonian",
    "thermal_ensemble",
    "free_energy",
    "thermodynamics",
    "observable_expectation",
    "improved_mixture",
    "excited_only_ansatz",
    "t_max_scan",
]

WEIGHT_FLOOR = 1e-16  # relative weight below which levels are skipped in traces


def assemble_bond_operator(net: TreeNetwork, terms) -> np.ndarray:
    """Project a term list onto the bond product basis of a gauged network."""
    net.require_gauge()
    cache = EnvironmentCache(net, terms)
    u, v = net.gauge_edge
    d_a, d_b = net.bond_matrix.shape
    ha, hb, crossing = cache.bond_blocks((u, v))
    mat = np.zeros((d_a * d_b, d_a * d_b))
    m4 = mat.reshape(d_a, d_b, d_a, d_b)
    if ha is not None:
        for i in range(d_b):
            m4[:, i, :, i] += ha
    if hb is not None:
        for i in range(d_a):
            m4[i, :, i, :] += hb
    for coeff, ea, eb in crossing:
        ea = coeff * (ea if ea is not None else np.eye(d_a))
        ebm = eb if eb is not None else np.eye(d_b)
        for i in range(d_a):
            # m4[i, b', a, b] += ea[i, a] * eb[b', b]
            m4[i] += ebm[:, None, :] * ea[i][None, :, None]
    if cache.constant:
        mat[np.diag_indices_from(mat)] += cache.constant
    return mat


@dataclass
class EffectiveHamiltonian:
    """The Hamiltonian compressed to the bond product basis.

    Basis index is ``alpha * d_b + beta`` with alpha (beta) labelling the A
    (B) half-network vectors at ``bond``.
    """

    matrix: SymmetricMatrix
    bond: tuple
    source: str
    d_a: int
    d_b: int
    source_net: TreeNetwork | None = None
    _full: tuple | None = field(default=None, repr=False)
    _partial: tuple | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.dim

    def eigensystem(self, chi: int):
        """Lowest ``chi`` eigenpairs; full dense solve when chi is a sizable
        fraction of the dimension, iterative otherwise.  Results are cached."""
        dim = self.dim
        if not 1 <= chi <= dim:
            raise UsageError(f"need 1 <= chi <= {dim}, got {chi}")
        if self._full is not None:
            w, v = self._full
            return w[:chi], v[:, :chi]
        if self._partial is not None and len(self._partial[0]) >= chi:
            w, v = self._partial
            return w[:chi], v[:, :chi]
        use_dense = dim <= 4096 or chi > 128 or 8 * chi >= dim
        if use_dense:
            w, v = eigh(self.matrix)
            self._full = (w, v)
            return w[:chi], v[:, :chi]
        w, v = lanczos_lowest(lambda x: self.matrix.data @ x, dim, chi,
                              tol=1e-11, basis_cap=max(200, 3 * chi))
        self._partial = (w, v)
        return w, v


def effective_bond_hamiltonian(net: TreeNetwork, h: HamiltonianTerms,
                               source: str = "ground") -> EffectiveHamiltonian:
    """Project ``h`` onto the bond subspace of a canonical network."""
    net.require_gauge()
    if h.n_sites != net.topology.n_sites:
        raise UsageError("Hamiltonian geometry does not match the network")
    mat = assemble_bond_operator(net, h)
    d_a, d_b = net.bond_matrix.shape
    return EffectiveHamiltonian(matrix=SymmetricMatrix(mat), bond=net.gauge_edge,
                                source=source, d_a=d_a, d_b=d_b, source_net=net)


@dataclass
class ThermalEnsemble:
    """Boltzmann mixture over retained effective levels.

    ``vectors`` holds the eigenvectors in the bond product basis; it is None
    for mixed-source ensembles (improved ansatz), which support free energies
    and thermodynamics but not reduced-space observables.
    """

    energies: np.ndarray
    weights: np.ndarray
    beta: float
    chi: int
    log_z: float
    vectors: np.ndarray | None = None
    source: EffectiveHamiltonian | None = None
    kind: str = "effective"

    @property
    def z_tilde(self) -> float:
        return math.exp(self.log_z) if np.isfinite(self.log_z) else math.inf


def _check_beta(beta: float):
    if not (beta > 0.0):
        raise UsageError(f"beta must be positive (or math.inf), got {beta}")


def _boltzmann(energies: np.ndarray, beta: float):
    e0 = float(energies[0])
    if math.isinf(beta):
        w = np.zeros(len(energies))
        w[0] = 1.0
        return w, math.inf
    shifted = np.exp(-beta * (energies - e0))
    z_shift = float(np.sum(shifted))
    log_z = -beta * e0 + math.log(z_shift)
    return shifted / z_shift, log_z


def thermal_ensemble(eff: EffectiveHamiltonian, beta: float,
                     chi: int) -> ThermalEnsemble:
    """Retain the ``chi`` lowest effective levels at inverse temperature beta."""
    _check_beta(beta)
    energies, vectors = eff.eigensystem(chi)
    weights, log_z = _boltzmann(energies, beta)
    return ThermalEnsemble(energies=energies, weights=weights, beta=beta,
                           chi=chi, log_z=log_z, vectors=vectors, source=eff)


def free_energy(ens: ThermalEnsemble) -> float:
    """-T ln Z over the retained levels (the ground energy at beta = inf)."""
    if math.isinf(ens.beta):
        return float(ens.energies[0])
    return -ens.log_z / ens.beta


def thermodynamics(ens: ThermalEnsemble, t_grid) -> dict:
    """F, U, S on a temperature grid from the retained spectrum, plus the
    heat capacity from centered differences of U (omitted for grids < 3)."""
    t_grid = np.asarray(t_grid, dtype=float)
    if len(t_grid) == 0 or np.any(np.diff(t_grid) <= 0) or np.any(t_grid <= 0):
        raise UsageError("temperature grid must be positive and ascending")
    e = ens.energies
    f_arr = np.empty(len(t_grid))
    u_arr = np.empty(len(t_grid))
    s_arr = np.empty(len(t_grid))
    for i, t in enumerate(t_grid):
        w, log_z = _boltzmann(e, 1.0 / t)
        f_arr[i] = -t * log_z
        u_arr[i] = float(w @ e)
        nz = w > 0
        s_arr[i] = -float(np.sum(w[nz] * np.log(w[nz])))
    out = {"T": t_grid, "F": f_arr, "U": u_arr, "S": s_arr}
    if len(t_grid) >= 3:
        c = np.gradient(u_arr, t_grid)
        out["C"] = c
    return out


def observable_expectation(ens: ThermalEnsemble, op) -> float:
    """Tr(rho_beta O) via the operator projected through the half-networks."""
    if ens.vectors is None or ens.source is None or ens.source.source_net is None:
        raise UsageError("this ensemble does not retain eigenvectors; "
                         "observables need an effective-Hamiltonian source")
    net = ens.source.source_net
    terms = op if isinstance(op, (HamiltonianTerms, list, tuple)) else (op,)
    omat = assemble_bond_operator(net, terms)
    keep = ens.weights > WEIGHT_FLOOR * ens.weights[0]
    v = ens.vectors[:, keep]
    w = ens.weights[keep]
    return float(np.einsum("ik,ik,k->", v, omat @ v, w))


def improved_mixture(ground: VariationalResult, excited: VariationalResult,
                     h: HamiltonianTerms, beta: float, chi: int,
                     eff1: EffectiveHamiltonian | None = None) -> ThermalEnsemble:
    """Mixture of the explicit ground state with the excited-state bond ensemble.

    The ground level enters with weight exp(-beta E0); the remaining levels
    come from the effective Hamiltonian of the excited state's bond, with any
    level below the excited energy dropped (those re-approximate the ground
    state, which is already counted).  Pass ``eff1`` to reuse a previously
    built excited-bond Hamiltonian across temperatures.
    """
    _check_beta(beta)
    for r, name in ((ground, "ground"), (excited, "excited")):
        if r.hamiltonian.terms != h.terms:
            raise UsageError(f"{name} state was optimized for a different "
                             "Hamiltonian")
    ov = abs(overlap(ground.net, excited.net))
    if ov > 1e-4:
        raise UsageError(f"ground/excited overlap {ov:.2e} exceeds 1e-4; "
                         "the mixture would double-count weight")
    if eff1 is None:
        eff1 = effective_bond_hamiltonian(excited.net, h, source="excited-1")
    n_levels = min(chi + 8, eff1.dim)
    energies1, _ = eff1.eigensystem(n_levels)
    drop_tol = 1e-8 * max(1.0, abs(excited.energy))
    kept = energies1[energies1 >= excited.energy - drop_tol][:chi]
    combined = np.concatenate(([ground.energy], kept))
    order = np.argsort(combined)
    combined = combined[order]
    weights, log_z = _boltzmann(combined, beta)
    return ThermalEnsemble(energies=combined, weights=weights, beta=beta,
                           chi=len(combined), log_z=log_z, vectors=None,
                           source=eff1, kind="mixture")


def excited_only_ansatz(excited: VariationalResult, h: HamiltonianTerms,
                        beta: float, chi: int,
                        eff1: EffectiveHamiltonian | None = None) -> ThermalEnsemble:
    """Thermal ensemble from the excited state's bond subspace alone."""
    if excited.hamiltonian.terms != h.terms:
        raise UsageError("excited state was optimized for a different Hamiltonian")
    if eff1 is None:
        eff1 = effective_bond_hamiltonian(excited.net, h, source="excited-1")
    return thermal_ensemble(eff1, beta, chi)


def t_max_scan(t_grid, f_method, f_exact, eps_th: float = 1e-2) -> float:
    """Largest grid temperature up to which the relative free-energy error
    stays below ``eps_th`` on every earlier grid point."""
    t_grid = np.asarray(t_grid, dtype=float)
    f_method = np.asarray(f_method, dtype=float)
    f_exact = np.asarray(f_exact, dtype=float)
    if not (len(t_grid) == len(f_method) == len(f_exact)):
        raise UsageError("curves must share one temperature grid")
    if len(t_grid) == 0 or np.any(np.diff(t_grid) <= 0):
        raise UsageError("temperature grid must be ascending")
    err = np.abs(f_method - f_exact) / np.abs(f_exact)
    bad = np.nonzero(err >= eps_th)[0]
    if len(bad) == 0:
        return float(t_grid[-1])
    if bad[0] == 0:
        warnings.warn("relative error exceeds the threshold already at the "
                      "first grid point; T_max = 0", stacklevel=2)
        return 0.0
    return float(t_grid[bad[0] - 1])
