"""Spin Hamiltonians as local-term lists, plus exact validation oracles.

Models are kept as lists of weighted Pauli product terms over a lattice
geometry; nothing here knows about tensor networks.  The oracles (dense and
iterative exact diagonalization, Jordan-Wigner free fermions) provide the
reference energies and free-energy curves the rest of the package is tested
against.

Scalars stay real throughout: Y operators are only admitted in pairs and are
mapped internally to the real antisymmetric matrix iY, with the term
coefficient absorbing the phase.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .errors import ResourceLimitError, UsageError
from .tensor import SymmetricMatrix, eigh, lanczos_lowest

__all__ = [
    "LatticeGeometry",
    "CouplingTerm",
    "HamiltonianTerms",
    "ExactSpectrum",
    "FreeFermionModes",
    "build_tfi",
    "build_xy_chain",
    "ed_spectrum",
    "ed_ground_state",
    "dense_hamiltonian",
    "hamiltonian_action",
    "free_fermion_tfi_1d",
    "free_fermion_xy_chain",
    "exact_free_energy",
    "lowest_energies",
    "operator_matrix",
    "real_factors",
]

FULL_ED_MAX_SITES = 14
LANCZOS_ED_MAX_SITES = 24

_PAULI = {
    "I": np.eye(2),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]]),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]]),
    # iY: real antisymmetric stand-in for Y, see real_factors()
    "_IY": np.array([[0.0, 1.0], [-1.0, 0.0]]),
}


def operator_matrix(label: str) -> np.ndarray:
    """Real 2x2 matrix for a single-site operator label (I, X, Z only)."""
    if label in ("I", "X", "Z"):
        return _PAULI[label].copy()
    if label == "Y":
        raise UsageError("single Y operators have no real representation; "
                         "Y factors are only supported in pairs")
    raise UsageError(f"unknown operator label {label!r}")


@dataclass(frozen=True)
class LatticeGeometry:
    """Chain or square lattice of spin-1/2 sites.

    ``L`` is the linear size; the site count is ``L`` for chains and ``L**2``
    for square lattices (row-major site indexing).
    """

    kind: str
    L: int
    boundary: str = "open"

    def __post_init__(self):
        if self.kind not in ("chain", "square"):
            raise UsageError(f"unknown lattice kind {self.kind!r}")
        if self.boundary not in ("open", "periodic"):
            raise UsageError(f"unknown boundary {self.boundary!r}")
        if self.L < 1:
            raise UsageError("linear size L must be >= 1")

    @property
    def n_sites(self) -> int:
        return self.L if self.kind == "chain" else self.L * self.L

    def site_index(self, row: int, col: int) -> int:
        if self.kind != "square":
            raise UsageError("site_index(row, col) only applies to square lattices")
        return row * self.L + col

    def bonds(self) -> list[tuple[int, int]]:
        """Nearest-neighbor pairs, each unordered pair listed once."""
        out = []
        L = self.L
        if self.kind == "chain":
            out.extend((i, i + 1) for i in range(L - 1))
            if self.boundary == "periodic" and L > 2:
                out.append((L - 1, 0))
        else:
            for r in range(L):
                for c in range(L):
                    s = self.site_index(r, c)
                    if c + 1 < L:
                        out.append((s, self.site_index(r, c + 1)))
                    elif self.boundary == "periodic" and L > 2:
                        out.append((s, self.site_index(r, 0)))
                    if r + 1 < L:
                        out.append((s, self.site_index(r + 1, c)))
                    elif self.boundary == "periodic" and L > 2:
                        out.append((s, self.site_index(0, c)))
        return out


@dataclass(frozen=True)
class CouplingTerm:
    """One weighted product of single-site operators.

    ``factors`` maps distinct sites to labels in {I, X, Y, Z}.  Identity
    factors are tolerated for observables but are stripped from Hamiltonians.
    """

    coefficient: float
    factors: tuple[tuple[int, str], ...]

    def __init__(self, coefficient: float, factors: Iterable[tuple[int, str]]):
        factors = tuple((int(s), str(p)) for s, p in factors)
        if not factors:
            raise UsageError("a coupling term needs at least one factor")
        sites = [s for s, _ in factors]
        if len(set(sites)) != len(sites):
            raise UsageError(f"repeated site in term factors {factors}")
        for s, p in factors:
            if s < 0:
                raise UsageError(f"negative site index {s}")
            if p not in ("I", "X", "Y", "Z"):
                raise UsageError(f"unknown Pauli label {p!r}")
        object.__setattr__(self, "coefficient", float(coefficient))
        object.__setattr__(self, "factors", factors)

    @property
    def sites(self) -> tuple[int, ...]:
        return tuple(s for s, _ in self.factors)


def real_factors(term: CouplingTerm) -> tuple[float, list[tuple[int, np.ndarray]]]:
    """Rewrite a term with real matrices, mapping Y pairs to (iY) pairs.

    Returns the adjusted coefficient and (site, matrix) factors with identity
    factors dropped.  Terms with an odd number of Y factors are rejected.
    """
    n_y = sum(1 for _, p in term.factors if p == "Y")
    if n_y % 2:
        raise UsageError(
            "terms with an odd number of Y factors are not representable "
            "with real scalars"
        )
    coeff = term.coefficient * ((-1.0) ** (n_y // 2))
    factors = []
    for s, p in term.factors:
        if p == "I":
            continue
        factors.append((s, _PAULI["_IY"] if p == "Y" else _PAULI[p]))
    return coeff, factors


@dataclass(frozen=True)
class HamiltonianTerms:
    """A Hamiltonian as a list of coupling terms over a geometry."""

    geometry: LatticeGeometry
    terms: tuple[CouplingTerm, ...]
    tag: str = "custom"

    def __post_init__(self):
        n = self.geometry.n_sites
        for t in self.terms:
            for s, p in t.factors:
                if s >= n:
                    raise UsageError(f"term site {s} outside lattice of {n} sites")
                if p == "I":
                    raise UsageError("identity factors are not allowed in Hamiltonians")
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def n_sites(self) -> int:
        return self.geometry.n_sites

    def coefficient_norm(self) -> float:
        """Sum of |coefficients|; a cheap upper bound for the spectral scale."""
        return float(sum(abs(t.coefficient) for t in self.terms))


def build_tfi(geometry: LatticeGeometry, J: float, g: float) -> HamiltonianTerms:
    """Transverse-field Ising Hamiltonian H = J sum ZZ - g sum X."""
    terms = [CouplingTerm(J, [(i, "Z"), (j, "Z")]) for i, j in geometry.bonds()]
    terms += [CouplingTerm(-g, [(i, "X")]) for i in range(geometry.n_sites)]
    tag = "tfi1d" if geometry.kind == "chain" else "tfi2d"
    return HamiltonianTerms(geometry, tuple(terms), tag)


def build_xy_chain(geometry: LatticeGeometry, coupling: float) -> HamiltonianTerms:
    """XY chain H = coupling * sum (XX + YY) on nearest neighbors."""
    if geometry.kind != "chain":
        raise UsageError("the XY model is only defined on chains here")
    terms = []
    for i, j in geometry.bonds():
        terms.append(CouplingTerm(coupling, [(i, "X"), (j, "X")]))
        terms.append(CouplingTerm(coupling, [(i, "Y"), (j, "Y")]))
    return HamiltonianTerms(geometry, tuple(terms), "xy")


@dataclass(frozen=True)
class ExactSpectrum:
    """Reference many-body energies, ascending.

    ``complete`` is True only when all 2^N levels are present; truncated
    spectra must be acknowledged explicitly when used for free energies.
    """

    energies: np.ndarray
    source: str
    complete: bool

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=np.float64)
        if e.ndim != 1 or e.size == 0:
            raise UsageError("spectrum must be a nonempty 1D energy list")
        if np.any(np.diff(e) < -1e-12 * max(1.0, np.abs(e).max())):
            raise UsageError("spectrum energies must be ascending")
        object.__setattr__(self, "energies", np.sort(e))


@dataclass(frozen=True)
class FreeFermionModes:
    """Free-fermion solution: ground energy plus excitation quanta.

    Many-body energies are ``ground_energy`` plus subset sums of
    ``excitations`` (all nonnegative, ascending).
    """

    excitations: np.ndarray
    ground_energy: float
    model: str = ""

    def __post_init__(self):
        eps = np.sort(np.asarray(self.excitations, dtype=np.float64))
        if eps.size and eps[0] < -1e-12:
            raise UsageError("excitation energies must be nonnegative")
        object.__setattr__(self, "excitations", np.clip(eps, 0.0, None))
        object.__setattr__(self, "ground_energy", float(self.ground_energy))


# ---------------------------------------------------------------------------
# state-vector machinery (basis: site 0 is the most significant bit)


class HamiltonianAction:
    """Matrix-free application of a term list to a 2^N state vector."""

    def __init__(self, h: HamiltonianTerms):
        n = h.n_sites
        if n > LANCZOS_ED_MAX_SITES:
            raise ResourceLimitError(
                f"{n} sites exceeds the {LANCZOS_ED_MAX_SITES}-site cap for "
                "state-vector operations"
            )
        self.n_sites = n
        self.dim = 2**n
        shape = (2,) * n
        diag = np.zeros(self.dim)
        flips = []  # (flip_axes, coeff, sign_vector or None)
        idx = np.arange(self.dim, dtype=np.uint64)
        for term in h.terms:
            coeff, factors = real_factors(term)
            if not factors:
                continue
            flip_axes = []
            sign = None
            for site, mat in factors:
                bit = ((idx >> np.uint64(n - 1 - site)) & np.uint64(1)).astype(np.int8)
                if mat[0, 0] != 0.0:  # diagonal factor: Z
                    s = (1 - 2 * bit).astype(np.int8)
                elif mat[0, 1] == mat[1, 0]:  # X
                    flip_axes.append(site)
                    continue
                else:  # iY: column action (iY)|0> = -|1>, (iY)|1> = +|0>
                    flip_axes.append(site)
                    s = (2 * bit - 1).astype(np.int8)
                sign = s if sign is None else (sign * s).astype(np.int8)
            if not flip_axes:
                diag += coeff * sign.astype(np.float64)
            else:
                flips.append((tuple(flip_axes), coeff, sign))
        self._shape = shape
        self.diagonal = diag
        self.flip_terms = flips

    def __call__(self, v: np.ndarray) -> np.ndarray:
        out = self.diagonal * v
        for axes, coeff, sign in self.flip_terms:
            tmp = coeff * v if sign is None else (coeff * sign) * v
            tmp = np.flip(tmp.reshape(self._shape), axis=axes).reshape(-1)
            out += tmp
        return out


def hamiltonian_action(h: HamiltonianTerms) -> HamiltonianAction:
    return HamiltonianAction(h)


def dense_hamiltonian(h: HamiltonianTerms) -> np.ndarray:
    """Dense 2^N x 2^N matrix of the Hamiltonian (N <= 14)."""
    n = h.n_sites
    if n > FULL_ED_MAX_SITES:
        raise ResourceLimitError(
            f"dense assembly limited to {FULL_ED_MAX_SITES} sites, got {n}"
        )
    action = HamiltonianAction(h)
    dim = action.dim
    mat = np.zeros((dim, dim))
    np.fill_diagonal(mat, action.diagonal)
    idx = np.arange(dim)
    for axes, coeff, sign in action.flip_terms:
        x_mask = 0
        for s in axes:
            x_mask |= 1 << (n - 1 - s)
        vals = np.full(dim, coeff) if sign is None else coeff * sign.astype(np.float64)
        mat[idx ^ x_mask, idx] += vals
    return mat


def ed_spectrum(h: HamiltonianTerms, mode: str = "full", k: int = 6,
                tol: float = 1e-10) -> ExactSpectrum:
    """Exact diagonalization of the assembled Hamiltonian.

    ``mode="full"`` (N <= 14) returns all 2^N energies; ``mode="lowest"``
    (N <= 24) returns the k lowest from the iterative solver, flagged as
    incomplete.
    """
    n = h.n_sites
    if mode == "full":
        if n > FULL_ED_MAX_SITES:
            raise ResourceLimitError(
                f"full ED limited to {FULL_ED_MAX_SITES} sites, got {n}"
            )
        w, _ = eigh(SymmetricMatrix(dense_hamiltonian(h)))
        return ExactSpectrum(w, source="full-ed", complete=True)
    if mode == "lowest":
        action = HamiltonianAction(h)
        w, _ = lanczos_lowest(action, action.dim, k, tol=tol)
        return ExactSpectrum(w, source="lanczos-partial", complete=False)
    raise UsageError(f"unknown ED mode {mode!r}")


def ed_ground_state(h: HamiltonianTerms, tol: float = 1e-12):
    """Ground energy and state vector via the iterative solver (N <= 24)."""
    action = HamiltonianAction(h)
    w, v = lanczos_lowest(action, action.dim, 1, tol=tol)
    return float(w[0]), v[:, 0]


# ---------------------------------------------------------------------------
# free-fermion oracles


def free_fermion_tfi_1d(L: int, J: float, g: float,
                        boundary: str = "open") -> FreeFermionModes:
    """Jordan-Wigner solution of the open TFI chain.

    Assembles the 2L x 2L Bogoliubov-de Gennes matrix and returns the L
    nonnegative single-particle energies; the many-body ground energy is
    minus half their sum.
    """
    if boundary != "open":
        raise UsageError(
            "free-fermion oracle only supports open boundaries; "
            "use ED or CFT formulas for periodic chains"
        )
    if L < 1:
        raise UsageError("L must be >= 1")
    a = 2.0 * g * np.eye(L)
    b = np.zeros((L, L))
    for i in range(L - 1):
        a[i, i + 1] = a[i + 1, i] = J
        b[i, i + 1] = J
        b[i + 1, i] = -J
    bdg = np.block([[a, b], [-b, -a]])
    w = np.linalg.eigvalsh(bdg)
    eps = w[L:]
    return FreeFermionModes(eps, ground_energy=-0.5 * float(np.sum(eps)),
                            model=f"tfi1d L={L} J={J} g={g} obc")


def free_fermion_xy_chain(L: int, coupling: float) -> FreeFermionModes:
    """Free-fermion solution of the open XY chain (number conserving)."""
    if L < 1:
        raise UsageError("L must be >= 1")
    a = np.zeros((L, L))
    for i in range(L - 1):
        a[i, i + 1] = a[i + 1, i] = 2.0 * coupling
    modes = np.linalg.eigvalsh(a)
    e0 = float(np.sum(modes[modes < 0.0]))
    return FreeFermionModes(np.abs(modes), ground_energy=e0,
                            model=f"xy L={L} coupling={coupling} obc")


def lowest_energies(modes: FreeFermionModes, count: int) -> np.ndarray:
    """The ``count`` lowest many-body energies from free-fermion modes."""
    eps = modes.excitations
    n = len(eps)
    count = min(int(count), 2**min(n, 60))
    if count < 1:
        raise UsageError("count must be >= 1")
    sums = [0.0]
    if n and count > 1:
        heap = [(float(eps[0]), 0)]
        while heap and len(sums) < count:
            s, i = heapq.heappop(heap)
            sums.append(s)
            if i + 1 < n:
                heapq.heappush(heap, (s + float(eps[i + 1]), i + 1))
                heapq.heappush(heap, (s - float(eps[i]) + float(eps[i + 1]), i + 1))
    return modes.ground_energy + np.asarray(sums[:count])


# ---------------------------------------------------------------------------
# free energies


def _free_energy_from_energies(energies: np.ndarray, beta: float) -> float:
    e0 = float(np.min(energies))
    if math.isinf(beta):
        return e0
    t = 1.0 / beta
    return e0 - t * float(np.log(np.sum(np.exp(-beta * (energies - e0)))))


def exact_free_energy(source, beta: float, *, allow_truncated: bool = False) -> float:
    """Free energy from a spectrum or from free-fermion modes.

    ``beta`` must be positive and finite, or ``math.inf`` for the ground
    state limit.  A truncated :class:`ExactSpectrum` is refused unless
    ``allow_truncated`` is set; the truncated value upper-bounds the exact
    free energy.
    """
    if not (beta > 0.0):
        raise UsageError(f"beta must be positive (or inf), got {beta}")
    if isinstance(source, ExactSpectrum):
        if not source.complete and not allow_truncated:
            raise UsageError(
                "truncated spectrum: pass allow_truncated=True to acknowledge "
                "the bias (the result upper-bounds the exact free energy)"
            )
        return _free_energy_from_energies(source.energies, beta)
    if isinstance(source, FreeFermionModes):
        if math.isinf(beta):
            return source.ground_energy
        t = 1.0 / beta
        eps = source.excitations
        return source.ground_energy - t * float(np.sum(np.log1p(np.exp(-beta * eps))))
    raise UsageError(f"unsupported free-energy source {type(source).__name__}")
