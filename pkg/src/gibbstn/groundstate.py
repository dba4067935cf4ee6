"""Variational sweep optimization of tree networks for low-energy states.

One-site updates: at each node the local effective problem (term environments
contracted around the node) is solved for its lowest eigenvector, the gauge
moves on, and environments are refreshed along the way.  The bond dimension
is ramped in stages (each stage runs fixed-D one-site sweeps; bonds grow
between stages by zero-padded embedding with a whisper of noise so the local
solver can rotate into the new directions).

Excited states are found by penalizing overlap with previously converged
states: the local problems acquire a rank-one ``w |ref><ref|`` contribution.

After the sweeps converge, the zero-site (bond) problem at the root is solved
once more, so the stored bond matrix is an exact eigenvector of the bond
effective Hamiltonian built from the final isometries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .environments import EnvironmentCache, OverlapCache
from .errors import ConsistencyError, ConvergenceError, UsageError
from .models import HamiltonianTerms
from .network import (
    TreeNetwork,
    _absorb_into,
    _qr_toward,
    build_topology,
    overlap,
    pad_bond_dims,
    random_network,
    schmidt_spectrum,
)
from .tensor import DenseTensor, lanczos_lowest

__all__ = ["SweepConfig", "VariationalResult", "optimize_ground_state",
           "optimize_excited_state"]

ENERGY_SLACK = 1e-10  # allowed per-sweep energy increase, relative
ORTHO_TOL = 1e-6


@dataclass
class SweepConfig:
    """Knobs for the variational sweeps."""

    d_max: int
    max_sweeps: int = 24
    tol: float = 1e-9              # relative per-sweep energy change
    layout: str = "tree"           # "tree" | "mps"
    solver: str = "lanczos"        # "dense" forces dense local solves
    solver_iters: int = 16         # Lanczos steps per local solve
    dense_cutoff: int = 320        # local dimension at/below which eigh is used
    penalty_weight: float | None = None  # default: 10 x spectral-scale bound
    ramp: tuple | None = None      # ((D, sweeps), ...); auto-derived if None
    ramp_noise: float = 1e-7
    min_sweeps: int = 2

    def __post_init__(self):
        if self.d_max < 1:
            raise UsageError("d_max must be >= 1")
        if self.tol <= 0:
            raise UsageError("tol must be positive")
        if self.solver not in ("lanczos", "dense"):
            raise UsageError(f"unknown local solver {self.solver!r}")

    def stages(self):
        if self.ramp is not None:
            return [(int(d), int(s)) for d, s in self.ramp]
        out = []
        d = min(16, self.d_max)
        while d < self.d_max:
            out.append((d, 3))
            d = min(2 * d, self.d_max)
        out.append((self.d_max, self.max_sweeps))
        return out


@dataclass
class VariationalResult:
    """Converged (or capped) variational state plus its sweep record."""

    net: TreeNetwork
    energy: float
    sweep_history: list
    converged: bool
    hamiltonian: HamiltonianTerms
    diagnostics: dict = field(default_factory=dict)


def _lowest_local(blocks, x0, iters, dense_cutoff, force_dense=False):
    """Lowest eigenpair of the local operator, warm-started at x0."""
    dim = blocks.dim
    if force_dense or dim <= dense_cutoff:
        if dim > 4096:
            raise UsageError(
                f"dense local solver requested for dimension {dim}; "
                "use the lanczos solver"
            )
        w, v = np.linalg.eigh(blocks.dense())
        return float(w[0]), v[:, 0]
    x = x0 / np.linalg.norm(x0)
    basis = [x]
    applied = [blocks.apply(x)]
    best = (np.inf, x)
    for _ in range(iters - 1):
        w = applied[-1].copy()
        for _ in range(2):
            for b in basis:
                w -= (b @ w) * b
        nrm = np.linalg.norm(w)
        if nrm < 1e-12 * max(1.0, np.linalg.norm(applied[-1])):
            break  # invariant subspace: Ritz values are exact
        w /= nrm
        basis.append(w)
        applied.append(blocks.apply(w))
    vmat = np.stack(basis)
    amat = np.stack(applied)
    h = vmat @ amat.T
    h = 0.5 * (h + h.T)
    theta, y = np.linalg.eigh(h)
    vec = y[:, 0] @ vmat
    vec /= np.linalg.norm(vec)
    if not np.isfinite(theta[0]):
        raise ConvergenceError("local eigensolver produced non-finite values",
                               residual=None)
    return float(theta[0]), vec


class _Sweeper:
    def __init__(self, h, cfg, net, below=()):
        self.h = h
        self.cfg = cfg
        self.net = net
        self.topo = net.topology
        self.cache = EnvironmentCache(net, h)
        self.weight = cfg.penalty_weight
        if self.weight is None:
            self.weight = 10.0 * max(1.0, h.coefficient_norm())
        self.ocaches = [OverlapCache(r.net, net) for r in below]
        self.last_theta = np.inf
        # start with the bond folded into the A-side top node
        a, b = self.topo.root_bond
        self.center = a
        self._absorb_bond(a)

    def _absorb_bond(self, node):
        net = self.net
        u, v = net.gauge_edge
        label = self.topo.edge_label(u, v)
        c = net.bond_matrix if node == v else net.bond_matrix.T
        _absorb_into(net, DenseTensor(c, ("__qr", label), copy=False), node, label)
        net.gauge_edge = None
        net.bond_matrix = None
        net.normalized = False

    def _move(self, n, m):
        r = _qr_toward(self.net, n, m)
        _absorb_into(self.net, r, m, self.topo.edge_label(n, m))
        self.cache.refresh(n, m)
        for oc in self.ocaches:
            oc.refresh(n, m)
        self.center = m

    def _solve(self, n):
        blocks = self.cache.local_blocks(n)
        for oc in self.ocaches:
            blocks.penalties.append((self.weight, oc.local_vector(n)))
        t = self.net.tensors[n]
        theta, vec = _lowest_local(
            blocks, t.data.reshape(-1), self.cfg.solver_iters,
            self.cfg.dense_cutoff, force_dense=(self.cfg.solver == "dense"))
        self.net.tensors[n] = DenseTensor(vec.reshape(t.shape), t.legs, copy=False)
        self.last_theta = theta

    def _tour(self, n, frm):
        self._solve(n)
        for w in self.topo.neighbors(n):
            if w == frm:
                continue
            self._move(n, w)
            self._tour(w, n)
            self._move(w, n)

    def sweep(self) -> float:
        self._tour(self.center, None)
        return self.last_theta

    def extract_bond(self):
        """Return to canonical form with the weight on the root bond."""
        a, b = self.topo.root_bond
        if self.center != a:
            raise ConsistencyError("sweep must end at the A-side top node")
        r = _qr_toward(self.net, a, b)
        self.net.gauge_edge = (a, b)
        self.net.bond_matrix = r.data
        self.net.normalized = True
        self.cache.refresh(a, b)
        for oc in self.ocaches:
            oc.refresh(a, b)

    def refine_bond(self):
        """Zero-site solve at the root bond; returns the plain <H> energy."""
        a, b = self.topo.root_bond
        ha, hb, crossing = self.cache.bond_blocks((a, b))
        pens = []
        for oc in self.ocaches:
            # <ref|psi> = <W, C>; the reference bond is already folded into
            # its tensors, so W contracts the two overlap environments over
            # the reference's root index
            oa = oc.env(a, b)
            ob = oc.env(b, a)
            pens.append((oa.T @ ob).reshape(-1))
        c0 = self.net.bond_matrix
        shape = c0.shape

        def apply(x):
            c = x.reshape(shape)
            out = np.zeros_like(c)
            if ha is not None:
                out += ha @ c
            if hb is not None:
                out += c @ hb.T
            for coeff, ea, eb in crossing:
                tmp = ea @ c if ea is not None else c
                out += coeff * (tmp @ eb.T if eb is not None else tmp)
            y = out.reshape(-1)
            for wvec in pens:
                y += (self.weight * float(wvec @ x)) * wvec
            return y

        theta, vec = lanczos_lowest(apply, int(np.prod(shape)), 1, tol=1e-12,
                                    v0=c0.reshape(-1), basis_cap=60)
        v = vec[:, 0]
        v /= np.linalg.norm(v)
        self.net.bond_matrix = v.reshape(shape)
        energy = float(theta[0])
        for wvec in pens:
            energy -= self.weight * float(wvec @ v) ** 2
        return energy


def _optimize(h: HamiltonianTerms, cfg: SweepConfig, seed: int, below):
    for r in below:
        if r.hamiltonian.terms != h.terms:
            raise UsageError("states in `below` were optimized for a different "
                             "Hamiltonian")
        if not r.converged:
            raise UsageError("states in `below` must be converged results")
    topo = build_topology(h.geometry, layout=cfg.layout)
    stages = cfg.stages()
    net = random_network(topo, stages[0][0], seed=seed)
    history = []
    converged = False
    delta = np.inf
    scale = max(1.0, h.coefficient_norm())
    for stage_idx, (d, n_sweeps) in enumerate(stages):
        final_stage = stage_idx == len(stages) - 1
        if net.max_bond_dim() < d:
            pad_bond_dims(net, d, noise=cfg.ramp_noise, seed=seed + 7 * stage_idx + 1)
        sweeper = _Sweeper(h, cfg, net, below=below)
        prev = np.inf
        for it in range(max(1, n_sweeps)):
            e = sweeper.sweep()
            if below == () and e > prev + ENERGY_SLACK * scale:
                raise ConsistencyError(
                    f"sweep energy increased from {prev!r} to {e!r}")
            history.append(e)
            delta = abs(prev - e)
            prev = e
            if final_stage and it + 1 >= cfg.min_sweeps and \
                    delta <= cfg.tol * max(1.0, abs(e)):
                converged = True
                break
        sweeper.extract_bond()
        energy = sweeper.refine_bond()
        if below == () and energy > prev + ENERGY_SLACK * scale:
            raise ConsistencyError("bond refinement increased the energy")
        history.append(energy)
    schmidt_spectrum(net)  # rotate to the Schmidt basis at the root bond
    diagnostics = {"n_sweeps": len(history), "final_delta": delta,
                   "stages": stages}
    result = VariationalResult(net=net, energy=energy, sweep_history=history,
                               converged=converged, hamiltonian=h,
                               diagnostics=diagnostics)
    return result


def optimize_ground_state(h: HamiltonianTerms, cfg: SweepConfig,
                          seed: int = 0) -> VariationalResult:
    """Variational ground-state search; canonical at the root bond on return."""
    return _optimize(h, cfg, seed, below=())


def optimize_excited_state(h: HamiltonianTerms, cfg: SweepConfig, below,
                           seed: int = 1) -> VariationalResult:
    """Lowest state orthogonal to the converged states in ``below``.

    Adds ``w * sum_j |psi_j><psi_j|`` to every local problem.  Raises
    :class:`ConvergenceError` if the final overlaps exceed the 1e-6
    orthogonality budget (the fix is a larger penalty weight).
    """
    below = tuple(below)
    if not below:
        raise UsageError("optimize_excited_state needs at least one state below")
    result = _optimize(h, cfg, seed, below=below)
    overlaps = [abs(overlap(r.net, result.net)) for r in below]
    result.diagnostics["overlaps"] = overlaps
    if max(overlaps) > ORTHO_TOL:
        raise ConvergenceError(
            f"excited state keeps overlap {max(overlaps):.2e} with a state in "
            f"`below`; increase penalty_weight (current {cfg.penalty_weight})",
            residual=max(overlaps))
    floor = max(r.energy for r in below)
    if result.energy < floor - 1e-8 * max(1.0, abs(floor)):
        raise ConsistencyError(
            f"penalized optimization found energy {result.energy} below the "
            f"highest reference energy {floor}")
    return result
