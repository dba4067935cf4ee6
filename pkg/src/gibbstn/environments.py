"""Hamiltonian and overlap environments on directed tree edges.

For a directed edge (u, v) the environment is the partial contraction of
everything on the ``u`` side, expressed as a matrix on the bond (bra index
first).  Because the networks are gauged, the bare overlap environment is the
identity and only term-carrying environments are stored: per directed edge a
``hsum`` matrix accumulating every term whose support closed inside the tail,
plus one open matrix per term whose support straddles the edge.

The same recursion serves the ground-state sweeps (local effective problems),
expectation values, and the bond-0 effective Hamiltonian; sweeps refresh the
single directed edge they traverse after each gauge move.
"""

from __future__ import annotations

import numpy as np

from .errors import UsageError
from .models import CouplingTerm, HamiltonianTerms, real_factors
from .tensor import DenseTensor

__all__ = ["EnvironmentCache", "OverlapCache", "LocalBlocks", "overlap_env_toward"]


def _ascend(t: DenseTensor, toward_label: str, ops) -> np.ndarray:
    """Environment through one tensor: bra x (ops applied to ket) contraction."""
    data = t.data
    for leg, mat in ops:
        ax = t.axis(leg)
        data = np.moveaxis(np.tensordot(mat, data, axes=([1], [ax])), 0, ax)
    ax_t = t.axis(toward_label)
    other = list(range(t.ndim))
    other.remove(ax_t)
    return np.tensordot(t.data, data, axes=(other, other))


class LocalBlocks:
    """The one-site effective operator at a node, as a sum of factorized blocks.

    Each entry is ``(axes, mats, coeff)``: apply ``mats[i]`` on tensor axis
    ``axes[i]`` and scale; axes without a matrix act as identity.
    """

    def __init__(self, shape, entries, penalty_vectors=None):
        self.shape = tuple(shape)
        self.dim = int(np.prod(self.shape))
        self.entries = entries
        self.penalties = penalty_vectors or []  # (weight, flat unit-ish vector)

    def apply(self, x: np.ndarray) -> np.ndarray:
        t = x.reshape(self.shape)
        out = np.zeros_like(t)
        for axes, mats, coeff in self.entries:
            cur = t
            for ax, m in zip(axes, mats):
                cur = np.moveaxis(np.tensordot(m, cur, axes=([1], [ax])), 0, ax)
            if coeff == 1.0:
                out += cur
            else:
                out += coeff * cur
        y = out.reshape(-1)
        for w, vec in self.penalties:
            y += (w * float(vec @ x)) * vec
        return y

    def dense(self) -> np.ndarray:
        mat = np.zeros((self.dim, self.dim))
        for axes, mats, coeff in self.entries:
            factor = np.array([[coeff]])
            lookup = dict(zip(axes, mats))
            for ax, d in enumerate(self.shape):
                factor = np.kron(factor, lookup.get(ax, np.eye(d)))
            mat += factor
        for w, vec in self.penalties:
            mat += w * np.outer(vec, vec)
        return mat


class EnvironmentCache:
    """Directed-edge environments of a term list over one network."""

    def __init__(self, net, terms):
        self.net = net
        self.topo = net.topology
        if isinstance(terms, HamiltonianTerms):
            terms = terms.terms
        self.constant = 0.0
        self.term_data = []  # (coeff, {site: 2x2 matrix})
        n_sites = self.topo.n_sites
        for term in terms:
            if not isinstance(term, CouplingTerm):
                raise UsageError(f"expected CouplingTerm, got {type(term).__name__}")
            for s, _ in term.factors:
                if s >= n_sites:
                    raise UsageError(f"term site {s} outside lattice of {n_sites} sites")
            coeff, factors = real_factors(term)
            if not factors:
                self.constant += coeff
            else:
                self.term_data.append((coeff, dict(factors)))
        self._store = {}

    def env(self, u: int, v: int):
        key = (u, v)
        if key not in self._store:
            self._store[key] = self._compute(u, v)
        return self._store[key]

    def refresh(self, u: int, v: int):
        """Recompute one directed edge (children must already be fresh)."""
        self._store[(u, v)] = self._compute(u, v)

    def drop(self, u: int, v: int):
        self._store.pop((u, v), None)

    def _compute(self, u: int, v: int):
        topo = self.topo
        t = self.net.tensors[u]
        toward = topo.edge_label(u, v)
        child_dirs = [w for w in topo.neighbors(u) if w != v]
        hsum = None
        open_envs = {}
        # ascend the children's closed blocks through this tensor
        for w in child_dirs:
            sub_h, _ = self.env(w, u)
            if sub_h is not None:
                up = _ascend(t, toward, [(topo.edge_label(w, u), sub_h)])
                hsum = up if hsum is None else hsum + up
        leaf_site = topo.leaf_site.get(u)
        for idx, (coeff, factors) in enumerate(self.term_data):
            sites = factors.keys()
            inside = [s for s in sites if topo.in_tail(s, u, v)]
            if not inside:
                continue
            fully_inside = len(inside) == len(sites)
            if fully_inside and any(
                all(topo.in_tail(s, w, u) for s in sites) for w in child_dirs
            ):
                # closed deeper down: already accumulated in that child's hsum
                continue
            ops = []
            for w in child_dirs:
                if any(topo.in_tail(s, w, u) for s in sites):
                    ops.append((topo.edge_label(w, u), self.env(w, u)[1][idx]))
            if leaf_site is not None and leaf_site in factors:
                ops.append((f"s{leaf_site}", factors[leaf_site]))
            if fully_inside:
                up = coeff * _ascend(t, toward, ops)
                hsum = up if hsum is None else hsum + up
            else:
                open_envs[idx] = _ascend(t, toward, ops)
        return hsum, open_envs

    def bond_blocks(self, edge):
        """Top-level blocks at an edge: (A-sum, B-sum, crossing terms).

        Crossing terms come as ``(coefficient, env_A, env_B)`` with the A side
        taken from ``edge[0]``.
        """
        u, v = edge
        ha, open_a = self.env(u, v)
        hb, open_b = self.env(v, u)
        crossing = []
        for idx in sorted(set(open_a) | set(open_b)):
            coeff = self.term_data[idx][0]
            crossing.append((coeff, open_a.get(idx), open_b.get(idx)))
        return ha, hb, crossing

    def local_blocks(self, center: int) -> LocalBlocks:
        """The effective one-site operator at ``center``."""
        topo = self.topo
        t = self.net.tensors[center]
        entries = []
        per_term = {}
        leaf_site = topo.leaf_site.get(center)
        for w in topo.neighbors(center):
            label = topo.edge_label(w, center)
            ax = t.axis(label)
            hsum, open_envs = self.env(w, center)
            if hsum is not None:
                entries.append(((ax,), (hsum,), 1.0))
            for idx, env in open_envs.items():
                per_term.setdefault(idx, []).append((ax, env))
        if leaf_site is not None:
            ax = t.axis(f"s{leaf_site}")
            for idx, (coeff, factors) in enumerate(self.term_data):
                if leaf_site in factors:
                    per_term.setdefault(idx, []).append((ax, factors[leaf_site]))
        for idx, parts in sorted(per_term.items()):
            axes = tuple(p[0] for p in parts)
            mats = tuple(p[1] for p in parts)
            entries.append((axes, mats, self.term_data[idx][0]))
        return LocalBlocks(t.shape, entries)


def overlap_env_toward(tensors_bra, tensors_ket, topo, u: int, v: int) -> np.ndarray:
    """<bra-half | ket-half> on directed edge (u, v); shape (D_bra, D_ket)."""
    tb = tensors_bra[u]
    tk = tensors_ket[u]
    toward = topo.edge_label(u, v)
    data = tk.data
    for w in topo.neighbors(u):
        if w == v:
            continue
        m = overlap_env_toward(tensors_bra, tensors_ket, topo, w, u)
        ax = tk.axis(topo.edge_label(w, u))
        data = np.moveaxis(np.tensordot(m, data, axes=([1], [ax])), 0, ax)
    # contract the bra tensor over all legs except the bond, matching labels
    axes_b = []
    axes_k = []
    for i, leg in enumerate(tb.legs):
        if leg == toward:
            continue
        axes_b.append(i)
        axes_k.append(tk.axis(leg))
    return np.tensordot(tb.data, data, axes=(axes_b, axes_k))


class OverlapCache:
    """Per-directed-edge overlaps of a fixed reference state with a live one.

    The reference network's bond matrix is absorbed once at construction; the
    live network is whatever the sweep currently holds (its weight sits in the
    center tensor, so no bond matrix is involved).
    """

    def __init__(self, ref_net, net):
        if ref_net.topology.to_dict() != net.topology.to_dict():
            raise UsageError("overlap cache requires identical topologies")
        self.topo = net.topology
        self.net = net
        self.ref_tensors = {n: t for n, t in ref_net.tensors.items()}
        if ref_net.bond_matrix is not None:
            from .tensor import contract as _contract

            u, v = ref_net.gauge_edge
            label = self.topo.edge_label(u, v)
            c = DenseTensor(ref_net.bond_matrix, ("__c", label), copy=False)
            merged = _contract(c, self.ref_tensors[v], [(label, label)])
            self.ref_tensors[v] = merged.relabel({"__c": label})
        self._store = {}

    def env(self, u: int, v: int) -> np.ndarray:
        key = (u, v)
        if key not in self._store:
            self._store[key] = self._compute(u, v)
        return self._store[key]

    def refresh(self, u: int, v: int):
        self._store[(u, v)] = self._compute(u, v)

    def _compute(self, u, v):
        topo = self.topo
        tb = self.ref_tensors[u]
        tk = self.net.tensors[u]
        toward = topo.edge_label(u, v)
        data = tk.data
        for w in topo.neighbors(u):
            if w == v:
                continue
            m = self.env(w, u)
            ax = tk.axis(topo.edge_label(w, u))
            data = np.moveaxis(np.tensordot(m, data, axes=([1], [ax])), 0, ax)
        axes_b = []
        axes_k = []
        for i, leg in enumerate(tb.legs):
            if leg == toward:
                continue
            axes_b.append(i)
            axes_k.append(tk.axis(leg))
        return np.tensordot(tb.data, data, axes=(axes_b, axes_k))

    def local_vector(self, center: int) -> np.ndarray:
        """Flat vector w with <ref|psi> = w . vec(center tensor)."""
        topo = self.topo
        tb = self.ref_tensors[center]
        tk = self.net.tensors[center]
        data = tb.data
        for w in topo.neighbors(center):
            m = self.env(w, center)  # (D_ref, D_cur)
            ax_b = tb.axis(topo.edge_label(w, center))
            data = np.moveaxis(np.tensordot(m, data, axes=([0], [ax_b])), 0, ax_b)
        # reorder axes from ref ordering to the live tensor's leg ordering
        perm = [tb.axis(leg) for leg in tk.legs]
        return np.transpose(data, perm).reshape(-1)
