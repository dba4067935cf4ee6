"""Tree tensor network states: topology, gauging, Schmidt data, snapshots.

A state is a loop-free network with one rank-2 tensor per physical site
(physical leg times bond) and rank-3 tensors on internal nodes.  A designated
edge, the *root bond*, splits the sites into blocks A and B; an MPS is just
the degenerate comb-shaped tree.  When gauged, every tensor is an isometry
toward the gauge edge and the remaining weight sits in an explicit bond
matrix on that edge, whose singular values are the Schmidt values of the
bipartition.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, SnapshotFormatError, UsageError
from .models import HamiltonianTerms, LatticeGeometry
from .tensor import DenseTensor, contract, factorize_qr, factorize_svd

__all__ = [
    "TreeTopology",
    "TreeNetwork",
    "SchmidtData",
    "build_topology",
    "random_network",
    "product_network",
    "pad_bond_dims",
    "canonicalize",
    "move_gauge",
    "schmidt_spectrum",
    "expectation",
    "overlap",
    "to_dense",
    "dense_half_isometry",
    "save_snapshot",
    "load_snapshot",
]

SNAPSHOT_MAGIC = b"TTNSNAP1"
SNAPSHOT_VERSION = 1


def phys_leg(site: int) -> str:
    return f"s{site}"


class TreeTopology:
    """Binary-tree layout over the physical sites with a designated root bond.

    ``parents[n]`` points toward the root bond (None for the two top nodes),
    ``children[n]`` away from it.  Leaves carry exactly one site each.
    """

    def __init__(self, parents, children, leaf_site, root_bond, layout="tree"):
        self.parents = tuple(parents)
        self.children = tuple(tuple(c) for c in children)
        self.leaf_site = dict(leaf_site)
        self.root_bond = (int(root_bond[0]), int(root_bond[1]))
        self.layout = str(layout)
        self.n_nodes = len(self.parents)
        self._validate()
        self.site_leaf = {s: n for n, s in self.leaf_site.items()}
        self.n_sites = len(self.leaf_site)
        self._neighbors = [[] for _ in range(self.n_nodes)]
        for n, p in enumerate(self.parents):
            if p is not None:
                self._neighbors[n].append(p)
                self._neighbors[p].append(n)
        a, b = self.root_bond
        self._neighbors[a].append(b)
        self._neighbors[b].append(a)
        self._below = self._compute_below()

    def _validate(self):
        a, b = self.root_bond
        if self.parents[a] is not None or self.parents[b] is not None:
            raise UsageError("root bond endpoints must have no parent")
        n_top = sum(1 for p in self.parents if p is None)
        if n_top != 2:
            raise UsageError("exactly the two root-bond nodes may lack a parent")
        for n, ch in enumerate(self.children):
            is_leaf = n in self.leaf_site if hasattr(self, "leaf_site") else None
            for c in ch:
                if self.parents[c] != n:
                    raise UsageError("children/parents arrays disagree")
        for n in range(self.n_nodes):
            if n in self.leaf_site:
                if self.children[n]:
                    raise UsageError(f"leaf {n} has children")
            elif len(self.children[n]) != 2:
                raise UsageError(f"internal node {n} must have 2 children")

    def _compute_below(self):
        below = [None] * self.n_nodes
        order = self._topo_order_up()
        for n in order:
            if n in self.leaf_site:
                below[n] = frozenset((self.leaf_site[n],))
            else:
                acc = frozenset()
                for c in self.children[n]:
                    acc |= below[c]
                below[n] = acc
        return below

    def _topo_order_up(self):
        """Nodes ordered children-before-parents."""
        order = []
        stack = [self.root_bond[0], self.root_bond[1]]
        seen = []
        while stack:
            n = stack.pop()
            seen.append(n)
            stack.extend(self.children[n])
        return list(reversed(seen))

    def neighbors(self, n: int):
        return self._neighbors[n]

    def is_leaf(self, n: int) -> bool:
        return n in self.leaf_site

    def edge_label(self, u: int, v: int) -> str:
        if v not in self._neighbors[u]:
            raise UsageError(f"({u}, {v}) is not an edge of the tree")
        return f"b{min(u, v)}_{max(u, v)}"

    def edges(self):
        """All undirected edges as (child, parent) pairs plus the root bond."""
        out = [(n, p) for n, p in enumerate(self.parents) if p is not None]
        out.append(self.root_bond)
        return out

    def sites_below(self, n: int) -> frozenset:
        return self._below[n]

    def in_tail(self, site: int, u: int, v: int) -> bool:
        """Is ``site`` on the ``u`` side when edge (u, v) is removed?"""
        pu = self.parents[u]
        if pu == v:
            return site in self._below[u]
        if self.parents[v] == u or (u, v) in (self.root_bond, self.root_bond[::-1]):
            # v hangs below u, or (u,v) is the root bond: tail is everything
            # outside v's subtree / outside the other top's subtree
            return site not in self._below[v]
        raise UsageError(f"({u}, {v}) is not an edge of the tree")

    def tail_size(self, u: int, v: int) -> int:
        if self.parents[u] == v:
            return len(self._below[u])
        return self.n_sites - len(self._below[v])

    def block_sites(self):
        """Site sets of the A and B blocks defined by the root bond."""
        a, b = self.root_bond
        return self._below[a], self._below[b]

    def path_nodes(self, a: int, b: int):
        """Node path from a to b (inclusive)."""
        prev = {a: None}
        stack = [a]
        while stack:
            n = stack.pop()
            if n == b:
                break
            for w in self._neighbors[n]:
                if w not in prev:
                    prev[w] = n
                    stack.append(w)
        if b not in prev:
            raise ConsistencyError("tree is disconnected")
        path = [b]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        return list(reversed(path))

    def leaf_depths(self):
        """Distance of each leaf from the root bond (top nodes at depth 1)."""
        depth = {}
        for n in self.leaf_site:
            d = 1
            p = self.parents[n]
            while p is not None:
                d += 1
                p = self.parents[p]
            depth[n] = d
        return depth

    def to_dict(self):
        return {
            "parents": [-1 if p is None else p for p in self.parents],
            "children": [list(c) for c in self.children],
            "leaf_site": [[n, s] for n, s in sorted(self.leaf_site.items())],
            "root_bond": list(self.root_bond),
            "layout": self.layout,
        }

    @classmethod
    def from_dict(cls, d):
        parents = [None if p == -1 else p for p in d["parents"]]
        return cls(parents, d["children"], {n: s for n, s in d["leaf_site"]},
                   tuple(d["root_bond"]), d.get("layout", "tree"))


class _TopologyBuilder:
    def __init__(self):
        self.parents = []
        self.children = []
        self.leaf_site = {}

    def leaf(self, site):
        nid = len(self.parents)
        self.parents.append(None)
        self.children.append(())
        self.leaf_site[nid] = site
        return nid

    def join(self, a, b):
        nid = len(self.parents)
        self.parents.append(None)
        self.children.append((a, b))
        self.parents[a] = nid
        self.parents[b] = nid
        return nid


def _build_block_chain(bld, sites):
    if len(sites) == 1:
        return bld.leaf(sites[0])
    mid = (len(sites) + 1) // 2
    return bld.join(_build_block_chain(bld, sites[:mid]),
                    _build_block_chain(bld, sites[mid:]))


def _build_block_square(bld, geom, r0, r1, c0, c1):
    if r1 - r0 == 1 and c1 - c0 == 1:
        return bld.leaf(geom.site_index(r0, c0))
    if c1 - c0 >= r1 - r0:
        cm = (c0 + c1 + 1) // 2
        return bld.join(_build_block_square(bld, geom, r0, r1, c0, cm),
                        _build_block_square(bld, geom, r0, r1, cm, c1))
    rm = (r0 + r1 + 1) // 2
    return bld.join(_build_block_square(bld, geom, r0, rm, c0, c1),
                    _build_block_square(bld, geom, rm, r1, c0, c1))


def _build_comb(bld, sites, lean_left):
    node = bld.leaf(sites[0] if lean_left else sites[-1])
    rest = sites[1:] if lean_left else sites[-2::-1]
    for s in rest:
        leaf = bld.leaf(s)
        node = bld.join(node, leaf) if lean_left else bld.join(leaf, node)
    return node


def build_topology(geometry: LatticeGeometry, layout: str = "tree") -> TreeTopology:
    """Tree layout over a lattice with the root bond at the half cut.

    Chains split into two contiguous blocks at ``ceil(N/2)`` and each block
    becomes a balanced binary tree (uneven sizes split at the midpoint, which
    is equivalent to padding with trivial sites and then trimming them).
    Square lattices are bisected recursively along the longer axis, so the
    root bond separates the left and right half-columns.  ``layout="mps"``
    builds the comb-shaped degenerate tree (chains only).
    """
    n = geometry.n_sites
    if n < 2:
        raise UsageError("need at least 2 sites for a tree network")
    bld = _TopologyBuilder()
    if layout == "mps":
        if geometry.kind != "chain":
            raise UsageError("mps layout is only supported for chains")
        mid = (n + 1) // 2
        top_a = _build_comb(bld, list(range(mid)), lean_left=True)
        top_b = _build_comb(bld, list(range(mid, n)), lean_left=False)
    elif layout == "tree":
        if geometry.kind == "chain":
            sites = list(range(n))
            mid = (n + 1) // 2
            top_a = _build_block_chain(bld, sites[:mid])
            top_b = _build_block_chain(bld, sites[mid:])
        else:
            L = geometry.L
            cm = (L + 1) // 2
            top_a = _build_block_square(bld, geometry, 0, L, 0, cm)
            top_b = _build_block_square(bld, geometry, 0, L, cm, L)
    else:
        raise UsageError(f"unknown layout {layout!r}")
    return TreeTopology(bld.parents, bld.children, bld.leaf_site,
                        (top_a, top_b), layout)


@dataclass
class SchmidtData:
    """Schmidt values at a bond: positive, descending, sum of squares one."""

    values: np.ndarray
    bond: tuple
    d_eff: int


class TreeNetwork:
    """Mutable tree tensor network state.

    ``gauge_edge`` (oriented pair) plus ``bond_matrix`` hold the canonical
    center when set; every tensor is then isometric toward that edge.
    """

    def __init__(self, topology: TreeTopology, tensors: dict,
                 gauge_edge=None, bond_matrix=None, normalized=False):
        self.topology = topology
        self.tensors = dict(tensors)
        self.gauge_edge = tuple(gauge_edge) if gauge_edge is not None else None
        self.bond_matrix = bond_matrix
        self.normalized = bool(normalized)

    @property
    def root_edge(self):
        return self.topology.root_bond

    def copy(self) -> "TreeNetwork":
        return TreeNetwork(
            self.topology,
            {n: DenseTensor(t.data, t.legs) for n, t in self.tensors.items()},
            self.gauge_edge,
            None if self.bond_matrix is None else self.bond_matrix.copy(),
            self.normalized,
        )

    def bond_dim(self, u, v) -> int:
        label = self.topology.edge_label(u, v)
        return self.tensors[u].extent(label)

    def max_bond_dim(self) -> int:
        return max(self.bond_dim(u, v) for u, v in self.topology.edges())

    def require_gauge(self, edge=None):
        if self.gauge_edge is None:
            raise UsageError("network is not in canonical form; canonicalize first")
        if edge is not None and set(self.gauge_edge) != set(edge):
            raise UsageError(
                f"network is canonical at {self.gauge_edge}, not at {tuple(edge)}"
            )

    def norm(self) -> float:
        if self.gauge_edge is None:
            raise UsageError("norm requires canonical form")
        return float(np.linalg.norm(self.bond_matrix))

    def isometry_defect(self) -> float:
        """Worst deviation of any tensor from isometry toward the gauge edge."""
        self.require_gauge()
        worst = 0.0
        for n, t in self.tensors.items():
            toward = _toward_leg(self, n)
            gram = contract(t, t.relabel({toward: toward + "'"}),
                            [(l, l) for l in t.legs if l != toward])
            worst = max(worst, float(np.max(np.abs(
                gram.data - np.eye(gram.shape[0])))))
        return worst


def _toward_node(net: TreeNetwork, n: int) -> int:
    """Neighbor of n on the path toward the gauge edge."""
    topo = net.topology
    u, v = net.gauge_edge
    if n in (u, v):
        return v if n == u else u
    path = topo.path_nodes(n, u)
    return path[1]


def _toward_leg(net: TreeNetwork, n: int) -> str:
    return net.topology.edge_label(n, _toward_node(net, n))


def _feasible_dims(topology: TreeTopology, d_max: int, d_phys: int = 2):
    """Per-edge extents: capped by d_max and by both sides' Hilbert sizes."""
    dims = {}
    for n in topology._topo_order_up():
        if topology.is_leaf(n):
            up = d_phys
        else:
            up = 1
            for c in topology.children[n]:
                up *= dims[(c, n)]
                up = min(up, 4 * d_max)  # avoid giant intermediates
        p = topology.parents[n]
        key = (n, p) if p is not None else (n, None)
        dims[key] = min(d_max, up)
    a, b = topology.root_bond
    root_dim = min(dims[(a, None)], dims[(b, None)])
    dims[(a, None)] = dims[(b, None)] = root_dim
    # downward pass: an edge cannot exceed the product of the other legs above
    order = list(reversed(topology._topo_order_up()))
    down = {a: root_dim, b: root_dim}
    for n in order:
        if topology.is_leaf(n):
            continue
        cs = topology.children[n]
        for i, c in enumerate(cs):
            other = down[n]
            for j, c2 in enumerate(cs):
                if j != i:
                    other *= dims[(c2, n)]
            dims[(c, n)] = min(dims[(c, n)], other)
            down[c] = dims[(c, n)]
    return dims


def _edge_extent(dims, topo, u, v):
    if topo.parents[u] == v:
        return dims[(u, v)]
    if topo.parents[v] == u:
        return dims[(v, u)]
    return dims[(u, None)]


def random_network(topology: TreeTopology, d_max: int, seed: int = 0) -> TreeNetwork:
    """Random normalized network, canonical at the root bond."""
    if d_max < 1:
        raise UsageError("d_max must be >= 1")
    rng = np.random.default_rng(seed)
    dims = _feasible_dims(topology, d_max)
    tensors = {}
    for n in range(topology.n_nodes):
        legs, shape = _node_legs_shape(topology, dims, n)
        tensors[n] = DenseTensor(rng.standard_normal(shape), legs, copy=False)
    net = TreeNetwork(topology, tensors)
    return canonicalize(net, topology.root_bond)


def product_network(topology: TreeTopology, site_vectors) -> TreeNetwork:
    """Bond-dimension-1 network for a product state."""
    dims = _feasible_dims(topology, 1)
    tensors = {}
    for n in range(topology.n_nodes):
        legs, shape = _node_legs_shape(topology, dims, n)
        if topology.is_leaf(n):
            vec = np.asarray(site_vectors[topology.leaf_site[n]], dtype=float)
            tensors[n] = DenseTensor(vec.reshape(2, 1), legs)
        else:
            tensors[n] = DenseTensor(np.ones(shape), legs)
    net = TreeNetwork(topology, tensors)
    return canonicalize(net, topology.root_bond)


def pad_bond_dims(net: TreeNetwork, d_max: int, noise: float = 0.0,
                  seed: int = 0) -> TreeNetwork:
    """Embed the state in larger bonds (up to ``d_max``), in place.

    Existing tensor blocks are kept; new entries are zero plus optional
    Gaussian noise of the given scale (relative to the largest tensor entry),
    which seeds one-site optimizers with directions into the new subspace.
    The network is re-canonicalized at its current gauge edge afterwards.
    """
    if net.gauge_edge is None:
        raise UsageError("pad_bond_dims requires a canonical network")
    topo = net.topology
    target = _feasible_dims(topo, d_max)
    rng = np.random.default_rng(seed)
    edge_target = {}
    for u, v in topo.edges():
        cur = net.bond_dim(u, v)
        edge_target[frozenset((u, v))] = max(cur, _edge_extent(target, topo, u, v))
    gauge = net.gauge_edge
    # fold the bond matrix into one endpoint so the state is pure tensors
    gu, gv = gauge
    label = topo.edge_label(gu, gv)
    _absorb_into(net, DenseTensor(net.bond_matrix, ("__qr", label), copy=False),
                 gv, label)
    net.gauge_edge = None
    net.bond_matrix = None
    for n, t in net.tensors.items():
        new_shape = []
        for leg, ext in zip(t.legs, t.shape):
            if leg.startswith("s"):
                new_shape.append(ext)
            else:
                eu, ev = leg[1:].split("_")
                new_shape.append(edge_target[frozenset((int(eu), int(ev)))])
        new_shape = tuple(new_shape)
        if new_shape == t.shape:
            continue
        scale = float(np.max(np.abs(t.data))) or 1.0
        arr = noise * scale * rng.standard_normal(new_shape) if noise else \
            np.zeros(new_shape)
        arr[tuple(slice(0, s) for s in t.shape)] = t.data
        net.tensors[n] = DenseTensor(arr, t.legs, copy=False)
    return canonicalize(net, gauge)


def _node_legs_shape(topology, dims, n):
    if topology.is_leaf(n):
        site = topology.leaf_site[n]
        up = topology.parents[n]
        up_label = topology.edge_label(n, up) if up is not None else \
            topology.edge_label(*topology.root_bond)
        d_up = _edge_extent(dims, topology, n, up) if up is not None \
            else dims[(n, None)]
        return (phys_leg(site), up_label), (2, d_up)
    legs = []
    shape = []
    for c in topology.children[n]:
        legs.append(topology.edge_label(c, n))
        shape.append(_edge_extent(dims, topology, c, n))
    p = topology.parents[n]
    if p is not None:
        legs.append(topology.edge_label(n, p))
        shape.append(_edge_extent(dims, topology, n, p))
    else:
        legs.append(topology.edge_label(*topology.root_bond))
        shape.append(dims[(n, None)])
    return tuple(legs), tuple(shape)


# ---------------------------------------------------------------------------
# gauging


def _qr_toward(net: TreeNetwork, n: int, toward: int):
    """QR node n's tensor over away legs; returns R on the (n, toward) edge."""
    t = net.tensors[n]
    label = net.topology.edge_label(n, toward)
    rows = tuple(l for l in t.legs if l != label)
    q, r = factorize_qr(t, rows, bond_leg="__qr")
    net.tensors[n] = q.relabel({"__qr": label})
    return r  # legs ("__qr", label)


def _absorb_into(net: TreeNetwork, r: DenseTensor, n: int, label: str):
    t = net.tensors[n]
    out = contract(r, t, [(label, label)])
    net.tensors[n] = out.relabel({"__qr": label})


def canonicalize(net: TreeNetwork, center=None, *, compress=False,
                 max_rank=None, cutoff=1e-12) -> TreeNetwork:
    """Gauge the network so every tensor is isometric toward ``center``.

    ``center`` is an edge (defaults to the root bond).  The state vector is
    unchanged up to overall normalization: the network is renormalized and
    flagged.  With ``compress=True`` every bond is additionally truncated by
    an SVD sweep honoring ``max_rank``/``cutoff``.
    """
    topo = net.topology
    if center is None:
        center = topo.root_bond
    u, v = center
    if v not in topo.neighbors(u):
        raise UsageError(f"{center} is not an edge")

    if net.gauge_edge is not None:
        if set(net.gauge_edge) == {u, v}:
            if net.gauge_edge != (u, v):
                net.bond_matrix = net.bond_matrix.T
                net.gauge_edge = (u, v)
        else:
            move_gauge(net, (u, v))
    else:
        # full bottom-up pass toward the target edge
        order = sorted(range(topo.n_nodes),
                       key=lambda n: -len(topo.path_nodes(n, u)))
        saved_gauge = (u, v)
        net.gauge_edge = saved_gauge  # lets _toward_node orient the pass
        r_u = r_v = None
        for n in order:
            toward = _toward_node(net, n)
            r = _qr_toward(net, n, toward)
            if n == u:
                r_u = r
            elif n == v:
                r_v = r
            else:
                _absorb_into(net, r, toward, topo.edge_label(n, toward))
        label = topo.edge_label(u, v)
        c = contract(r_u, r_v.relabel({"__qr": "__qr2"}), [(label, label)])
        net.bond_matrix = c.data  # (u-side, v-side)

    nrm = float(np.linalg.norm(net.bond_matrix))
    if not np.isfinite(nrm) or nrm == 0.0:
        raise ConsistencyError("network has zero or non-finite norm")
    net.bond_matrix = net.bond_matrix / nrm
    net.normalized = True

    if compress:
        _compress_all(net, max_rank=max_rank, cutoff=cutoff)
        if net.gauge_edge != (u, v):
            move_gauge(net, (u, v))
        net.bond_matrix /= np.linalg.norm(net.bond_matrix)
    return net


def move_gauge(net: TreeNetwork, edge) -> TreeNetwork:
    """Move the canonical center to another edge via QR moves along the path."""
    net.require_gauge()
    x, y = edge
    topo = net.topology
    if y not in topo.neighbors(x):
        raise UsageError(f"{tuple(edge)} is not an edge")
    while set(net.gauge_edge) != {x, y}:
        u, v = net.gauge_edge
        # the target edge sits in one component of the tree minus (u, v);
        # absorb the bond into the endpoint on that side
        if u in topo.path_nodes(v, x):
            into = u
        else:
            into = v
        label = topo.edge_label(u, v)
        c = net.bond_matrix if into == v else net.bond_matrix.T
        # after transposing, c's second index always matches `into`'s edge leg
        _absorb_into(net, DenseTensor(c, ("__qr", label), copy=False), into, label)
        if into == x:
            nxt = y
        elif into == y:
            nxt = x
        else:
            nxt = topo.path_nodes(into, x)[1]
        r = _qr_toward(net, into, nxt)
        net.gauge_edge = (into, nxt)
        net.bond_matrix = r.data  # rows: into side, cols: nxt side
    if net.gauge_edge != (x, y):
        net.bond_matrix = net.bond_matrix.T
        net.gauge_edge = (x, y)
    return net


def _truncate_bond(net: TreeNetwork, max_rank, cutoff):
    """SVD-truncate the current gauge bond, absorbing the rotations."""
    u, v = net.gauge_edge
    label = net.topology.edge_label(u, v)
    c = DenseTensor(net.bond_matrix, ("__l", "__r"), copy=False)
    mu, s, mv, _ = factorize_svd(c, ("__l",), max_rank=max_rank or 10**9,
                                 cutoff=cutoff, bond_leg="__k")
    tu = contract(net.tensors[u], mu, [(label, "__l")]).relabel({"__k": label})
    tv = contract(net.tensors[v], mv.relabel({"__k": "__k2"}),
                  [(label, "__r")]).relabel({"__k2": label})
    net.tensors[u] = tu
    net.tensors[v] = tv
    net.bond_matrix = np.diag(s)
    return s


def _compress_all(net: TreeNetwork, max_rank, cutoff):
    for edge in net.topology.edges():
        move_gauge(net, edge)
        _truncate_bond(net, max_rank, cutoff)


def schmidt_spectrum(net: TreeNetwork, edge=None) -> SchmidtData:
    """Schmidt values at the gauge bond (rotating the bond basis in place).

    After the call the bond matrix is diagonal, i.e. the two half-networks
    are the Schmidt vectors themselves.
    """
    net.require_gauge(edge)
    s = _truncate_bond(net, max_rank=None, cutoff=0.0)
    total = float(np.linalg.norm(s))
    if total == 0.0:
        raise ConsistencyError("zero-norm state has no Schmidt decomposition")
    lam = s / total
    lam = lam[lam > 1e-300]
    return SchmidtData(values=lam, bond=net.gauge_edge, d_eff=len(lam))


# ---------------------------------------------------------------------------
# expectation values and dense oracles


def expectation(net: TreeNetwork, op) -> float:
    """<psi|O|psi> for a Hamiltonian term list or a single coupling term.

    Canonicalizes in place (to the root bond) if the network is ungauged.
    """
    from .environments import EnvironmentCache  # local import: cycle avoidance

    if net.gauge_edge is None:
        canonicalize(net)
    if not net.normalized:
        raise UsageError("expectation requires a normalized network")
    terms = op if isinstance(op, (HamiltonianTerms, list, tuple)) else (op,)
    cache = EnvironmentCache(net, terms)
    ha, hb, crossing = cache.bond_blocks(net.gauge_edge)
    c = net.bond_matrix
    val = cache.constant
    if ha is not None:
        val += float(np.sum(c * (ha @ c)))
    if hb is not None:
        val += float(np.sum(c * (c @ hb.T)))
    for coeff, ea, eb in crossing:
        left = ea @ c if ea is not None else c
        right = left @ eb.T if eb is not None else left
        val += coeff * float(np.sum(c * right))
    return val


def overlap(net_a: TreeNetwork, net_b: TreeNetwork) -> float:
    """<a|b> for two states on the same topology.

    May re-gauge both networks to the root bond (the states are unchanged).
    """
    from .environments import overlap_env_toward

    if net_a.topology is not net_b.topology and \
            net_a.topology.to_dict() != net_b.topology.to_dict():
        raise UsageError("overlap requires identical topologies")
    for net in (net_a, net_b):
        net.require_gauge()
    ca = _bond_at_root(net_a)
    cb = _bond_at_root(net_b)
    topo = net_a.topology
    u, v = topo.root_bond
    oa = overlap_env_toward(net_a.tensors, net_b.tensors, topo, u, v)
    ob = overlap_env_toward(net_a.tensors, net_b.tensors, topo, v, u)
    return float(np.sum((oa.T @ ca @ ob) * cb))


def _bond_at_root(net: TreeNetwork) -> np.ndarray:
    root = net.topology.root_bond
    if set(net.gauge_edge) != set(root):
        move_gauge(net, root)
    if net.gauge_edge == root:
        return net.bond_matrix
    return net.bond_matrix.T


def to_dense(net: TreeNetwork, max_sites: int = 20) -> np.ndarray:
    """State vector with site 0 as the most significant qubit (small N only)."""
    topo = net.topology
    if topo.n_sites > max_sites:
        raise UsageError(f"to_dense limited to {max_sites} sites")
    a, b = topo.root_bond
    ta = _dense_subtree(net, a, b)
    tb = _dense_subtree(net, b, a)
    label = topo.edge_label(a, b)
    if net.bond_matrix is not None and set(net.gauge_edge) == {a, b}:
        c = net.bond_matrix if net.gauge_edge == (a, b) else net.bond_matrix.T
        cd = DenseTensor(c, ("__cu", "__cv"), copy=False)
        full = contract(contract(ta, cd, [(label, "__cu")]), tb,
                        [("__cv", label)])
    elif net.bond_matrix is None:
        full = contract(ta, tb, [(label, label)])
    else:
        raise ConsistencyError("bond matrix must sit on the root bond for to_dense")
    order = tuple(phys_leg(s) for s in range(topo.n_sites))
    return full.transpose(order).data.reshape(-1)


def _dense_subtree(net: TreeNetwork, n: int, exclude: int) -> DenseTensor:
    t = net.tensors[n]
    for w in net.topology.neighbors(n):
        if w == exclude:
            continue
        sub = _dense_subtree(net, w, n)
        label = net.topology.edge_label(w, n)
        t = contract(t, sub, [(label, label)])
    return t


def dense_half_isometry(net: TreeNetwork, side: str = "A") -> np.ndarray:
    """Half-network as a dense (2^N_side, D) isometry (small N only).

    Rows are ordered by the side's sites sorted ascending, first site most
    significant.
    """
    net.require_gauge(net.topology.root_bond)
    a, b = net.topology.root_bond
    node = a if side == "A" else b
    other = b if side == "A" else a
    sub = _dense_subtree(net, node, other)
    sites = sorted(net.topology.sites_below(node))
    if 2 ** len(sites) > 2**20:
        raise UsageError("half isometry too large to densify")
    label = net.topology.edge_label(a, b)
    order = tuple(phys_leg(s) for s in sites) + (label,)
    mat = sub.transpose(order).data.reshape(2 ** len(sites), -1)
    return mat


# ---------------------------------------------------------------------------
# snapshots


def save_snapshot(net: TreeNetwork, path, model_meta: dict | None = None):
    """Write the TTNSNAP1 container: magic, JSON manifest, raw payload, checksum."""
    node_order = sorted(net.tensors)
    manifest = {
        "version": SNAPSHOT_VERSION,
        "topology": net.topology.to_dict(),
        "nodes": node_order,
        "legs": [list(net.tensors[n].legs) for n in node_order],
        "shapes": [list(net.tensors[n].shape) for n in node_order],
        "gauge_edge": list(net.gauge_edge) if net.gauge_edge else None,
        "bond_shape": list(net.bond_matrix.shape) if net.bond_matrix is not None else None,
        "normalized": net.normalized,
        "model_meta": model_meta,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    payload = bytearray()
    for n in node_order:
        payload += net.tensors[n].data.astype("<f8").tobytes()
    if net.bond_matrix is not None:
        payload += np.ascontiguousarray(net.bond_matrix, dtype="<f8").tobytes()
    digest = hashlib.blake2b(bytes(payload), digest_size=8).digest()
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<Q", len(mbytes)))
        fh.write(mbytes)
        fh.write(payload)
        fh.write(digest)


def load_snapshot(path) -> TreeNetwork:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != SNAPSHOT_MAGIC:
        raise SnapshotFormatError("bad magic (not a TTNSNAP1 container)", offset=0)
    if len(blob) < 16:
        raise SnapshotFormatError("truncated header", offset=len(blob))
    (mlen,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + mlen:
        raise SnapshotFormatError("truncated manifest", offset=len(blob))
    try:
        manifest = json.loads(blob[16:16 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotFormatError(f"unreadable manifest: {exc}", offset=16) from exc
    if manifest.get("version") != SNAPSHOT_VERSION:
        raise SnapshotFormatError(
            f"unsupported snapshot version {manifest.get('version')!r}", offset=16)
    topo = TreeTopology.from_dict(manifest["topology"])
    payload_start = 16 + mlen
    counts = [int(np.prod(s)) for s in manifest["shapes"]]
    total = sum(counts)
    if manifest["bond_shape"] is not None:
        total += int(np.prod(manifest["bond_shape"]))
    payload_end = payload_start + 8 * total
    if len(blob) < payload_end + 8:
        raise SnapshotFormatError(
            f"truncated payload: expected {8 * total + 8} bytes after offset "
            f"{payload_start}, found {len(blob) - payload_start}",
            offset=len(blob))
    payload = blob[payload_start:payload_end]
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    if digest != blob[payload_end:payload_end + 8]:
        raise SnapshotFormatError(
            "payload checksum mismatch", offset=payload_start)
    tensors = {}
    pos = 0
    data = np.frombuffer(payload, dtype="<f8")
    for n, legs, shape, cnt in zip(manifest["nodes"], manifest["legs"],
                                   manifest["shapes"], counts):
        arr = data[pos:pos + cnt].reshape(shape)
        tensors[n] = DenseTensor(arr, legs)
        pos += cnt
    bond = None
    if manifest["bond_shape"] is not None:
        bond = np.array(data[pos:]).reshape(manifest["bond_shape"])
    gauge = tuple(manifest["gauge_edge"]) if manifest["gauge_edge"] else None
    return TreeNetwork(topo, tensors, gauge, bond, manifest["normalized"])
