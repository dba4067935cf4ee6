"""Dense real tensor algebra with named legs.

Everything downstream (networks, effective Hamiltonians, ensembles) is built
from four primitives defined here: pairwise contraction, QR and SVD
factorizations over a leg bipartition, and symmetric eigensolvers (dense and
iterative).  Scalars are always float64; complex values never enter the
package (see the model-building layer for how Y operators are kept real).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, DimensionError, ResourceLimitError, UsageError
from .instrument import add_ops

__all__ = [
    "DenseTensor",
    "SymmetricMatrix",
    "contract",
    "factorize_qr",
    "factorize_svd",
    "eigh",
    "lanczos_lowest",
]


class DenseTensor:
    """A multi-index array of real scalars with uniquely labelled legs.

    Parameters
    ----------
    data : array_like
        Real values; reshaped copy is stored as float64, row-major.
    legs : sequence of str
        One label per axis, unique within the tensor.
    """

    __slots__ = ("data", "legs")

    def __init__(self, data, legs: Sequence[str], *, copy: bool = True):
        if copy:
            arr = np.array(data, dtype=np.float64, order="C")
        else:
            arr = np.asarray(data, dtype=np.float64, order="C")
        legs = tuple(str(l) for l in legs)
        if arr.ndim != len(legs):
            raise DimensionError(
                f"tensor has {arr.ndim} axes but {len(legs)} leg labels"
            )
        if len(set(legs)) != len(legs):
            raise UsageError(f"duplicate leg labels in {legs}")
        if not np.all(np.isfinite(arr)):
            raise UsageError("tensor data contains NaN/Inf")
        self.data = arr
        self.legs = legs

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def axis(self, leg: str) -> int:
        try:
            return self.legs.index(leg)
        except ValueError:
            raise UsageError(f"no leg {leg!r} in tensor with legs {self.legs}") from None

    def extent(self, leg: str) -> int:
        return self.data.shape[self.axis(leg)]

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def transpose(self, legs: Sequence[str]) -> "DenseTensor":
        """Return a copy with axes reordered to the given leg order."""
        perm = [self.axis(l) for l in legs]
        if len(perm) != self.ndim:
            raise UsageError("transpose must list every leg exactly once")
        return DenseTensor(np.transpose(self.data, perm), legs, copy=True)

    def relabel(self, mapping: dict) -> "DenseTensor":
        """Return a view-sharing tensor with legs renamed via ``mapping``."""
        new = tuple(mapping.get(l, l) for l in self.legs)
        out = DenseTensor.__new__(DenseTensor)
        out.data = self.data
        out.legs = new
        if len(set(new)) != len(new):
            raise UsageError(f"relabel produced duplicates: {new}")
        return out

    def scaled(self, factor: float) -> "DenseTensor":
        out = DenseTensor.__new__(DenseTensor)
        out.data = self.data * factor
        out.legs = self.legs
        return out

    def __repr__(self):
        return f"DenseTensor(shape={self.shape}, legs={self.legs})"


def contract(a: DenseTensor, b: DenseTensor, pairs) -> DenseTensor:
    """Contract ``a`` with ``b`` over the given (leg-of-a, leg-of-b) pairs.

    The result carries the unpaired legs of ``a`` followed by those of ``b``,
    in their original order.  An empty pair list yields the outer product.
    """
    legs_a = [p[0] for p in pairs]
    legs_b = [p[1] for p in pairs]
    if len(set(legs_a)) != len(legs_a) or len(set(legs_b)) != len(legs_b):
        raise UsageError(f"repeated leg in contraction pairs {pairs}")
    ax_a = [a.axis(l) for l in legs_a]
    ax_b = [b.axis(l) for l in legs_b]
    for la, lb, xa, xb in zip(legs_a, legs_b, ax_a, ax_b):
        if a.shape[xa] != b.shape[xb]:
            raise DimensionError(
                f"extent mismatch contracting {la!r} ({a.shape[xa]}) "
                f"with {lb!r} ({b.shape[xb]})"
            )
    out_legs = [l for l in a.legs if l not in legs_a] + [
        l for l in b.legs if l not in legs_b
    ]
    if len(set(out_legs)) != len(out_legs):
        raise UsageError(f"contraction output has duplicate legs: {out_legs}")
    data = np.tensordot(a.data, b.data, axes=(ax_a, ax_b))
    summed = 1
    for x in ax_a:
        summed *= a.shape[x]
    add_ops(data.size * summed)
    out = DenseTensor.__new__(DenseTensor)
    out.data = np.asarray(data, order="C")
    out.legs = tuple(out_legs)
    return out


def _split_legs(t: DenseTensor, row_legs):
    row_legs = tuple(row_legs)
    for l in row_legs:
        t.axis(l)  # raises on unknown legs
    if len(set(row_legs)) != len(row_legs):
        raise UsageError("row_legs contains duplicates")
    col_legs = tuple(l for l in t.legs if l not in row_legs)
    if not row_legs or not col_legs:
        raise UsageError("row_legs must be a nonempty proper subset of the legs")
    mat = t.transpose(row_legs + col_legs).data
    n_row = int(np.prod(mat.shape[: len(row_legs)]))
    n_col = int(np.prod(mat.shape[len(row_legs):]))
    row_shape = mat.shape[: len(row_legs)]
    col_shape = mat.shape[len(row_legs):]
    return mat.reshape(n_row, n_col), row_legs, col_legs, row_shape, col_shape


def factorize_qr(t: DenseTensor, row_legs, bond_leg: str = "bond"):
    """Thin QR of ``t`` over a leg bipartition.

    Returns ``(q, r)`` with ``q`` isometric over ``row_legs`` (its new bond
    carries ``bond_leg``) and ``contract(q, r)`` reconstructing ``t``.  The
    diagonal of R is made nonnegative so the factorization is deterministic.
    """
    mat, row_legs, col_legs, row_shape, col_shape = _split_legs(t, row_legs)
    if bond_leg in t.legs:
        raise UsageError(f"bond leg {bond_leg!r} collides with an existing leg")
    q, r = np.linalg.qr(mat, mode="reduced")
    add_ops(mat.shape[0] * mat.shape[1] * min(mat.shape))
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    q = q * signs
    r = signs[:, None] * r
    k = q.shape[1]
    q_t = DenseTensor(q.reshape(row_shape + (k,)), row_legs + (bond_leg,), copy=False)
    r_t = DenseTensor(r.reshape((k,) + col_shape), (bond_leg,) + col_legs, copy=False)
    return q_t, r_t


def factorize_svd(
    t: DenseTensor,
    row_legs,
    max_rank: int,
    cutoff: float = 1e-12,
    bond_leg: str = "bond",
):
    """Truncated SVD of ``t`` over a leg bipartition.

    Returns ``(u, s, v, discarded_weight)``: ``u`` carries ``row_legs`` plus
    the new bond, ``v`` the bond plus the remaining legs, ``s`` the kept
    singular values (descending).  The kept rank is
    ``min(max_rank, #{s_i / s_0 > cutoff})`` with a floor of one, and
    ``discarded_weight`` is the truncated share of the squared norm.
    """
    if max_rank < 1:
        raise UsageError("max_rank must be >= 1")
    if cutoff < 0:
        raise UsageError("cutoff must be nonnegative")
    mat, row_legs, col_legs, row_shape, col_shape = _split_legs(t, row_legs)
    if bond_leg in t.legs:
        raise UsageError(f"bond leg {bond_leg!r} collides with an existing leg")
    try:
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        u, s, vt = scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")
    add_ops(mat.shape[0] * mat.shape[1] * min(mat.shape))
    total = float(np.sum(s**2))
    if total == 0.0:
        keep = 1
        discarded = 0.0
    else:
        keep = int(np.count_nonzero(s > cutoff * s[0]))
        keep = max(1, min(keep, max_rank))
        discarded = float(np.sum(s[keep:] ** 2) / total)
    u = u[:, :keep]
    s = s[:keep].copy()
    vt = vt[:keep]
    u_t = DenseTensor(u.reshape(row_shape + (keep,)), row_legs + (bond_leg,), copy=False)
    v_t = DenseTensor(vt.reshape((keep,) + col_shape), (bond_leg,) + col_legs, copy=False)
    return u_t, s, v_t, discarded


class SymmetricMatrix:
    """Dense real symmetric matrix storage.

    The constructor enforces ``max|M - M^T| <= rtol * max|M|`` and stores the
    symmetrized part, so downstream eigensolvers see an exactly symmetric
    array.
    """

    __slots__ = ("data",)

    SYM_RTOL = 1e-10

    def __init__(self, data, *, rtol: float | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise UsageError("matrix contains NaN/Inf")
        rtol = self.SYM_RTOL if rtol is None else rtol
        scale = float(np.max(np.abs(arr))) if arr.size else 0.0
        asym = float(np.max(np.abs(arr - arr.T))) if arr.size else 0.0
        if scale > 0.0 and asym > rtol * scale:
            raise UsageError(
                f"matrix is not symmetric: max|M-M^T| = {asym:.3e} "
                f"exceeds {rtol:.1e} * max|M| = {rtol * scale:.3e}"
            )
        self.data = 0.5 * (arr + arr.T)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def __repr__(self):
        return f"SymmetricMatrix(dim={self.dim})"


def eigh(m: SymmetricMatrix | np.ndarray):
    """Full eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, vectors)`` with eigenvalues ascending and
    eigenvectors as orthonormal columns.
    """
    if not isinstance(m, SymmetricMatrix):
        m = SymmetricMatrix(m)
    add_ops(m.dim**3)
    w, v = scipy.linalg.eigh(m.data, driver="evd", check_finite=False)
    return w, v


def _dense_from_apply(apply, dim):
    a = np.empty((dim, dim))
    e = np.zeros(dim)
    for i in range(dim):
        e[i] = 1.0
        a[:, i] = apply(e)
        e[i] = 0.0
    return 0.5 * (a + a.T)


def lanczos_lowest(
    apply: Callable[[np.ndarray], np.ndarray],
    dim: int,
    k: int,
    tol: float = 1e-10,
    *,
    v0: np.ndarray | None = None,
    basis_cap: int = 200,
    max_applies: int = 100000,
    memory_budget: float = 2e9,
    seed: int = 7,
):
    """Lowest ``k`` eigenpairs of a symmetric linear action.

    Lanczos with full reorthogonalization against the kept basis, thick
    restart once the basis reaches ``basis_cap`` vectors (or the memory
    budget), Rayleigh-Ritz extraction.  Residuals are measured against a
    running spectral-scale estimate; failure to reach ``tol`` within
    ``max_applies`` operator applications raises :class:`ConvergenceError`
    carrying the best residual.
    """
    if dim < 1 or k < 1 or k > dim:
        raise UsageError(f"need 1 <= k <= dim, got k={k}, dim={dim}")
    if dim <= max(32, 4 * k):
        w, v = eigh(_dense_from_apply(apply, dim))
        return w[:k].copy(), v[:, :k].copy()

    m_mem = int(memory_budget // (2 * 8 * dim))
    m = min(basis_cap, dim, max(k + 10, m_mem))
    if m < k + 2:
        raise ResourceLimitError(
            f"basis of {m} vectors (memory-capped) cannot host k={k} eigenpairs; "
            "reduce k or raise memory_budget"
        )

    rng = np.random.default_rng(seed)
    V = np.empty((m, dim))
    AV = np.empty((m, dim))

    def _orthonormalize(w, n):
        # two rounds of classical Gram-Schmidt against V[:n]
        for _ in range(2):
            if n:
                w -= V[:n].T @ (V[:n] @ w)
        nrm = np.linalg.norm(w)
        return w, nrm

    v = v0.astype(np.float64).ravel().copy() if v0 is not None else rng.standard_normal(dim)
    v, nrm = _orthonormalize(v, 0)
    if nrm == 0.0:
        v = rng.standard_normal(dim)
        nrm = np.linalg.norm(v)
    V[0] = v / nrm
    AV[0] = apply(V[0])
    n = 1
    applies = 1
    best_res = np.inf

    while True:
        # Rayleigh-Ritz on the current basis
        h = V[:n] @ AV[:n].T
        h = 0.5 * (h + h.T)
        theta, y = scipy.linalg.eigh(h, check_finite=False)
        kk = min(k, n)
        x = y[:, :kk].T @ V[:n]
        ax = y[:, :kk].T @ AV[:n]
        scale = max(abs(theta[0]), abs(theta[-1]), 1e-300)
        residuals = np.linalg.norm(ax - theta[:kk, None] * x, axis=1)
        worst = float(residuals.max()) if n >= k else np.inf
        best_res = min(best_res, worst)
        if n >= k and worst <= tol * scale:
            order = np.argsort(theta[:k])
            return theta[:k][order].copy(), x[order].T.copy()
        if n == dim:
            # exhausted the space: Ritz pairs are exact up to roundoff
            order = np.argsort(theta[:k])
            return theta[:k][order].copy(), x[order].T.copy()
        if applies >= max_applies:
            raise ConvergenceError(
                f"lanczos_lowest: {applies} applications without reaching "
                f"tol={tol:.1e} (best residual {best_res:.3e})",
                residual=best_res,
            )
        if n == m:
            # thick restart: keep the lowest Ritz vectors, continue from there
            keep = min(max(k + 8, 2 * k), m - 2)
            Vk = y[:, :keep].T @ V[:n]
            AVk = y[:, :keep].T @ AV[:n]
            V[:keep] = Vk
            AV[:keep] = AVk
            n = keep
        # expand with A times the last basis vector (Lanczos direction)
        w = AV[n - 1].copy()
        w, nrm = _orthonormalize(w, n)
        if nrm < 1e-13 * max(1.0, np.linalg.norm(AV[n - 1])):
            w = rng.standard_normal(dim)
            w, nrm = _orthonormalize(w, n)
            if nrm == 0.0:
                raise ConvergenceError("lanczos_lowest: basis breakdown", residual=best_res)
        V[n] = w / nrm
        AV[n] = apply(V[n])
        applies += 1
        n += 1
