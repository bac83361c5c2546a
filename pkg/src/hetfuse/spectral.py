"""Laplacians, top-k eigenvalue alignment and the polynomial-filter approximation check."""

from __future__ import annotations

import numpy as np
import scipy.sparse.linalg as spla

from . import autograd as ag
from .autograd import Value
from .graph import HeteroSnapshot, hetero_adjacency

DENSE_LIMIT = 500


class EigenError(RuntimeError):
    pass


def laplacian(adjacency: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    if a.size and np.max(np.abs(a - a.T)) > tol:
        raise ValueError("adjacency is not symmetric")
    return np.diag(a.sum(axis=1)) - a


def laplacian_value(a: Value) -> Value:
    """Differentiable ``diag(A 1) - A``."""

    def backward(g):
        # dL_ii/dA_ij = 1, dL_ij/dA_ij = -1
        a._accum(np.diag(g)[:, None] - g)

    return Value.from_op(np.diag(a.data.sum(axis=1)) - a.data, (a,), backward, "laplacian")


def _eigh(mat: np.ndarray):
    try:
        return np.linalg.eigh(mat)
    except np.linalg.LinAlgError as exc:
        raise EigenError(f"symmetric eigensolver did not converge: {exc}") from exc


def top_k_eigs(lap: np.ndarray, k: int) -> np.ndarray:
    """The ``k`` largest eigenvalues, descending.

    Dense ``eigh`` up to ``DENSE_LIMIT`` nodes, implicitly restarted Lanczos above.
    """
    lap = np.asarray(lap, dtype=np.float64)
    n = lap.shape[0]
    if not 0 < k <= n:
        raise ValueError(f"k={k} must lie in 1..{n}")
    if n <= DENSE_LIMIT or k >= n - 1:
        return _eigh(lap)[0][::-1][:k].copy()
    try:
        vals = spla.eigsh(lap, k=k, which="LA", return_eigenvectors=False, tol=1e-12)
    except spla.ArpackNoConvergence as exc:
        raise EigenError(f"Lanczos did not converge: {exc}") from exc
    return np.sort(vals)[::-1]


def top_k_eigs_value(lap: Value, k: int) -> Value:
    """Top-k eigenvalues as a (k, 1) Value; backward uses ``d lambda = v v^T``.

    For repeated eigenvalues the gradient is the subgradient from whichever
    orthonormal basis vector the solver returned.
    """
    n = lap.shape[0]
    if not 0 < k <= n:
        raise ValueError(f"k={k} must lie in 1..{n}")
    sym = 0.5 * (lap.data + lap.data.T)
    vals, vecs = _eigh(sym)
    vals = vals[::-1][:k]
    vecs = vecs[:, ::-1][:, :k]

    def backward(g):
        lap._accum((vecs * g[:, 0]) @ vecs.T)

    return Value.from_op(vals.reshape(-1, 1), (lap,), backward, "top_k_eigs")


def hetero_top_k(snap: HeteroSnapshot, k: int) -> np.ndarray:
    return top_k_eigs(laplacian(hetero_adjacency(snap)), k)


def spec_loss(snap: HeteroSnapshot | np.ndarray, fusion_adjacency: Value, k: int) -> Value:
    """Squared distance between the top-k Laplacian spectra of the snapshot and the fusion graph.

    ``snap`` may be a snapshot or its precomputed descending top-k eigenvalues.
    """
    n_f = fusion_adjacency.shape[0]
    if isinstance(snap, HeteroSnapshot):
        n_h = snap.n_locations + snap.n_cases
        if k > min(n_h, n_f):
            raise ValueError(f"k={k} exceeds min dimension {min(n_h, n_f)}")
        target = hetero_top_k(snap, k)
    else:
        target = np.asarray(snap, dtype=np.float64)[:k]
        if k > min(len(np.asarray(snap)), n_f):
            raise ValueError(f"k={k} exceeds min dimension {min(len(np.asarray(snap)), n_f)}")
    lam_f = top_k_eigs_value(laplacian_value(fusion_adjacency), k)
    return ag.sum_squares(ag.sub(target.reshape(-1, 1), lam_f))


def poly_matrix(coeffs, a: np.ndarray) -> np.ndarray:
    """``sum_k c_k A^k`` with ``coeffs`` in increasing degree."""
    out = np.zeros_like(a)
    power = np.eye(a.shape[0])
    for c in coeffs:
        out = out + c * power
        power = power @ a
    return out


def poly_lipschitz(coeffs, radius: float) -> float:
    """Operator-Lipschitz constant of the polynomial on matrices of norm <= radius.

    Uses ``||A^k - B^k|| <= k R^(k-1) ||A - B||``.
    """
    return float(sum(k * abs(c) * radius ** (k - 1) for k, c in enumerate(coeffs) if k >= 1))


def spec_norm(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, 2)) if m.size else 0.0


def approximation_epsilon(a_hetero: np.ndarray, a_fusion: np.ndarray, proj: np.ndarray) -> float:
    """``||L_h - P L_f P^T||_2 / ||L_h||_2``."""
    l_h = laplacian(a_hetero)
    l_f = laplacian(a_fusion)
    denom = spec_norm(l_h)
    diff = spec_norm(l_h - proj @ l_f @ proj.T)
    if denom == 0.0:
        return 0.0 if diff == 0.0 else np.inf
    return diff / denom


def bound_check(a_hetero: np.ndarray, a_fusion: np.ndarray, proj: np.ndarray, coeffs) -> tuple[float, float]:
    """Return ``(lhs, rhs)`` of the filter-discrepancy bound.

    lhs = ||p(A_h) - P p(A_f) P^T||_2, rhs = L_p * eps * ||A_h||_2, with L_p
    from :func:`poly_lipschitz` on the radius covering both adjacencies.
    Diagnostic only.
    """
    coeffs = list(coeffs)
    if len(coeffs) > 4:
        raise ValueError("filter polynomials are limited to degree 3")
    a_hetero = np.asarray(a_hetero, dtype=np.float64)
    a_fusion = np.asarray(a_fusion, dtype=np.float64)
    lifted = proj @ a_fusion @ proj.T
    lhs = spec_norm(poly_matrix(coeffs, a_hetero) - proj @ poly_matrix(coeffs, a_fusion) @ proj.T)
    radius = max(spec_norm(a_hetero), spec_norm(a_fusion), spec_norm(lifted))
    eps = approximation_epsilon(a_hetero, a_fusion, proj)
    rhs = poly_lipschitz(coeffs, radius) * eps * spec_norm(a_hetero)
    return lhs, rhs
