"""Dense kernels: Cholesky factors, zero-constrained completion, Wishart draws.

Wishart convention
------------------
The samplers use the G-Wishart parameterisation in which ``W(delta, D)`` has
density proportional to ``|W|^((delta - 2)/2) exp(-tr(W D)/2)``. For a
``d x d`` matrix that is the textbook Wishart with

    degrees of freedom  = delta + d - 1
    scale matrix        = inv(D)

so ``E[W] = (delta + d - 1) inv(D)``. :func:`sample_wishart` takes the
``(delta, D)`` pair, not ``(df, scale)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Graph, Permutation, completion_entries, fill_in_graph


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix that must be positive definite is not.

    No jitter is ever added; a failed factorisation is always an error.
    """


@dataclass
class CholeskyFactor:
    """Upper-triangular ``phi`` with ``phi.T @ phi = K`` and its nonzero pattern."""

    phi: np.ndarray
    fill: Graph

    @property
    def p(self) -> int:
        return self.phi.shape[0]

    def to_matrix(self) -> np.ndarray:
        return self.phi.T @ self.phi


def chol_upper(K: np.ndarray) -> np.ndarray:
    """Upper Cholesky factor of ``K`` as a bare array (hot-path helper)."""
    try:
        return np.linalg.cholesky(K).T
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"matrix is not positive definite: {exc}") from None


def pattern_of(phi: np.ndarray) -> Graph:
    p = phi.shape[0]
    iu, ju = np.nonzero(np.triu(phi, 1))
    return Graph.from_edges(p, zip(iu.tolist(), ju.tolist()))


def cholesky(K: np.ndarray) -> CholeskyFactor:
    """Factor ``K = phi.T @ phi`` with ``phi`` upper triangular.

    Raises:
      NotPositiveDefiniteError: a non-positive pivot was met.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {K.shape}")
    phi = chol_upper(K)
    return CholeskyFactor(phi, pattern_of(phi))


def complete_upper(phi: np.ndarray, entries) -> None:
    """Fill ``phi[i, j]`` in place for each ``(i, j)`` in ``entries`` (row-major order).

    ``phi[i, j] = -(1/phi[i, i]) * sum_{l < i} phi[l, i] * phi[l, j]``, which
    is exactly what makes ``(phi.T @ phi)[i, j]`` vanish.
    """
    for i, j in entries:
        phi[i, j] = -np.dot(phi[:i, i], phi[:i, j]) / phi[i, i]


def complete_phi(phi_free: CholeskyFactor, G: Graph, F: Graph | None = None) -> CholeskyFactor:
    """Set the fill-in entries of a factor so that ``phi.T @ phi`` is zero off ``G``.

    Only the diagonal and the upper-triangle positions of edges of ``G`` are
    read as free values. ``F`` defaults to the fill-in graph of ``G`` under the
    natural ordering; entries outside ``F`` are forced to zero.
    """
    phi = np.triu(np.array(phi_free.phi, dtype=float))
    if phi.shape != (G.p, G.p):
        raise ValueError(f"factor shape {phi.shape} does not match p={G.p}")
    diag = np.diag(phi)
    if np.any(diag == 0):
        raise ValueError("zero diagonal entry in Cholesky factor")
    if F is None:
        F = fill_in_graph(G)
        entries = completion_entries(G)
    else:
        entries = tuple((i, j) for i, j in F.edges() if not G.has_edge(i, j))
    mask = np.triu(F.to_array(), 1) | np.eye(G.p, dtype=bool)
    phi[~mask] = 0.0
    complete_upper(phi, entries)
    return CholeskyFactor(phi, F)


def permute(M: np.ndarray, perm: Permutation) -> np.ndarray:
    """Reindex rows and columns so that ``out[a, b] = M[perm.order[a], perm.order[b]]``."""
    order = np.asarray(perm.order)
    M = np.asarray(M)
    if M.shape != (len(order), len(order)):
        raise ValueError(f"matrix shape {M.shape} does not match permutation of size {len(order)}")
    return M[np.ix_(order, order)]


def sample_wishart(delta: float, D: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw from ``W(delta, D)`` (density ``|W|^((delta-2)/2) exp(-tr(W D)/2)``).

    Bartlett construction with ``df = delta + d - 1`` and scale ``inv(D)``.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    d = D.shape[0]
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    L = chol_upper(D).T  # D = L L'
    df = delta + d - 1
    A = np.zeros((d, d))
    A[np.diag_indices(d)] = np.sqrt(rng.chisquare(df - np.arange(d)))
    if d > 1:
        il = np.tril_indices(d, -1)
        A[il] = rng.standard_normal(len(il[0]))
    # W = L^{-T} A A' L^{-1}
    B = np.linalg.solve(L.T, A)
    W = B @ B.T
    return 0.5 * (W + W.T)


def read_matrix_csv(path: str | Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))


def write_matrix_csv(M: np.ndarray, path: str | Path) -> None:
    np.savetxt(path, np.atleast_2d(M), delimiter=",", fmt="%.17g")
