"""G-Wishart densities and samplers.

``W_G(delta, D)`` is supported on precision matrices with the zero pattern
of ``G``; see :mod:`ggmvol.linalg` for how ``delta`` maps onto the usual
Wishart degrees of freedom.
"""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .graph import Graph, clique_cover, completion_entries, edge_index, nu_counts, offgraph_mask
from .linalg import CholeskyFactor, NotPositiveDefiniteError, chol_upper, complete_upper


@dataclass
class GWishartParams:
    delta: float
    D: np.ndarray
    G: Graph

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=float)
        if self.D.shape != (self.G.p, self.G.p):
            raise ValueError(f"D has shape {self.D.shape}, expected ({self.G.p}, {self.G.p})")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not np.array_equal(self.D, self.D.T) or np.any(np.linalg.eigvalsh(self.D) <= 0):
            raise ValueError("D must be symmetric positive definite")

    @property
    def p(self) -> int:
        return self.G.p

    def posterior(self, U: np.ndarray, n: float) -> GWishartParams:
        """Conjugate update: ``W_G(delta + n, D + U)``."""
        return GWishartParams(self.delta + n, self.D + np.asarray(U, dtype=float), self.G)

    def with_graph(self, G: Graph) -> GWishartParams:
        return GWishartParams(self.delta, self.D, G)

    def is_identity_scale(self) -> bool:
        return bool(np.array_equal(self.D, np.eye(self.p)))


@dataclass
class ChainState:
    """Coupled precision matrix and graph; ``K`` is zero exactly off ``G``."""

    K: np.ndarray
    G: Graph

    def copy(self) -> ChainState:
        return ChainState(self.K.copy(), self.G)

    def check(self) -> None:
        """Raise ``ValueError`` unless the zero pattern and positive definiteness hold."""
        K, G = self.K, self.G
        if K.shape != (G.p, G.p):
            raise ValueError(f"K has shape {K.shape}, graph has p={G.p}")
        if not np.array_equal(K, K.T):
            raise ValueError("K is not exactly symmetric")
        off = ~(G.to_array() | np.eye(G.p, dtype=bool))
        if np.any(K[off] != 0.0):
            raise ValueError("K has nonzero entries off the graph")
        try:
            chol_upper(K)
        except NotPositiveDefiniteError:
            raise ValueError("K is not positive definite") from None


def enforce_pattern(K: np.ndarray, G: Graph) -> np.ndarray:
    """Symmetrise and zero every off-graph entry, in place."""
    K += K.T
    K *= 0.5
    K[offgraph_mask(G)] = 0.0
    return K


# -- densities -------------------------------------------------------------


def log_density_phi(phi, params: GWishartParams) -> float:
    """Unnormalised log density of a Cholesky factor under ``W_G(delta, D)``.

    ``sum_i (delta + nu_i - 1) log phi_ii - tr(phi' phi D) / 2``; the
    normalising constant is deliberately left out.
    """
    phi = phi.phi if isinstance(phi, CholeskyFactor) else np.asarray(phi, dtype=float)
    if phi.shape != (params.p, params.p):
        raise ValueError(f"factor shape {phi.shape} does not match p={params.p}")
    diag = np.diag(phi)
    nu = nu_counts(params.G)
    return float(np.sum((params.delta + nu - 1) * np.log(diag)) - 0.5 * np.sum((phi @ params.D) * phi))


# -- block Gibbs -----------------------------------------------------------


@lru_cache(maxsize=4096)
def _gibbs_plan(p: int, cliques: tuple[tuple[int, ...], ...]):
    plan = []
    for C in cliques:
        Ca = np.asarray(C, dtype=np.intp)
        R = np.asarray([v for v in range(p) if v not in C], dtype=np.intp)
        plan.append((C, np.ix_(Ca, Ca), np.ix_(R, R) if len(R) else None, np.ix_(R, Ca) if len(R) else None))
    return tuple(plan)


class WishartScales:
    """Per-clique ``inv(chol(D_C)).T`` factors for a fixed scale matrix ``D``."""

    def __init__(self, delta: float, D: np.ndarray):
        self.delta = delta
        self.D = D
        self._cache: dict = {}

    def draw(self, C: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
        M = self._cache.get(C)
        if M is None:
            idx = np.asarray(C, dtype=np.intp)
            L = chol_upper(self.D[np.ix_(idx, idx)]).T
            M = self._cache[C] = np.linalg.inv(L).T
        return bartlett_draw(self.delta, M, rng)


def bartlett_draw(delta: float, M: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """``W(delta, D)`` draw given ``M = inv(L).T`` where ``D = L L'``."""
    d = M.shape[0]
    if d == 1:
        return np.array([[rng.chisquare(delta) * M[0, 0] ** 2]])
    A = np.zeros((d, d))
    A[np.diag_indices(d)] = np.sqrt(rng.chisquare(delta + d - 1 - np.arange(d)))
    il = np.tril_indices(d, -1)
    A[il] = rng.standard_normal(len(il[0]))
    B = M @ A
    return B @ B.T


def block_gibbs_update(
    K: np.ndarray,
    cliques,
    delta: float,
    D: np.ndarray,
    rng: np.random.Generator,
    counters: Counter | None = None,
    scales: WishartScales | None = None,
) -> np.ndarray:
    """One pass of clique-wise Gibbs updates on ``K`` in place.

    For each clique ``C`` the Schur complement of ``K_C`` is replaced by a
    draw from ``W(delta, D_C)``. Pass ``scales`` to reuse the per-clique
    factorisations of ``D`` across calls.
    """
    if scales is None or scales.delta != delta or scales.D is not D:
        scales = WishartScales(delta, D)
    for C, ixCC, ixRR, ixRC in _gibbs_plan(K.shape[0], tuple(cliques)):
        W = scales.draw(C, rng)
        if ixRR is not None:
            K_RC = K[ixRC]
            try:
                X = np.linalg.solve(K[ixRR], K_RC)
            except np.linalg.LinAlgError:
                raise NotPositiveDefiniteError("singular K_{V\\C} in block Gibbs") from None
            if counters is not None:
                counters["gibbs_solves"] += 1
            M = K_RC.T @ X
            W = W + 0.5 * (M + M.T)
        K[ixCC] = W
    return K


def block_gibbs_sweep(
    state: ChainState,
    params: GWishartParams,
    cliques=None,
    rng: np.random.Generator | None = None,
    counters: Counter | None = None,
) -> ChainState:
    """Return a new state after one fixed-order block Gibbs sweep over ``state.G``.

    ``params.delta`` and ``params.D`` define the target; the graph is
    taken from the state.
    """
    rng = np.random.default_rng() if rng is None else rng
    if cliques is None:
        cliques = clique_cover(state.G)
    K = block_gibbs_update(state.K.copy(), cliques, params.delta, params.D, rng, counters)
    return ChainState(enforce_pattern(K, state.G), state.G)


# -- random-walk MH on the Cholesky factor (identity scale only) ------------


def propose_factor(G: Graph, delta: float, rng: np.random.Generator, entries=None, nu=None) -> np.ndarray:
    """Draw the free entries of a factor from their chi / normal proposal and complete it."""
    p = G.p
    if entries is None:
        entries = completion_entries(G)
    if nu is None:
        nu = nu_counts(G)
    psi = np.zeros((p, p))
    psi[np.diag_indices(p)] = np.sqrt(rng.chisquare(delta + nu))
    ii, jj = edge_index(G)
    if len(ii):
        psi[ii, jj] = rng.standard_normal(len(ii))
    complete_upper(psi, entries)
    return psi


def rwmh_step_array(
    phi: np.ndarray, G: Graph, delta: float, rng: np.random.Generator, entries=None, nu=None
) -> tuple[np.ndarray, bool]:
    """Array version of :func:`rwmh_prior_step`; returns ``(factor, accepted)``."""
    if entries is None:
        entries = completion_entries(G)
    psi = propose_factor(G, delta, rng, entries, nu)
    if not entries:
        return psi, True
    ii, jj = zip(*entries)
    log_alpha = -0.5 * (np.sum(psi[ii, jj] ** 2) - np.sum(phi[ii, jj] ** 2))
    if log_alpha >= 0 or np.log(rng.random()) < log_alpha:
        return psi, True
    return phi, False


def rwmh_prior_step(phi: CholeskyFactor, G: Graph, delta: float, rng: np.random.Generator) -> CholeskyFactor:
    """One Metropolis-Hastings step targeting ``W_G(delta, I_p)`` on the factor.

    The proposal draws each diagonal entry as the root of a chi-square with
    ``delta + nu_i`` degrees of freedom and each free off-diagonal entry as a
    standard normal, then completes the fill-in. Only the fill-in entries
    enter the acceptance ratio.
    """
    out, _ = rwmh_step_array(np.asarray(phi.phi, dtype=float), G, delta, rng)
    return CholeskyFactor(out, phi.fill)


# -- drivers ---------------------------------------------------------------


@dataclass
class PriorSampleResult:
    draws: np.ndarray  # (iters, p, p)
    acceptance: float = float("nan")
    counters: Counter = field(default_factory=Counter)


def sample_gwishart(
    params: GWishartParams,
    iters: int,
    rng: np.random.Generator,
    sampler: str = "gibbs",
    burnin: int = 0,
    K0: np.ndarray | None = None,
    cover: str = "maximal",
) -> PriorSampleResult:
    """Run a ``W_G(delta, D)`` sampler and return the post-burn-in draws of ``K``.

    ``sampler="rwmh"`` is only defined for ``D = I``; other scales are
    rejected.
    """
    G, p = params.G, params.p
    K = np.eye(p) if K0 is None else np.array(K0, dtype=float)
    ChainState(K, G).check()
    draws = np.empty((iters - burnin, p, p))
    counters: Counter = Counter()
    if sampler == "gibbs":
        cliques = clique_cover(G, cover)
        for it in range(iters):
            block_gibbs_update(K, cliques, params.delta, params.D, rng, counters)
            enforce_pattern(K, G)
            if it >= burnin:
                draws[it - burnin] = K
        return PriorSampleResult(draws, 1.0, counters)
    if sampler == "rwmh":
        if not params.is_identity_scale():
            raise ValueError("the RWMH sampler is only available for D = I")
        entries, nu = completion_entries(G), nu_counts(G)
        phi = chol_upper(K)
        accepted = 0
        for it in range(iters):
            phi, acc = rwmh_step_array(phi, G, params.delta, rng, entries, nu)
            accepted += acc
            if it >= burnin:
                draws[it - burnin] = enforce_pattern(phi.T @ phi, G)
        return PriorSampleResult(draws, accepted / iters, counters)
    raise ValueError(f"unknown sampler {sampler!r}")


def write_trace(draws: np.ndarray, path: str | Path, start: int = 0) -> None:
    """CSV trace: iteration index followed by the upper triangle of ``K`` (row-major)."""
    p = draws.shape[1]
    iu = np.triu_indices(p)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iter"] + [f"K_{i + 1}_{j + 1}" for i, j in zip(*iu)])
        for k, K in enumerate(draws):
            w.writerow([start + k] + [repr(float(v)) for v in K[iu]])
