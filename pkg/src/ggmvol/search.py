"""Graph structure search with conditional Bayes factors and double MH.

Two samplers over ``(K, G)`` are provided:

* ``"cl"`` works on the Cholesky factor of a permuted ``K`` with the edge of
  interest in the last position. Edge moves need one Cholesky factorisation
  and no linear solves.
* ``"wl"`` works on ``K`` directly; every edge move solves systems in
  ``K_{V\\e}`` and ``K_{V\\j}``.

Both replace the intractable prior normalising-constant ratio with a factor
evaluated at an auxiliary draw from the prior (double Metropolis-Hastings).
All factors are handled on the log scale.

Orientation: ``H`` is the (no edge) / (edge) conditional Bayes factor and
``N`` is the (edge) / (no edge) one.
"""
from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, multigammaln

from .graph import Graph, clique_cover, permuted_system
from .gwishart import (
    ChainState,
    GWishartParams,
    WishartScales,
    block_gibbs_update,
    enforce_pattern,
    rwmh_step_array,
)
from .linalg import NotPositiveDefiniteError, chol_upper

LOG_2PI = math.log(2 * math.pi)
SAMPLERS = ("cl", "wl")


@dataclass(frozen=True)
class GraphPrior:
    """Independent Bernoulli(q) edge inclusion."""

    edge_probability: float = 0.5

    def __post_init__(self):
        if not 0 < self.edge_probability < 1:
            raise ValueError(f"edge probability must lie in (0, 1), got {self.edge_probability}")

    @property
    def log_odds(self) -> float:
        q = self.edge_probability
        return math.log(q) - math.log1p(-q)


@dataclass
class EdgeMoveFactors:
    """Log factors from the most recent edge move (for diagnostics)."""

    log_N_posterior: float = float("nan")
    log_N_prior: float = float("nan")
    log_H_posterior: float = float("nan")
    log_H_prior: float = float("nan")


# -- closed-form pieces ------------------------------------------------------


def log_factor_I(b: float, c: float) -> float:
    if b <= 0 or c <= 0:
        raise ValueError(f"I(b, c) needs b > 0 and c > 0, got b={b}, c={c}")
    return -0.5 * b * math.log(c) + 0.5 * b * math.log(2.0) + float(gammaln(0.5 * b))


def factor_I(b: float, c: float) -> float:
    """``c^(-b/2) 2^(b/2) Gamma(b/2)``: the integral of ``x^((b-2)/2) exp(-c x / 2)`` over x > 0."""
    return math.exp(log_factor_I(b, c))


def log_factor_J(h: float, B: np.ndarray, b: float) -> float:
    B = np.asarray(B, dtype=float)
    if B[1, 1] <= 0 or b <= 0:
        raise ValueError("J(h, B, b) needs B[1, 1] > 0 and b > 0")
    return (
        0.5 * (LOG_2PI - math.log(B[1, 1]))
        + 0.5 * (h - 1) * math.log(b)
        + log_factor_I(h, B[1, 1])
        - 0.5 * b * (B[0, 0] - B[0, 1] ** 2 / B[1, 1])
    )


def factor_J(h: float, B: np.ndarray, b: float) -> float:
    return math.exp(log_factor_J(h, B, b))


def _schur_pieces(K: np.ndarray, i: int, j: int, counters: Counter | None):
    """``B = K_{e,R} K_R^{-1} K_{R,e}`` for ``e = (i, j)``, ``R = V \\ e``."""
    p = K.shape[0]
    R = [v for v in range(p) if v != i and v != j]
    if not R:
        return np.zeros((2, 2)), R
    K_Re = K[np.ix_(R, [i, j])]
    try:
        X = np.linalg.solve(K[np.ix_(R, R)], K_Re)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("singular K_{V\\e}") from None
    if counters is not None:
        counters["large_solves"] += 1
    B = K_Re.T @ X
    return 0.5 * (B + B.T), R


def log_factor_H(d: float, e: tuple[int, int], K: np.ndarray, S: np.ndarray, counters: Counter | None = None) -> float:
    """Log of the (no edge)/(edge) conditional Bayes factor given ``K^{-e}``.

    Built from the auxiliary matrices ``K0`` (edge removed, ``K_jj`` at its
    singular value) and ``K1`` (the ``e`` block replaced by its regression
    on the rest), as in the original formulation. ``K_ij`` and ``K_jj`` of
    the input are ignored.
    """
    i, j = e
    p = K.shape[0]
    B, R = _schur_pieces(K, i, j, counters)
    a = K[i, i] - B[0, 0]
    if a <= 0:
        raise NotPositiveDefiniteError("non-positive Schur complement in H")

    K0 = K.copy()
    K0[i, j] = K0[j, i] = 0.0
    not_j = [v for v in range(p) if v != j]
    k_j = K0[not_j, j]
    K_nj = K0[np.ix_(not_j, not_j)]
    try:
        K0[j, j] = float(k_j @ np.linalg.solve(K_nj, k_j))
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("singular K_{V\\j}") from None
    K1 = K.copy()
    K1[np.ix_([i, j], [i, j])] = B

    sign0, logdet0 = np.linalg.slogdet(K_nj)
    if R:
        sign1, logdet1 = np.linalg.slogdet(K[np.ix_(R, R)])
    else:
        sign1, logdet1 = 1.0, 0.0
    if counters is not None:
        counters["large_solves"] += 1
        counters["large_dets"] += 2 if R else 1
    if sign0 <= 0 or sign1 <= 0:
        raise NotPositiveDefiniteError("non-positive determinant in H")

    S_ee = S[np.ix_([i, j], [i, j])]
    return (
        log_factor_I(d, S[j, j])
        - log_factor_J(d, S_ee, a)
        + 0.5 * (d - 2) * (logdet0 - logdet1)
        - 0.5 * float(np.sum(S * (K0 - K1)))
    )


def factor_H(d: float, e: tuple[int, int], K: np.ndarray, S: np.ndarray) -> float:
    return math.exp(log_factor_H(d, e, K, S))


def log_factor_N(phi: np.ndarray, S: np.ndarray) -> float:
    """Log of the (edge)/(no edge) conditional Bayes factor for the last pair.

    ``phi`` is the upper Cholesky factor with the edge at ``(p-2, p-1)``
    (0-indexed). Only columns ``p-2``, ``p-1`` of ``phi`` and the entries
    ``S[p-2, p-1]``, ``S[p-1, p-1]`` are read.
    """
    phi = phi.phi if hasattr(phi, "phi") else phi
    p = phi.shape[0]
    a, b = p - 2, p - 1
    s_bb = S[b, b]
    if s_bb <= 0:
        raise ValueError("S[p, p] must be positive")
    d_aa = phi[a, a]
    phi0 = -float(np.dot(phi[:a, a], phi[:a, b])) / d_aa
    mu = d_aa * S[a, b] / s_bb
    return math.log(d_aa) + 0.5 * (LOG_2PI - math.log(s_bb)) + 0.5 * s_bb * (phi0 + mu) ** 2


def factor_N(phi, S: np.ndarray) -> float:
    return math.exp(log_factor_N(phi, S))


def two_node_edge_posterior(U: np.ndarray, n: float, delta: float, D: np.ndarray, q: float = 0.5) -> float:
    """Exact posterior probability of the single edge when ``p = 2``.

    Both graphs have closed-form normalising constants: the empty graph is a
    product of two scalar gamma integrals and the complete graph is an
    ordinary Wishart integral.
    """
    D = np.asarray(D, dtype=float)
    Dn = D + np.asarray(U, dtype=float)

    def log_I_full(dl, M):
        m = dl + 1  # Wishart degrees of freedom for p = 2
        return m * math.log(2.0) - 0.5 * m * np.linalg.slogdet(M)[1] + float(multigammaln(0.5 * m, 2))

    def log_I_empty(dl, M):
        return log_factor_I(dl, M[0, 0]) + log_factor_I(dl, M[1, 1])

    log_full = math.log(q) + log_I_full(delta + n, Dn) - log_I_full(delta, D)
    log_empty = math.log1p(-q) + log_I_empty(delta + n, Dn) - log_I_empty(delta, D)
    return float(1.0 / (1.0 + math.exp(log_empty - log_full)))


# -- edge moves --------------------------------------------------------------


def _accept(log_ratio: float, rng: np.random.Generator) -> bool:
    return log_ratio >= 0 or math.log(rng.random()) < log_ratio


def resample_edge_block(
    K: np.ndarray,
    e: tuple[int, int],
    present: bool,
    d: float,
    S: np.ndarray,
    rng: np.random.Generator,
    counters: Counter | None = None,
) -> None:
    """Draw ``K_ij`` (if ``present``) and ``K_jj`` from their conditional given ``K^{-e}``, in place.

    With ``A`` the Schur complement of the ``e`` block, ``c = A_jj - A_ij^2 / A_ii``
    is Gamma(d/2, rate S_jj/2) and ``A_ij`` is Normal(-A_ii S_ij / S_jj, A_ii / S_jj).
    """
    i, j = e
    B, _ = _schur_pieces(K, i, j, counters)
    a = K[i, i] - B[0, 0]
    s_jj = S[j, j]
    c = rng.gamma(0.5 * d, 2.0 / s_jj)
    if present:
        a12 = -a * S[i, j] / s_jj + math.sqrt(a / s_jj) * rng.standard_normal()
        K[i, j] = K[j, i] = a12 + B[0, 1]
    else:
        a12 = -B[0, 1]
        K[i, j] = K[j, i] = 0.0
    K[j, j] = c + a12 * a12 / a + B[1, 1]


def wl_edge_move(
    state: ChainState,
    e: tuple[int, int],
    post: GWishartParams,
    prior: GWishartParams,
    gp: GraphPrior,
    rng: np.random.Generator,
    counters: Counter | None = None,
    factors: EdgeMoveFactors | None = None,
    cover: str = "maximal",
    prior_scales: WishartScales | None = None,
) -> ChainState:
    """One edge update working directly on ``K``.

    The auxiliary prior draw resamples the ``e`` block and then runs one
    block Gibbs sweep under the proposed graph.
    """
    i, j = sorted(e)
    e = (i, j)
    G = state.G
    K = state.K.copy()
    present = G.has_edge(i, j)
    counters = Counter() if counters is None else counters

    log_H_post = log_factor_H(post.delta, e, K, post.D, counters)
    log_add = gp.log_odds - log_H_post
    if factors is not None:
        factors.log_H_posterior = log_H_post
    counters["edge_visits"] += 1
    if _accept(-log_add if present else log_add, rng):
        counters["attempts"] += 1
        G_new = G.toggle_edge(i, j)
        Kt = K.copy()
        resample_edge_block(Kt, e, not present, prior.delta, prior.D, rng, counters)
        block_gibbs_update(Kt, clique_cover(G_new, cover), prior.delta, prior.D, rng, counters, prior_scales)
        enforce_pattern(Kt, G_new)
        log_H_prior = log_factor_H(prior.delta, e, Kt, prior.D, counters)
        if factors is not None:
            factors.log_H_prior = log_H_prior
        if _accept(-log_H_prior if present else log_H_prior, rng):
            counters["accepted"] += 1
            G, present = G_new, not present
    resample_edge_block(K, e, present, post.delta, post.D, rng, counters)
    return ChainState(enforce_pattern(K, G), G)


def cl_edge_move(
    state: ChainState,
    e: tuple[int, int],
    post: GWishartParams,
    prior: GWishartParams,
    gp: GraphPrior,
    rng: np.random.Generator,
    counters: Counter | None = None,
    factors: EdgeMoveFactors | None = None,
) -> ChainState:
    """One edge update on the Cholesky factor of the permuted system.

    ``prior.D`` must be the identity: the auxiliary draw uses the
    random-walk MH sampler, which is only defined for that scale.
    """
    i, j = sorted(e)
    G = state.G
    p = G.p
    counters = Counter() if counters is None else counters
    system = permuted_system(G, (i, j))
    ix = system["ix"]
    S = post.D[ix]
    phi = chol_upper(state.K[ix])
    counters["cholesky"] += 1
    a, b = p - 2, p - 1
    present = G.has_edge(i, j)

    log_N_post = log_factor_N(phi, S)
    log_add = gp.log_odds + log_N_post
    if factors is not None:
        factors.log_N_posterior = log_N_post
    counters["edge_visits"] += 1
    if _accept(-log_add if present else log_add, rng):
        counters["attempts"] += 1
        adding = not present
        target = system["graphs"][adding]
        start = phi.copy()
        if not adding:
            start[a, b] = -np.dot(start[:a, a], start[:a, b]) / start[a, a]
        aux, acc = rwmh_step_array(
            start, target, prior.delta, rng, system["entries"][adding], system["nu"][adding]
        )
        counters["aux_accepted"] += acc
        log_N_prior = log_factor_N(aux, prior.D[ix])
        if factors is not None:
            factors.log_N_prior = log_N_prior
        if _accept(-log_N_prior if adding else log_N_prior, rng):
            counters["accepted"] += 1
            present = adding

    d = post.delta
    s_bb = S[b, b]
    if present:
        mu = phi[a, a] * S[a, b] / s_bb
        phi[a, b] = -mu + rng.standard_normal() / math.sqrt(s_bb)
    else:
        phi[a, b] = -np.dot(phi[:a, a], phi[:a, b]) / phi[a, a]
    phi[b, b] = math.sqrt(rng.gamma(0.5 * d, 2.0 / s_bb))

    G_new = G.add_edge(i, j) if present else G.remove_edge(i, j)
    K = np.empty_like(state.K)
    K[ix] = phi.T @ phi
    return ChainState(enforce_pattern(K, G_new), G_new)


def posterior_sweep(
    state: ChainState,
    sampler: str,
    post: GWishartParams,
    prior: GWishartParams,
    gp: GraphPrior,
    rng: np.random.Generator,
    counters: Counter | None = None,
    cover: str = "maximal",
    scales: tuple[WishartScales, WishartScales] | None = None,
) -> ChainState:
    """Visit every pair in lexicographic order, then run one block Gibbs sweep.

    ``scales`` optionally carries cached ``(posterior, prior)`` Wishart
    factors so repeated sweeps skip refactorising ``D``.
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"sampler must be one of {SAMPLERS}, got {sampler!r}")
    if sampler == "cl" and not prior.is_identity_scale():
        raise ValueError("the CL sampler requires the prior scale D = I")
    counters = Counter() if counters is None else counters
    if scales is None:
        scales = (WishartScales(post.delta, post.D), WishartScales(prior.delta, prior.D))
    p = state.G.p
    for i in range(p):
        for j in range(i + 1, p):
            if sampler == "cl":
                state = cl_edge_move(state, (i, j), post, prior, gp, rng, counters)
            else:
                state = wl_edge_move(
                    state, (i, j), post, prior, gp, rng, counters, cover=cover, prior_scales=scales[1]
                )
    K = block_gibbs_update(
        state.K.copy(), clique_cover(state.G, cover), post.delta, post.D, rng, counters, scales[0]
    )
    counters["sweeps"] += 1
    return ChainState(enforce_pattern(K, state.G), state.G)


@dataclass
class SearchResult:
    edge_probs: np.ndarray
    K_mean: np.ndarray
    seconds: float
    counters: Counter = field(default_factory=Counter)
    sampler: str = "cl"
    iters: int = 0
    burnin: int = 0
    seed: int | None = None
    final_state: ChainState | None = None

    def timing(self) -> dict:
        edge_visits = max(self.counters.get("edge_visits", 0), 1)
        attempts = self.counters.get("attempts", 0)
        return {
            "sampler": self.sampler,
            "seconds": self.seconds,
            "iters": self.iters,
            "burnin": self.burnin,
            "seed": self.seed,
            "counters": dict(sorted(self.counters.items())),
            "large_solves_per_edge_visit": self.counters.get("large_solves", 0) / edge_visits,
            "large_solves_per_attempt": self.counters.get("large_solves", 0) / attempts if attempts else 0.0,
        }


def run_chain(
    U: np.ndarray,
    n: float,
    prior: GWishartParams,
    gp: GraphPrior,
    sampler: str = "cl",
    iters: int = 1000,
    burnin: int = 100,
    seed: int | None = 0,
    state: ChainState | None = None,
    cover: str = "maximal",
) -> SearchResult:
    """Run the joint ``(K, G)`` chain on data summarised by ``U = sum z z'`` and ``n``.

    Returns Monte Carlo edge-inclusion frequencies (unit diagonal), the
    model-averaged posterior mean of ``K`` and wall-clock timing with
    operation counters. The starting point defaults to the empty graph with
    ``K = I``; ``prior.G`` is not used.
    """
    if iters <= burnin:
        raise ValueError(f"iters ({iters}) must exceed burnin ({burnin})")
    if sampler not in SAMPLERS:
        raise ValueError(f"sampler must be one of {SAMPLERS}, got {sampler!r}")
    p = prior.p
    U = np.asarray(U, dtype=float)
    if U.shape != (p, p):
        raise ValueError(f"U has shape {U.shape}, expected ({p}, {p})")
    post = prior.posterior(U, n)
    rng = np.random.default_rng(seed)
    if state is None:
        state = ChainState(np.eye(p), Graph.empty(p))
    state.check()
    counters: Counter = Counter()
    scales = (WishartScales(post.delta, post.D), WishartScales(prior.delta, prior.D))
    edge_sum = np.zeros((p, p))
    K_sum = np.zeros((p, p))
    t0 = time.perf_counter()
    for it in range(iters):
        state = posterior_sweep(state, sampler, post, prior, gp, rng, counters, cover, scales)
        if it >= burnin:
            edge_sum += state.G.to_array()
            K_sum += state.K
    seconds = time.perf_counter() - t0
    kept = iters - burnin
    probs = edge_sum / kept
    np.fill_diagonal(probs, 1.0)
    return SearchResult(probs, K_sum / kept, seconds, counters, sampler, iters, burnin, seed, state)

