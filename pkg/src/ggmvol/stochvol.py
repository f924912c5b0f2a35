"""Multivariate graphical stochastic volatility model.

    Y_t | K, X_t   ~ N_p(0, exp(X_t) K^{-1})
    X_t | X_{t-1}  ~ N(phi X_{t-1}, 1/tau),   X_0 = 0
    phi ~ N(0, tau0),  tau ~ Gamma(a, rate b),  K | G ~ W_G(delta, D),  G ~ Bernoulli(q) edges

One sweep updates X (single-site random-walk MH), phi and tau (exact
Gibbs), then ``(K, G)`` jointly with one CL structure-search sweep on the
volatility-scaled scatter matrix.
"""
from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import truncnorm

from .graph import Graph
from .gwishart import ChainState, GWishartParams
from .search import GraphPrior, posterior_sweep

TARGET_ACCEPT = 0.35


@dataclass
class SVHyper:
    """Prior settings. ``tau0`` is the prior variance of ``phi``; ``D=None`` means identity."""

    tau0: float = 1.0
    a: float = 1.0
    b: float = 1.0
    delta: float = 3.0
    D: np.ndarray | None = None
    edge_probability: float = 0.5
    truncate_phi: bool = False

    def __post_init__(self):
        for name in ("tau0", "a", "b", "delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        GraphPrior(self.edge_probability)

    def scale(self, p: int) -> np.ndarray:
        return np.eye(p) if self.D is None else np.asarray(self.D, dtype=float)


@dataclass
class SVState:
    X: np.ndarray  # X_1..X_T; X_0 = 0 is implicit
    phi: float
    tau: float
    K: np.ndarray
    G: Graph

    def copy(self) -> SVState:
        return SVState(self.X.copy(), self.phi, self.tau, self.K.copy(), self.G)


@dataclass
class ReturnsSeries:
    dates: list
    Y: np.ndarray  # (T, p)
    tickers: list = field(default_factory=list)

    def __post_init__(self):
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if len(self.dates) != self.Y.shape[0]:
            raise ValueError(f"{len(self.dates)} dates for {self.Y.shape[0]} rows")
        if not np.all(np.isfinite(self.Y)):
            raise ValueError("returns contain missing or non-finite values")
        if not self.tickers:
            self.tickers = [f"asset{k + 1}" for k in range(self.Y.shape[1])]

    @property
    def T(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[1]

    def head(self, t: int) -> ReturnsSeries:
        return ReturnsSeries(self.dates[:t], self.Y[:t], self.tickers)


# -- single updates --------------------------------------------------------


def _quad_forms(Y: np.ndarray, K: np.ndarray) -> np.ndarray:
    return np.einsum("ti,ij,tj->t", Y, K, Y)


def update_X(
    state: SVState,
    Y: np.ndarray,
    hyper: SVHyper,
    step: float,
    rng: np.random.Generator,
    stats: Counter | None = None,
) -> SVState:
    """Random-walk MH on each ``X_t`` with a ``N(X_t, step^2)`` proposal.

    Sites are visited in two interleaved halves (odd then even ``t``). Given
    the other half, the sites in a half are conditionally independent, so
    each half is proposed and accepted site-wise in one vectorised pass.
    """
    Y = Y.Y if isinstance(Y, ReturnsSeries) else Y
    T, p = Y.shape
    X = state.X.copy()
    phi, tau = state.phi, state.tau
    q = _quad_forms(Y, state.K)

    def site_logp(x, idx):
        prev = np.where(idx > 0, X[idx - 1], 0.0)
        out = -0.5 * p * x - 0.5 * np.exp(-x) * q[idx] - 0.5 * tau * (x - phi * prev) ** 2
        has_next = idx < T - 1
        nxt = X[np.minimum(idx + 1, T - 1)]
        return out - np.where(has_next, 0.5 * tau * (nxt - phi * x) ** 2, 0.0)

    for start in (0, 1):
        idx = np.arange(start, T, 2)
        if not len(idx):
            continue
        cur = X[idx]
        prop = cur + step * rng.standard_normal(len(idx))
        log_ratio = site_logp(prop, idx) - site_logp(cur, idx)
        accept = np.log(rng.random(len(idx))) < log_ratio
        X[idx] = np.where(accept, prop, cur)
        if stats is not None:
            stats["x_accepted"] += int(accept.sum())
            stats["x_proposed"] += len(idx)
    return replace(state, X=X)


def update_phi(state: SVState, hyper: SVHyper, rng: np.random.Generator) -> SVState:
    """Conjugate draw of the AR coefficient."""
    X = state.X
    prev = np.concatenate(([0.0], X[:-1]))
    v = 1.0 / (1.0 / hyper.tau0 + state.tau * np.dot(prev, prev))
    m = v * state.tau * np.dot(prev, X)
    if hyper.truncate_phi:
        sd = math.sqrt(v)
        phi = float(truncnorm.rvs((-1 - m) / sd, (1 - m) / sd, loc=m, scale=sd, random_state=rng))
    else:
        phi = m + math.sqrt(v) * rng.standard_normal()
    return replace(state, phi=float(phi))


def update_tau(state: SVState, hyper: SVHyper, rng: np.random.Generator) -> SVState:
    """Conjugate Gamma draw of the innovation precision."""
    X = state.X
    prev = np.concatenate(([0.0], X[:-1]))
    resid = X - state.phi * prev
    rate = hyper.b + 0.5 * np.dot(resid, resid)
    return replace(state, tau=float(rng.gamma(hyper.a + 0.5 * len(X), 1.0 / rate)))


def scaled_scatter(Y: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``sum_t Y_t Y_t' / exp(X_t)``."""
    W = Y * np.exp(-0.5 * X)[:, None]
    return W.T @ W


def update_K_G(
    state: SVState,
    Y: np.ndarray,
    hyper: SVHyper,
    rng: np.random.Generator,
    counters: Counter | None = None,
) -> SVState:
    """One CL structure-search sweep on ``D* = D + sum_t Y_t Y_t' / exp(X_t)`` with ``T`` observations."""
    Y = Y.Y if isinstance(Y, ReturnsSeries) else Y
    T, p = Y.shape
    D = hyper.scale(p)
    prior = GWishartParams(hyper.delta, D, state.G)
    post = prior.posterior(scaled_scatter(Y, state.X), T)
    new = posterior_sweep(
        ChainState(state.K, state.G), "cl", post, prior, GraphPrior(hyper.edge_probability), rng, counters
    )
    return replace(state, K=new.K, G=new.G)


# -- fitting ---------------------------------------------------------------


def initial_state(Y: np.ndarray, fixed_vol: bool = False, window: int = 10) -> SVState:
    """Moment-based start: diagonal ``K`` from marginal variances, ``X`` from smoothed scaled squares."""
    T, p = Y.shape
    var = np.maximum(np.mean(Y**2, axis=0), 1e-12)
    K = np.diag(1.0 / var)
    if fixed_vol:
        X = np.zeros(T)
    else:
        r = np.sum(Y**2 / var, axis=1) / p
        kernel = np.ones(window) / window
        smooth = np.convolve(np.pad(r, (window // 2, window - 1 - window // 2), mode="edge"), kernel, "valid")
        X = np.log(np.maximum(smooth, 1e-3))
    return SVState(X, 0.9, 10.0, K, Graph.empty(p))


@dataclass
class SVFit:
    states: list  # retained (thinned) SVState draws
    x_mean: np.ndarray
    edge_probs: np.ndarray
    K_mean: np.ndarray
    step: float
    x_acceptance: float
    counters: Counter
    final: SVState


def sv_sweep(state, Y, hyper, step, rng, fixed_vol=False, stats=None, counters=None) -> SVState:
    """X, then phi, then tau, then (K, G). With ``fixed_vol`` only (K, G) moves."""
    if not fixed_vol:
        state = update_X(state, Y, hyper, step, rng, stats)
        state = update_phi(state, hyper, rng)
        state = update_tau(state, hyper, rng)
    return update_K_G(state, Y, hyper, rng, counters)


def fit_sv(
    Y,
    hyper: SVHyper,
    iters: int,
    burnin: int,
    rng: np.random.Generator,
    fixed_vol: bool = False,
    init: SVState | None = None,
    step: float = 0.5,
    adapt_every: int = 25,
    max_states: int = 1000,
) -> SVFit:
    """Run the sampler; the X step size is tuned towards 35% acceptance during burn-in only."""
    Y = Y.Y if isinstance(Y, ReturnsSeries) else np.asarray(Y, dtype=float)
    if iters <= burnin:
        raise ValueError(f"iters ({iters}) must exceed burnin ({burnin})")
    T, p = Y.shape
    if T < 2:
        raise ValueError(f"need at least 2 observations to fit, got {T}")
    state = initial_state(Y, fixed_vol) if init is None else init.copy()
    if fixed_vol:
        state.X = np.zeros(T)
    kept = iters - burnin
    thin = max(1, math.ceil(kept / max_states))
    stats: Counter = Counter()
    counters: Counter = Counter()
    batch = Counter()
    states, x_sum, e_sum, k_sum = [], np.zeros(T), np.zeros((p, p)), np.zeros((p, p))
    for it in range(iters):
        state = sv_sweep(state, Y, hyper, step, rng, fixed_vol, batch, counters)
        if it < burnin and not fixed_vol and (it + 1) % adapt_every == 0:
            rate = batch["x_accepted"] / max(batch["x_proposed"], 1)
            step *= math.exp(2.0 * (rate - TARGET_ACCEPT))
            batch.clear()
        if it >= burnin:
            if it == burnin:
                batch.clear()
            x_sum += state.X
            e_sum += state.G.to_array()
            k_sum += state.K
            if (it - burnin) % thin == 0:
                states.append(state.copy())
    stats.update(batch)
    acc = stats["x_accepted"] / stats["x_proposed"] if stats["x_proposed"] else float("nan")
    probs = e_sum / kept
    np.fill_diagonal(probs, 1.0)
    return SVFit(states, x_sum / kept, probs, k_sum / kept, step, acc, counters, state)


# -- prediction ------------------------------------------------------------


def posterior_predictive(
    states, hyper: SVHyper, m: int, rng: np.random.Generator, fixed_vol: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """``m`` draws of ``Y_{T+1}`` (rows) and the matching ``X_{T+1}`` draws.

    Draw ``k`` uses posterior state ``k mod len(states)``.
    """
    if not states:
        raise ValueError("need at least one posterior state")
    p = states[0].K.shape[0]
    Ys = np.empty((m, p))
    Xs = np.empty(m)
    for s, st in enumerate(states):
        rows = np.arange(s, m, len(states))
        if not len(rows):
            break
        if fixed_vol:
            x = np.zeros(len(rows))
        else:
            sd = 0.0 if math.isinf(st.tau) else 1.0 / math.sqrt(st.tau)
            x = st.phi * st.X[-1] + sd * rng.standard_normal(len(rows))
        phi = np.linalg.cholesky(st.K).T  # K = phi' phi
        z = rng.standard_normal((p, len(rows)))
        Ys[rows] = (np.linalg.solve(phi, z) * np.exp(0.5 * x)).T
        Xs[rows] = x
    return Ys, Xs


@dataclass
class DayForecast:
    index: int
    label: object
    draws: np.ndarray
    x_mean: float


def forecast_day(
    returns: ReturnsSeries,
    d: int,
    hyper: SVHyper,
    iters: int,
    burnin: int,
    draws: int,
    seed: int,
    fixed_vol: bool = False,
    init: SVState | None = None,
) -> tuple[DayForecast, SVState]:
    """Fit on rows ``0..d-1`` and forecast row ``d``. The stream is seeded with ``seed + d``."""
    rng = np.random.default_rng(seed + d)
    Y = returns.Y[:d]
    if init is not None and len(init.X) < d:
        init = init.copy()
        init.X = np.concatenate([init.X, np.full(d - len(init.X), init.X[-1] if len(init.X) else 0.0)])
    fit = fit_sv(Y, hyper, iters, burnin, rng, fixed_vol, init)
    Yd, Xd = posterior_predictive(fit.states, hyper, draws, rng, fixed_vol)
    label = returns.dates[d] if d < returns.T else d
    return DayForecast(d, label, Yd, float(Xd.mean())), fit.final


def _forecast_job(args):
    return forecast_day(*args)[0]


def rolling_forecast(
    returns: ReturnsSeries,
    hyper: SVHyper,
    start: int,
    end: int,
    iters: int,
    burnin: int,
    seed: int,
    draws: int = 500,
    fixed_vol: bool = False,
    warm_start: bool = False,
    jobs: int = 1,
) -> list[DayForecast]:
    """One-step-ahead forecasts for rows ``start..end-1``, each fitted on all earlier rows.

    Days are independent fits (seed ``seed + d``) and can run in parallel.
    With ``warm_start`` each day's chain starts from the previous day's final
    state, which forces serial execution.
    """
    if start < 2:
        raise ValueError("need at least two training rows (start >= 2)")
    if end > returns.T + 1 or end <= start:
        raise ValueError(f"bad forecast window [{start}, {end}) for {returns.T} rows")
    days = range(start, end)
    if warm_start:
        out, init = [], None
        for d in days:
            fc, init = forecast_day(returns, d, hyper, iters, burnin, draws, seed, fixed_vol, init)
            out.append(fc)
        return out
    args = [(returns, d, hyper, iters, burnin, draws, seed, fixed_vol) for d in days]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_forecast_job, args))
    return [_forecast_job(a) for a in args]


# -- synthetic data ----------------------------------------------------------


def simulate_sv(
    K: np.ndarray,
    X: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw ``Y_t ~ N(0, exp(X_t) K^{-1})`` for a given volatility path."""
    p = K.shape[0]
    phi = np.linalg.cholesky(K).T
    Z = np.linalg.solve(phi, rng.standard_normal((p, len(X))))
    return (Z * np.exp(0.5 * np.asarray(X))).T
