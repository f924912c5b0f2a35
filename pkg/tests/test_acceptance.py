"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (shown in the terminal summary)
and then asserts, so a failing criterion also fails the suite. The whole
module takes roughly ten minutes on one core.
"""
import json
import math

import numpy as np
import pytest
from scipy import stats

from ggmvol.cli import main
from ggmvol.data import WANGLI6_TARGET, builtin_wangli6, edge_mse
from ggmvol.graph import Graph, edge_index, fill_in_graph
from ggmvol.gwishart import ChainState, GWishartParams, sample_gwishart
from ggmvol.linalg import CholeskyFactor, complete_phi, sample_wishart
from ggmvol.scoring import PredictiveSample, energy_score, mean_and_se, score_series
from ggmvol.search import GraphPrior, posterior_sweep, run_chain, two_node_edge_posterior
from ggmvol.stochvol import ReturnsSeries, SVHyper, fit_sv, rolling_forecast, simulate_sv

pytestmark = pytest.mark.acceptance


def _state_ok(K, G):
    off = ~(G.to_array() | np.eye(G.p, dtype=bool))
    if np.any(K[off] != 0.0) or not np.array_equal(K, K.T):
        return False
    try:
        np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return False
    return True


# 1 ---------------------------------------------------------------------------------


def test_benchmark_posterior_reproduction(tmp_path, report):
    out = tmp_path / "search"
    rc = main(["search", "--builtin", "wangli6", "--sampler", "cl", "--iters", "60000", "--burnin", "10000",
               "--seed", "1", "--out", str(out)])
    P = np.loadtxt(out / "edge_probs.csv", delimiter=",")
    mse = edge_mse(P, WANGLI6_TARGET)
    ok = rc == 0 and mse <= 0.02
    report("six-node posterior reproduction (CL, 60000/10000)", ok,
           f"MSE {mse:.5f} <= 0.02 (reference 0.0088); P[1,2]={P[0, 1]:.3f}, P[3,4]={P[2, 3]:.3f}")
    assert ok


# 2 ---------------------------------------------------------------------------------


def test_benchmark_speedup(tmp_path, report):
    out = tmp_path / "bench"
    rc = main(["benchmark", "--builtin", "wangli6", "--iters", "10000", "--burnin", "2000", "--seed", "1",
               "--out", str(out)])
    rep = json.loads((out / "benchmark.json").read_text())
    cl, wl = rep["runs"]["cl"], rep["runs"]["wl"]
    ok = (
        rc == 0
        and cl["seconds"] < wl["seconds"]
        and rep["speedup"] >= 2
        and cl["large_solves_per_sweep"] == 0
        and wl["large_solves_per_attempt"] >= 1
    )
    report("CL vs WL speedup (10000 sweeps each)", ok,
           f"CL {cl['seconds']:.1f}s, WL {wl['seconds']:.1f}s, ratio {rep['speedup']:.2f} >= 2; "
           f"large solves: CL {cl['large_solves_per_sweep']:.0f}/sweep, WL {wl['large_solves_per_attempt']:.2f}/attempt")
    assert ok


# 3 ---------------------------------------------------------------------------------


def test_two_node_analytic_oracle(report):
    U = np.array([[10.0, 3.0], [3.0, 8.0]])
    n = 10
    prior = GWishartParams(3.0, np.eye(2), Graph.empty(2))
    target = two_node_edge_posterior(U, n, 3.0, np.eye(2), 0.5)
    got = {}
    for sampler in ("cl", "wl"):
        res = run_chain(U, n, prior, GraphPrior(0.5), sampler, iters=52000, burnin=2000, seed=2)
        got[sampler] = res.edge_probs[0, 1]
    ok = all(abs(v - target) <= 0.02 for v in got.values())
    report("p = 2 analytic oracle (50000 post-burn-in sweeps)", ok,
           f"exact {target:.4f}, CL {got['cl']:.4f}, WL {got['wl']:.4f}, tolerance 0.02")
    assert ok


# 4 ---------------------------------------------------------------------------------


def test_distributional_correctness(report):
    details, ok = [], True

    # block Gibbs on a complete graph against the Wishart mean
    D = np.array([[1.5, 0.4, 0.1], [0.4, 1.0, -0.2], [0.1, -0.2, 2.0]])
    delta = 3.0
    draws = sample_gwishart(GWishartParams(delta, D, Graph.complete(3)), 10000, np.random.default_rng(3)).draws
    z = np.abs(draws.mean(0) - (delta + 2) * np.linalg.inv(D)) / (draws.std(0, ddof=1) / np.sqrt(len(draws)))
    ok &= bool(np.all(z[np.triu_indices(3)] < 3))
    details.append(f"Wishart mean max |z| {z.max():.2f} < 3")

    # p = 1 against Gamma(delta/2, rate d/2)
    d = 2.5
    x = np.array([sample_wishart(delta, np.array([[d]]), np.random.default_rng(4 + k))[0, 0] for k in range(10000)])
    pval = stats.kstest(x, stats.gamma(a=delta / 2, scale=2 / d).cdf).pvalue
    ok &= pval > 0.01
    details.append(f"p=1 KS p-value {pval:.3f} > 0.01")

    # RWMH against block Gibbs on a 3-node graph that needs completion in natural order
    G = Graph.from_edges(3, [(0, 1), (0, 2)])
    params = GWishartParams(delta, np.eye(3), G)
    gibbs = sample_gwishart(params, 41000, np.random.default_rng(5), "gibbs", burnin=1000).draws
    rw = sample_gwishart(params, 102000, np.random.default_rng(6), "rwmh", burnin=2000).draws
    batches = rw.reshape(100, -1, 3, 3).mean(1)
    se_rw = batches.std(0, ddof=1) / np.sqrt(100)
    se_g = gibbs.std(0, ddof=1) / np.sqrt(len(gibbs))
    zc = [abs(gibbs[:, i, j].mean() - rw[:, i, j].mean()) / math.hypot(se_g[i, j], se_rw[i, j])
          for i, j in [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2)]]
    ok &= max(zc) < 3
    details.append(f"RWMH vs Gibbs max |z| {max(zc):.2f} < 3")

    report("distributional correctness", bool(ok), "; ".join(details))
    assert ok


# 5 ---------------------------------------------------------------------------------


def test_structural_invariants(report):
    bad = {}
    U, n = builtin_wangli6()
    prior = GWishartParams(3.0, np.eye(6), Graph.empty(6))
    post = prior.posterior(U, n)
    for sampler in ("cl", "wl"):
        rng = np.random.default_rng(7)
        state = ChainState(np.eye(6), Graph.empty(6))
        count = 0
        for _ in range(10000):
            state = posterior_sweep(state, sampler, post, prior, GraphPrior(), rng)
            count += not _state_ok(state.K, state.G)
        bad[sampler] = count

    G = Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
    params = GWishartParams(3.0, np.eye(5), G)
    for sampler in ("gibbs", "rwmh"):
        draws = sample_gwishart(params, 10000, np.random.default_rng(8), sampler).draws
        bad[sampler] = sum(not _state_ok(K, G) for K in draws)

    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(2000):
        p = int(rng.integers(2, 12))
        G = Graph.from_adjacency(np.triu(rng.random((p, p)) < 0.4, 1))
        phi = np.zeros((p, p))
        phi[np.diag_indices(p)] = rng.uniform(0.2, 3.0, p)
        ii, jj = edge_index(G)
        phi[ii, jj] = rng.standard_normal(len(ii))
        K = complete_phi(CholeskyFactor(phi, fill_in_graph(G)), G).to_matrix()
        off = ~(G.to_array() | np.eye(p, dtype=bool))
        worst = max(worst, np.max(np.abs(K[off]), initial=0.0) / np.max(np.abs(K).sum(1)))
    ok = all(v == 0 for v in bad.values()) and worst <= 1e-10
    report("structural invariants (10^4 sweeps per sampler)", ok,
           f"invalid states {bad}; worst completion residual {worst:.1e} <= 1e-10")
    assert ok


# 6 ---------------------------------------------------------------------------------


def test_energy_score_examples(report):
    rng = np.random.default_rng(10)
    x = rng.standard_normal(3)
    degenerate = energy_score(np.tile(x, (8, 1)), x)
    one_d = energy_score(np.array([[0.0], [2.0]]), np.array([1.0]))
    two_d = energy_score(np.zeros((2, 2)), np.array([3.0, 4.0]))
    draws = rng.standard_normal((40, 3))
    base = energy_score(draws, x)
    perm_gap = max(abs(energy_score(draws[rng.permutation(40)], x) - base) for _ in range(20))
    ok = degenerate == 0.0 and abs(one_d) <= 1e-12 and abs(two_d - 5.0) <= 1e-12 and perm_gap <= 1e-12
    report("energy score", ok,
           f"degenerate {degenerate}, examples {one_d:.1e} and {two_d:.12f}, permutation gap {perm_gap:.1e}")
    assert ok


# 7 ---------------------------------------------------------------------------------


def test_stochastic_volatility_recovery(report):
    rng = np.random.default_rng(2024)
    p, T = 6, 500
    spike = slice(350, 410)
    K = np.eye(p)
    for i in range(p - 1):
        K[i, i + 1] = K[i + 1, i] = 0.45
    X = np.zeros(T)
    for t in range(1, T):
        X[t] = 0.95 * X[t - 1] + 0.15 * rng.standard_normal()
    X[spike] += 2.0
    Y = simulate_sv(K, X, rng)
    hyper = SVHyper()

    fit = fit_sv(Y, hyper, 3000, 1000, np.random.default_rng(1))
    corr = float(np.corrcoef(fit.x_mean, X)[0, 1])
    inclusion = float(np.mean([fit.edge_probs[i, i + 1] for i in range(p - 1)]))

    series = ReturnsSeries(list(range(T)), Y)
    scores = {}
    for fixed in (False, True):
        days = rolling_forecast(series, hyper, 290, 410, 400, 200, seed=7, draws=500, fixed_vol=fixed)
        scores[fixed] = score_series([PredictiveSample(d.draws, d.label) for d in days], [Y[d.index] for d in days])
    (sv_in, se_sv_in), (fv_in, se_fv_in) = mean_and_se(scores[False][60:]), mean_and_se(scores[True][60:])
    (sv_out, se_sv_out), (fv_out, se_fv_out) = mean_and_se(scores[False][:60]), mean_and_se(scores[True][:60])
    comb_out = math.hypot(se_sv_out, se_fv_out)

    ok = corr > 0.7 and inclusion > 0.8 and sv_in < fv_in and abs(sv_out - fv_out) <= comb_out
    report("stochastic-volatility recovery (p=6, T=500)", ok,
           f"corr {corr:.3f} > 0.7; true-edge inclusion {inclusion:.3f} > 0.8; "
           f"spike ES SV {sv_in:.3f} < fixed {fv_in:.3f}; "
           f"pre-spike |{sv_out:.3f} - {fv_out:.3f}| = {abs(sv_out - fv_out):.3f} <= {comb_out:.3f}")
    assert ok


# 8 ---------------------------------------------------------------------------------


def _prices_csv(path, T=45, p=3, seed=0):
    rng = np.random.default_rng(seed)
    P = 50 * np.exp(np.cumsum(0.01 * rng.standard_normal((T, p)), axis=0))
    lines = ["date," + ",".join(f"S{k}" for k in range(p))]
    lines += [f"2022-{1 + t // 28:02d}-{1 + t % 28:02d}," + ",".join(repr(float(v)) for v in P[t]) for t in range(T)]
    path.write_text("\n".join(lines) + "\n")
    return path


def _snapshot(directory):
    """Bytes of every output file; JSON wall-clock fields are dropped before comparing."""

    def strip(obj):
        if isinstance(obj, dict):
            return {k: strip(v) for k, v in obj.items() if k not in ("seconds", "speedup")}
        return obj

    snap = {}
    for f in sorted(directory.rglob("*")):
        if f.is_file():
            data = f.read_bytes()
            if f.suffix == ".json":
                data = json.dumps(strip(json.loads(data)), sort_keys=True).encode()
            snap[str(f.relative_to(directory))] = data
    return snap


def test_reproducibility(tmp_path, report):
    prices = _prices_csv(tmp_path / "prices.csv")
    graph = tmp_path / "g.txt"
    graph.write_text("4\n1 2\n2 3\n3 4\n1 4\n")

    def commands(out):
        fc = ["--returns", str(prices), "--train-end", "2022-02-11", "--forecast-end", "2022-02-14",
              "--iters", "40", "--burnin", "10", "--draws", "30", "--seed", "5"]
        return {
            "search": ["search", "--builtin", "wangli6", "--sampler", "wl", "--iters", "80", "--burnin", "20",
                       "--seed", "5", "--out", str(out / "search")],
            "benchmark": ["benchmark", "--builtin", "wangli6", "--iters", "60", "--burnin", "10", "--seed", "5",
                          "--out", str(out / "benchmark")],
            "sample": ["sample", "--graph", str(graph), "--sampler", "rwmh", "--iters", "200", "--seed", "5",
                       "--out", str(out / "sample")],
            "sv-forecast": ["sv-forecast", *fc, "--out", str(out / "sv")],
            "sv-forecast-fixed": ["sv-forecast", *fc, "--fixed-vol", "--out", str(out / "fv")],
            "score": ["score", "--pred-a", str(out / "sv"), "--pred-b", str(out / "fv"), "--returns", str(prices),
                      "--out", str(out / "score")],
        }

    runs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        codes = {name: main(argv) for name, argv in commands(out).items()}
        runs.append((codes, _snapshot(out)))
    (codes_a, snap_a), (codes_b, snap_b) = runs
    differing = sorted(k for k in set(snap_a) | set(snap_b) if snap_a.get(k) != snap_b.get(k))
    ok = all(c == 0 for c in codes_a.values()) and codes_a == codes_b and not differing and len(snap_a) > 10
    report("reproducibility under a fixed seed", ok,
           f"{len(snap_a)} output files across {len(codes_a)} runs, {len(differing)} differ {differing[:3]}")
    assert ok
