import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ggmvol.graph import Graph, Permutation, edge_index
from ggmvol.linalg import (
    CholeskyFactor,
    NotPositiveDefiniteError,
    cholesky,
    complete_phi,
    permute,
    read_matrix_csv,
    sample_wishart,
    write_matrix_csv,
)


def test_cholesky_identity():
    f = cholesky(np.eye(3))
    assert np.array_equal(f.phi, np.eye(3))
    assert f.fill == Graph.empty(3)


def test_cholesky_hand_example():
    f = cholesky(np.array([[4.0, 2.0], [2.0, 5.0]]))
    np.testing.assert_allclose(f.phi, [[2.0, 1.0], [0.0, 2.0]])
    np.testing.assert_allclose(f.to_matrix(), [[4.0, 2.0], [2.0, 5.0]])


def test_cholesky_indefinite_raises():
    with pytest.raises(NotPositiveDefiniteError):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_cholesky_reconstructs_well_conditioned_matrices():
    rng = np.random.default_rng(0)
    for p in (2, 5, 9):
        A = rng.standard_normal((p, p))
        K = A @ A.T + p * np.eye(p)
        f = cholesky(K)
        assert np.max(np.abs(f.to_matrix() - K)) <= 1e-12 * np.max(np.abs(K)) * p


def test_complete_phi_hand_example():
    G = Graph.from_edges(3, [(0, 1), (0, 2)])
    phi = np.array([[1.0, 1.0, 2.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    out = complete_phi(CholeskyFactor(phi, G), G)
    assert out.phi[1, 2] == -2.0
    assert out.to_matrix()[1, 2] == 0.0


def test_complete_phi_complete_graph_is_identity_map():
    rng = np.random.default_rng(1)
    phi = np.triu(rng.standard_normal((4, 4))) + 3 * np.eye(4)
    out = complete_phi(CholeskyFactor(phi, Graph.complete(4)), Graph.complete(4))
    assert np.array_equal(out.phi, phi)


def test_complete_phi_empty_graph_is_diagonal():
    rng = np.random.default_rng(2)
    phi = np.triu(rng.standard_normal((4, 4))) + 3 * np.eye(4)
    out = complete_phi(CholeskyFactor(phi, Graph.empty(4)), Graph.empty(4))
    assert np.array_equal(out.phi, np.diag(np.diag(phi)))
    K = out.to_matrix()
    assert np.array_equal(K, np.diag(np.diag(K)))


def test_complete_phi_zero_diagonal_raises():
    G = Graph.empty(2)
    with pytest.raises(ValueError):
        complete_phi(CholeskyFactor(np.zeros((2, 2)), G), G)


@st.composite
def factor_cases(draw):
    p = draw(st.integers(2, 8))
    pairs = [(i, j) for i in range(p) for j in range(i + 1, p)]
    keep = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    G = Graph.from_edges(p, [e for e, k in zip(pairs, keep) if k])
    seed = draw(st.integers(0, 2**32 - 1))
    return G, seed


@settings(max_examples=150, deadline=None)
@given(factor_cases())
def test_complete_phi_zero_residual(case):
    G, seed = case
    rng = np.random.default_rng(seed)
    p = G.p
    phi = np.zeros((p, p))
    phi[np.diag_indices(p)] = rng.uniform(0.3, 3.0, p)
    ii, jj = edge_index(G)
    phi[ii, jj] = rng.standard_normal(len(ii))
    K = complete_phi(CholeskyFactor(phi, G), G).to_matrix()
    off = ~(G.to_array() | np.eye(p, dtype=bool))
    scale = np.max(np.sum(np.abs(K), axis=1))
    assert np.max(np.abs(K[off]), initial=0.0) <= 1e-10 * scale


def test_permute_examples():
    M = np.diag([1.0, 2.0, 3.0])
    assert np.array_equal(permute(M, Permutation.identity(3)), M)
    assert np.array_equal(permute(M, Permutation([1, 0, 2])), np.diag([2.0, 1.0, 3.0]))


@settings(max_examples=50, deadline=None)
@given(st.permutations(list(range(6))), st.integers(0, 1000))
def test_permute_roundtrip_exact(order, seed):
    M = np.random.default_rng(seed).standard_normal((6, 6))
    perm = Permutation(order)
    assert np.array_equal(permute(permute(M, perm), perm.inverse()), M)


def test_matrix_csv_roundtrip(tmp_path):
    M = np.random.default_rng(3).standard_normal((4, 4))
    write_matrix_csv(M, tmp_path / "m.csv")
    assert np.array_equal(read_matrix_csv(tmp_path / "m.csv"), M)


def test_wishart_scalar_mean_and_ks():
    rng = np.random.default_rng(4)
    draws = np.array([sample_wishart(3.0, np.eye(1), rng)[0, 0] for _ in range(10000)])
    assert abs(draws.mean() - 3.0) < 4 * draws.std() / 100
    # W(delta, d) on 1x1 is Gamma(delta/2, rate d/2), i.e. chi-square with delta df when d = 1
    assert stats.kstest(draws, stats.gamma(a=1.5, scale=2.0).cdf).pvalue > 0.01


def test_wishart_matrix_mean_and_support():
    rng = np.random.default_rng(5)
    D = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.3], [0.0, 0.3, 1.5]])
    delta = 4.0
    draws = np.array([sample_wishart(delta, D, rng) for _ in range(20000)])
    assert all(np.all(np.linalg.eigvalsh(W) > 0) for W in draws[:500])
    mean = draws.mean(axis=0)
    se = draws.std(axis=0) / np.sqrt(len(draws))
    target = (delta + 3 - 1) * np.linalg.inv(D)
    assert np.all(np.abs(mean - target) < 4 * se)


def test_wishart_rejects_bad_inputs():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sample_wishart(0.0, np.eye(2), rng)
    with pytest.raises(NotPositiveDefiniteError):
        sample_wishart(3.0, -np.eye(2), rng)
