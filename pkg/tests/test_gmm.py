from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biaslens import gmm
from biaslens.errors import DimensionMismatch, SingleCluster, TooFewPoints
from oracles import silhouette_bruteforce


def blobs(centers, n_each, sigma, seed):
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    X = np.vstack([c + sigma * rng.standard_normal((n_each, centers.shape[1])) for c in centers])
    y = np.repeat(np.arange(len(centers)), n_each)
    return X, y


def test_k1_closed_form():
    X = np.random.default_rng(0).standard_normal((200, 3)) @ np.array([[2, 0, 0], [0.5, 1, 0], [0, 0.3, 0.2]])
    m = gmm.fit_gmm(X, 1, restarts=2, seed=0)
    np.testing.assert_allclose(m.weights, [1.0])
    np.testing.assert_allclose(m.means[0], X.mean(axis=0), atol=1e-12)
    mle = np.cov(X.T, bias=True) + 1e-6 * np.eye(3)
    np.testing.assert_allclose(m.covariances[0], mle, atol=1e-10)


def test_two_gaussians_recovered():
    X, _ = blobs([[0, 0], [10, 10]], 500, 1.0, seed=1)
    m = gmm.fit_gmm(X, 2, restarts=3, seed=0)
    order = np.argsort(m.means[:, 0])
    np.testing.assert_allclose(m.means[order], [[0, 0], [10, 10]], atol=0.2)
    np.testing.assert_allclose(m.weights, [0.5, 0.5], atol=0.05)


def test_too_few_points_boundary():
    k, d = 3, 2
    X = np.random.default_rng(0).standard_normal((k * (d + 1) - 1, d))
    with pytest.raises(TooFewPoints):
        gmm.fit_gmm(X, k)
    gmm.fit_gmm(np.vstack([X, [[0.1, 0.2]]]), k, restarts=1)


def test_bic_examples():
    m = gmm.GmmModel(np.array([1.0]), np.zeros((1, 2)), np.eye(2)[None], -100.0, 1, True)
    assert gmm.bic(m, 100) == pytest.approx(5 * math.log(100) + 200, abs=1e-3)
    assert gmm.bic(m, 100) == pytest.approx(223.0259, abs=1e-3)
    m2 = gmm.GmmModel(m.weights, m.means, m.covariances, -50.0, 1, True)
    assert gmm.bic(m2, 100) < gmm.bic(m, 100)
    assert gmm.n_parameters(2, 3) == 19


def _enumerate_parameters(k, d):
    free = k - 1  # weights on the simplex
    free += sum(1 for _ in range(k) for _ in range(d))
    free += sum(1 for _ in range(k) for i in range(d) for j in range(d) if i <= j)
    return free


def test_parameter_count_enumeration():
    for k in range(1, 21):
        for d in (1, 2, 3, 7, 16, 64, 128):
            assert gmm.n_parameters(k, d) == _enumerate_parameters(k, d)


def test_assign_examples():
    X, _ = blobs([[0, 0], [10, 10]], 200, 1.0, seed=2)
    m = gmm.fit_gmm(X, 2, restarts=2, seed=0)
    j = int(np.argmin(np.linalg.norm(m.means - [10, 10], axis=1)))
    labels, post = gmm.assign(m, m.means[j])
    assert labels[0] == j and post[0, j] > 0.99

    one = gmm.fit_gmm(X, 1, restarts=1)
    labels, post = gmm.assign(one, X)
    assert np.all(labels == 0) and np.allclose(post, 1.0)

    sym = gmm.GmmModel(np.array([0.5, 0.5]), np.array([[-1.0, 0.0], [1.0, 0.0]]),
                       np.stack([np.eye(2), np.eye(2)]), 0.0, 0, True)
    labels, post = gmm.assign(sym, [[0.0, 0.0]])
    assert labels[0] == 0 and post[0, 0] == post[0, 1]
    with pytest.raises(DimensionMismatch):
        gmm.assign(sym, np.zeros((1, 3)))


def test_model_invariants_and_monotone_em():
    X, _ = blobs([[0, 0, 0], [4, 0, 0], [0, 4, 1]], 150, 1.0, seed=3)
    for seed in range(5):
        m = gmm.fit_gmm(X, 4, restarts=2, seed=seed)
        assert m.weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(m.weights > 0)
        for c in m.covariances:
            np.testing.assert_allclose(c, c.T, atol=1e-9)
            assert np.linalg.eigvalsh(c).min() >= 1e-6 * (1 - 1e-6)
        h = np.array(m.ll_history)
        assert np.all(np.diff(h) >= -1e-8 * np.maximum(1.0, np.abs(h[:-1])))


def test_deterministic():
    X, _ = blobs([[0, 0], [5, 5]], 100, 1.0, seed=4)
    a = gmm.fit_gmm(X, 3, restarts=3, seed=7)
    b = gmm.fit_gmm(X, 3, restarts=3, seed=7)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.covariances, b.covariances)
    assert a.log_likelihood == b.log_likelihood


def test_loglik_matches_scipy_density():
    from scipy.stats import multivariate_normal

    X, _ = blobs([[0, 0], [3, 1]], 80, 1.0, seed=5)
    m = gmm.fit_gmm(X, 2, restarts=1, seed=0)
    dens = sum(w * multivariate_normal(mu, c).pdf(X) for w, mu, c in zip(m.weights, m.means, m.covariances))
    # converged runs report the log-likelihood of the returned parameters
    assert m.converged
    assert np.log(dens).sum() == pytest.approx(m.log_likelihood, rel=1e-6)


# -- silhouette ------------------------------------------------------------

def test_silhouette_hand_example():
    X = np.array([[0.0], [1.0], [5.0], [6.0]])
    assert gmm.silhouette(X, [0, 0, 1, 1]) == pytest.approx(0.798, abs=1e-3)


def test_silhouette_limit_and_single_cluster():
    X = np.r_[np.random.default_rng(0).standard_normal((20, 2)), 1000 + np.random.default_rng(1).standard_normal((20, 2))]
    assert gmm.silhouette(X, [0] * 20 + [1] * 20) >= 0.99
    with pytest.raises(SingleCluster):
        gmm.silhouette(X, [0] * 40)


def test_silhouette_random_labels_near_zero():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((300, 2))
        assert abs(gmm.silhouette(X, rng.integers(0, 3, 300))) < 0.1


def test_silhouette_matches_sklearn_and_bruteforce():
    from sklearn.metrics import silhouette_score

    rng = np.random.default_rng(11)
    X = rng.standard_normal((60, 3))
    labels = rng.integers(0, 4, 60)
    ours = gmm.silhouette(X, labels)
    assert ours == pytest.approx(silhouette_score(X, labels), abs=1e-12)
    assert ours == pytest.approx(silhouette_bruteforce(X, labels), abs=1e-12)


def test_silhouette_singleton_scores_zero():
    X = np.array([[0.0], [1.0], [10.0]])
    assert gmm.silhouette(X, [0, 0, 1]) == pytest.approx(silhouette_bruteforce(X, [0, 0, 1]), abs=1e-12)


def test_silhouette_subsample_is_stratified_and_seeded():
    X, y = blobs([[0, 0], [6, 0]], 300, 1.0, seed=6)
    full = gmm.silhouette(X, y)
    sub = gmm.silhouette(X, y, max_points=100, seed=3)
    assert sub == gmm.silhouette(X, y, max_points=100, seed=3)
    assert abs(sub - full) < 0.05


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5), st.integers(8, 40))
def test_silhouette_property_bruteforce(seed, k, n):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    labels = np.r_[np.arange(k), rng.integers(0, k, n - k)]
    assert gmm.silhouette(X, labels) == pytest.approx(silhouette_bruteforce(X, labels), abs=1e-12)


# -- selection -------------------------------------------------------------

def _cand(k, b, s):
    return gmm.Candidate(k, b, s)


def test_rank_sum_dominance_and_tie_rule():
    _, chosen = gmm.rank_candidates([_cand(2, 10.0, 0.2), _cand(3, 5.0, 0.9), _cand(4, 7.0, 0.5)])
    assert chosen == 3
    # k=2: bic rank 2, sil rank 1; k=3: bic rank 1, sil rank 2 -> tie, smaller k wins
    ranked, chosen = gmm.rank_candidates([_cand(2, 10.0, 0.9), _cand(3, 5.0, 0.2)])
    assert chosen == 2
    assert [(c.bic_rank, c.sil_rank) for c in ranked] == [(2, 1), (1, 2)]


def test_failed_candidate_flagged():
    ranked, chosen = gmm.rank_candidates([_cand(2, 10.0, 0.5), gmm.Candidate(3, None, None, error="TooFewPoints")])
    assert chosen == 2
    assert ranked[1].error and ranked[1].bic_rank is None


def test_select_k_planted_three():
    rng = np.random.default_rng(0)
    centers = rng.standard_normal((3, 5)) * 10
    X = np.vstack([c + rng.standard_normal((300, 5)) for c in centers])
    res = gmm.select_k(X, 2, 5, restarts=2, seed=0)
    assert res.chosen_k == 3
    assert {c.k for c in res.candidates} == {2, 3, 4, 5}


def test_select_k_threads_identical():
    X, _ = blobs([[0, 0], [8, 0], [0, 8]], 80, 1.0, seed=9)
    a = gmm.select_k(X, 2, 4, restarts=2, seed=1, threads=1)
    b = gmm.select_k(X, 2, 4, restarts=2, seed=1, threads=3)
    assert a.chosen_k == b.chosen_k
    for ca, cb in zip(a.candidates, b.candidates):
        assert ca.bic == cb.bic and ca.silhouette == cb.silhouette


def test_select_k_rejects_k1():
    with pytest.raises(SingleCluster):
        gmm.select_k(np.zeros((10, 2)), 1, 1)


def test_model_json_round_trip():
    X, _ = blobs([[0, 0], [5, 5]], 50, 1.0, seed=4)
    m = gmm.fit_gmm(X, 2, restarts=1)
    back = gmm.GmmModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.covariances, m.covariances)
