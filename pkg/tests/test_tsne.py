import math

import numpy as np
import pytest

from benchgap.errors import TsneError
from benchgap.tsne import (
    Projection2D,
    TsneParams,
    bh_kl_and_grad,
    joint_affinities,
    kl_and_grad,
    load_projection,
    pca_reduce,
    project,
    save_projection,
    sparse_joint_affinities,
    trustworthiness,
)

FAST = TsneParams(perplexity=10, iterations=250, early_exaggeration_iters=80, pca_dim=None)


def oracle_trustworthiness(X, Y, m):
    """Rank-based formula computed with plain loops."""
    n = len(X)
    def dist(a, b):
        return math.dist(a, b)

    penalty = 0
    for i in range(n):
        by_x = sorted((j for j in range(n) if j != i), key=lambda j: (dist(X[i], X[j]), j))
        rank = {j: r + 1 for r, j in enumerate(by_x)}
        by_y = sorted((j for j in range(n) if j != i), key=lambda j: (dist(Y[i], Y[j]), j))
        for j in by_y[:m]:
            if rank[j] > m:
                penalty += rank[j] - m
    return 1.0 - 2.0 * penalty / (n * m * (2 * n - 3 * m - 1))


# ---------------------------------------------------------------------------
# Affinities


def test_joint_affinities_validity():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 6))
    P = joint_affinities(X, 8.0)
    assert np.all(P >= 0)
    assert np.allclose(P, P.T)
    assert abs(P.sum() - 1.0) < 1e-9
    assert np.all(np.diag(P) == 0)


def test_perplexity_calibration():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 5))
    target = 12.0
    n = X.shape[0]
    d2 = ((X[:, None] - X[None]) ** 2).sum(-1)
    from benchgap.tsne import _search_bandwidth

    for i in range(n):
        row = np.delete(d2[i], i)
        p, _ = _search_bandwidth(row, math.log(target))
        mask = p > 0
        entropy = -(p[mask] * np.log(p[mask])).sum()
        assert abs(math.exp(entropy) - target) < 1e-3


def test_sparse_affinities_match_dense_when_full_neighbors():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(25, 4))
    dense = joint_affinities(X, 6.0)
    rows, cols, vals = sparse_joint_affinities(X, 6.0, 24)
    sparse_dense = np.zeros_like(dense)
    sparse_dense[rows, cols] = vals
    assert np.allclose(sparse_dense, dense, atol=1e-12)


# ---------------------------------------------------------------------------
# Gradient


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 5))
    P = joint_affinities(X, 4.0)
    Y = rng.normal(size=(20, 2))
    _, grad = kl_and_grad(P, Y)
    h = 1e-6
    numeric = np.zeros_like(Y)
    for i in range(20):
        for j in range(2):
            up, down = Y.copy(), Y.copy()
            up[i, j] += h
            down[i, j] -= h
            numeric[i, j] = (kl_and_grad(P, up)[0] - kl_and_grad(P, down)[0]) / (2 * h)
    rel = np.linalg.norm(grad - numeric) / np.linalg.norm(numeric)
    assert rel < 1e-4


def test_bh_theta_zero_equals_exact():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(25, 4))
    Y = rng.normal(size=(25, 2))
    rows, cols, vals = sparse_joint_affinities(X, 6.0, 24)
    dense = np.zeros((25, 25))
    dense[rows, cols] = vals
    kl_e, grad_e = kl_and_grad(dense, Y)
    kl_b, grad_b = bh_kl_and_grad(rows, cols, vals, Y, theta=0.0)
    assert kl_b == pytest.approx(kl_e, rel=1e-10)
    assert np.allclose(grad_b, grad_e, atol=1e-10)


def test_bh_theta_half_is_a_close_approximation():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(60, 4))
    Y = rng.normal(size=(60, 2))
    rows, cols, vals = sparse_joint_affinities(X, 10.0, 30)
    _, grad_b = bh_kl_and_grad(rows, cols, vals, Y, theta=0.5)
    dense = np.zeros((60, 60))
    dense[rows, cols] = vals
    _, grad_e = kl_and_grad(dense, Y)
    # sparse attractive part differs from dense only through BH repulsion
    rel = np.linalg.norm(grad_b - grad_e) / np.linalg.norm(grad_e)
    assert rel < 0.05


# ---------------------------------------------------------------------------
# project()


def test_project_preconditions():
    rng = np.random.default_rng(6)
    with pytest.raises(TsneError, match="perplexity"):
        project(rng.normal(size=(50, 3)), TsneParams(perplexity=1), seed=0)
    with pytest.raises(TsneError, match="too small"):
        project(rng.normal(size=(10, 3)), TsneParams(perplexity=30), seed=0)
    with pytest.raises(TsneError, match="non-finite"):
        project(np.full((40, 3), np.nan), TsneParams(perplexity=5), seed=0)


def test_project_final_kl_below_initial():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(50, 8))
    proj = project(X, FAST, seed=0)
    assert proj.kl_history[-1][1] < proj.kl_history[0][1]


def test_project_is_deterministic():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(40, 6))
    a = project(X, FAST, seed=5)
    b = project(X, FAST, seed=5)
    assert np.array_equal(a.coords, b.coords)
    assert a.kl_history == b.kl_history


def test_project_handles_exact_duplicates():
    rng = np.random.default_rng(9)
    base = rng.normal(size=(20, 4))
    X = np.vstack([base, base[:15]])  # 15 exact duplicates
    proj = project(X, FAST, seed=1)
    assert np.isfinite(proj.coords).all()


def test_project_uses_bh_path_above_exact_limit(two_blobs):
    X, _ = two_blobs
    params = TsneParams(
        perplexity=12, iterations=400, early_exaggeration_iters=100, pca_dim=None, exact_limit=50
    )
    proj = project(X[:120], params, seed=0)
    assert proj.kl_history[-1][1] < proj.kl_history[0][1]


def test_project_separates_two_blobs(two_blobs):
    X, labels = two_blobs
    params = TsneParams(perplexity=30, iterations=500, early_exaggeration_iters=150, pca_dim=None)
    proj = project(X, params, seed=0)
    axis = _principal_axis(proj.coords)
    assert _best_threshold_accuracy(axis, labels) >= 0.95
    assert trustworthiness(X, proj, 15) >= 0.90


def _principal_axis(Y):
    centered = Y - Y.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[0]


def _best_threshold_accuracy(axis, labels):
    best = 0.0
    for threshold in np.quantile(axis, np.linspace(0.01, 0.99, 99)):
        pred = (axis > threshold).astype(int)
        best = max(best, (pred == labels).mean(), ((1 - pred) == labels).mean())
    return best


def test_pca_predimension_reduction_applies():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(60, 80))
    reduced = pca_reduce(X, 50)
    assert reduced.shape == (60, 50)
    params = TsneParams(perplexity=8, iterations=60, early_exaggeration_iters=20, pca_dim=50)
    proj = project(X, params, seed=0)
    assert proj.coords.shape == (60, 2)


# ---------------------------------------------------------------------------
# trustworthiness


def test_trustworthiness_identity_projection_is_one():
    rng = np.random.default_rng(11)
    plane = rng.normal(size=(40, 2))
    X = np.hstack([plane, np.zeros((40, 3))])
    proj = Projection2D(ids=[str(i) for i in range(40)], coords=plane, params=TsneParams(), seed=0)
    assert trustworthiness(X, proj, 10) == 1.0


def test_trustworthiness_matches_bruteforce_oracle():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(100, 6))
    Y = rng.normal(size=(100, 2))
    got = trustworthiness(X, Y, 10)
    want = oracle_trustworthiness(X.tolist(), Y.tolist(), 10)
    assert got == pytest.approx(want, abs=0.02)


def test_trustworthiness_bounds():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(20, 3))
    with pytest.raises(TsneError):
        trustworthiness(X, rng.normal(size=(20, 2)), 20)
    with pytest.raises(TsneError):
        trustworthiness(X, rng.normal(size=(20, 2)), 15)  # weight term goes negative


# ---------------------------------------------------------------------------
# serialization


def test_projection_round_trip(tmp_path):
    rng = np.random.default_rng(14)
    X = rng.normal(size=(35, 5))
    proj = project(X, FAST, seed=2)
    path = tmp_path / "proj.jsonl"
    save_projection(proj, path)
    loaded = load_projection(path)
    assert loaded.ids == proj.ids
    assert np.array_equal(loaded.coords, proj.coords)
    assert loaded.kl_history == proj.kl_history
    assert loaded.params == proj.params
    # digest is stable across the round trip
    assert loaded.content_digest() == proj.content_digest()
