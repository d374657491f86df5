import math

import numpy as np
import pytest

from strain_sense.cnn import init_network
from strain_sense.errors import ConfigurationError, MalformedInputError, StateError
from strain_sense.signal import NormStats, Spectrogram
from strain_sense.tsne import (
    FeatureMatrix,
    TsneConfig,
    conditional_affinities,
    conditional_probabilities,
    extract_features,
    kl_divergence,
    kl_gradient,
    student_t_affinities,
    tsne,
)


def clusters(rng, k, per, dim=5, spread=0.3, sep=10.0):
    centers = rng.normal(0, sep, size=(k, dim))
    x = np.concatenate([c + rng.normal(0, spread, size=(per, dim)) for c in centers])
    return x, [i for i in range(k) for _ in range(per)]


def naive_conditional(x, betas):
    """p(j|i) from explicit per-pair loops using the given precisions."""
    n = len(x)
    P = np.zeros((n, n))
    for i in range(n):
        z = 0.0
        for j in range(n):
            if j != i:
                z += math.exp(-betas[i] * float(np.sum((x[i] - x[j]) ** 2)))
        for j in range(n):
            if j != i:
                P[i, j] = math.exp(-betas[i] * float(np.sum((x[i] - x[j]) ** 2))) / z
    return P


def naive_gradient(P, y):
    n = len(y)
    zsum = sum(1.0 / (1.0 + np.sum((y[k] - y[l]) ** 2)) for k in range(n) for l in range(n) if k != l)
    g = np.zeros_like(y)
    for i in range(n):
        for j in range(n):
            if i != j:
                kern = 1.0 / (1.0 + np.sum((y[i] - y[j]) ** 2))
                g[i] += 4.0 * (P[i, j] - kern / zsum) * (y[i] - y[j]) * kern
    return g


def test_perplexity_calibration(rng):
    x = rng.normal(size=(60, 6))
    P, _, h = conditional_probabilities(x, 13.0)
    assert np.max(np.abs(2.0 ** h - 13.0)) <= 1e-3
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.diag(P) == 0)


def test_joint_affinities_symmetric(rng):
    P = conditional_affinities(rng.normal(size=(30, 4)), 8.0)
    np.testing.assert_allclose(P, P.T, atol=1e-15)
    assert P.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(P >= 0)


def test_conditional_matches_naive_oracle(rng):
    x = rng.normal(size=(10, 3))
    P, betas, _ = conditional_probabilities(x, 4.0)
    np.testing.assert_allclose(P, naive_conditional(x, betas), atol=1e-8)


def test_translation_invariance(rng):
    x = rng.normal(size=(25, 4))
    a = conditional_affinities(x, 6.0)
    b = conditional_affinities(x + np.array([3.0, -7.0, 100.0, 0.5]), 6.0)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_gradient_matches_naive_oracle(rng):
    P = conditional_affinities(rng.normal(size=(10, 4)), 4.0)
    y = rng.normal(size=(10, 3))
    _, g, Q = kl_gradient(P, y)
    np.testing.assert_allclose(g, naive_gradient(P, y), atol=1e-8)
    assert Q.sum() == pytest.approx(1.0, abs=1e-12)


def test_gradient_finite_difference(rng):
    P = conditional_affinities(rng.normal(size=(8, 3)), 3.0)
    y = rng.normal(size=(8, 2))
    _, g, _ = kl_gradient(P, y)
    h = 1e-6
    num = np.zeros_like(y)
    for idx in np.ndindex(y.shape):
        yp, ym = y.copy(), y.copy()
        yp[idx] += h
        ym[idx] -= h
        num[idx] = (kl_divergence(P, student_t_affinities(yp)[0]) - kl_divergence(P, student_t_affinities(ym)[0])) / (2 * h)
    np.testing.assert_allclose(g, num, atol=1e-7)


def test_kl_nonnegative_and_zero_for_equal(rng):
    P = conditional_affinities(rng.normal(size=(12, 3)), 4.0)
    Q, _ = student_t_affinities(rng.normal(size=(12, 3)))
    assert kl_divergence(P, Q) >= 0
    assert kl_divergence(P, P) == pytest.approx(0.0, abs=1e-15)


def test_two_clusters_separate(rng):
    x, labels = clusters(rng, 2, 10)
    emb = tsne(FeatureMatrix(x, labels), TsneConfig(perplexity=5, iterations=400, exaggeration_iters=100, seed=1))
    y = emb.coords
    a, b = y[:10], y[10:]
    d_ab = np.linalg.norm(a.mean(0) - b.mean(0))
    assert d_ab > 3 * max(np.linalg.norm(a - a.mean(0), axis=1).mean(), np.linalg.norm(b - b.mean(0), axis=1).mean())
    assert emb.coords.shape == (20, 3)
    assert emb.labels == labels


def test_tsne_deterministic(rng):
    x, _ = clusters(rng, 2, 8)
    cfg = TsneConfig(perplexity=4, iterations=120, exaggeration_iters=40, seed=3)
    a, b = tsne(x, cfg), tsne(x, cfg)
    assert np.array_equal(a.coords, b.coords) and a.kl == b.kl
    for _, _, qsum in a.kl_history:
        assert qsum == pytest.approx(1.0, abs=1e-9)


def test_tsne_argument_errors(rng):
    with pytest.raises(ConfigurationError):
        conditional_probabilities(rng.normal(size=(10, 2)), 10.0)
    with pytest.raises(ConfigurationError):
        conditional_probabilities(rng.normal(size=(4, 2)), 2.0)
    with pytest.raises(ConfigurationError):
        TsneConfig(iterations=100, exaggeration_iters=100)
    with pytest.raises(MalformedInputError):
        FeatureMatrix(np.array([[1.0, np.nan]]))


def test_extract_features_shape(rng):
    net = init_network(4, 8, seed=0)
    specs = [Spectrogram(rng.uniform(0, 5, (10, 5)), label="a") for _ in range(7)]
    with pytest.raises(StateError):
        extract_features(net, specs, NormStats(0, 5))
    net.trained = True
    fm = extract_features(net, specs, NormStats(0, 5))
    assert fm.rows.shape == (7, net.feature_dim) == (7, net.params["fc.w"].shape[0])
    assert fm.labels == ["a"] * 7
