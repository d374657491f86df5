"""
Exact t-SNE for small feature sets (a few hundred points).

Gaussian input affinities are calibrated per point by bisection on the
precision so every conditional distribution has the requested perplexity;
the low-dimensional map uses a Student-t kernel with one degree of freedom
and is optimised by momentum gradient descent with per-coordinate gains.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cnn import Network, extract_features_array, spectrograms_to_batch
from .errors import ConfigurationError, MalformedInputError, StateError
from .signal import NormStats, Spectrogram

ENTROPY_TOL = 1e-5
MAX_BISECTION_STEPS = 50
MIN_GAIN = 0.01


@dataclass
class FeatureMatrix:
    rows: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] < 1:
            raise MalformedInputError(f"features must be an N x D matrix, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise MalformedInputError("features contain NaN or inf")
        if not self.labels:
            self.labels = [None] * len(rows)
        if len(self.labels) != len(rows):
            raise MalformedInputError("one label per feature row is required")
        self.rows = rows

    def __len__(self):
        return len(self.rows)


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 13.0
    early_exaggeration: float = 4.0
    output_dims: int = 3
    iterations: int = 1000
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8
    init_sigma: float = 1e-4
    seed: int = 7
    log_every: int = 50

    def __post_init__(self):
        if not self.perplexity > 0:
            raise ConfigurationError("perplexity must be positive")
        if not self.early_exaggeration > 0:
            raise ConfigurationError("early_exaggeration must be positive")
        if self.output_dims < 1:
            raise ConfigurationError("output_dims must be at least 1")
        if not self.iterations > self.exaggeration_iters >= 0:
            raise ConfigurationError("iterations must exceed exaggeration_iters")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")


@dataclass
class Embedding:
    coords: np.ndarray
    labels: list
    kl: float
    kl_history: list = field(default_factory=list)
    kl_after_exaggeration: Optional[float] = None

    def __len__(self):
        return len(self.coords)


def squared_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _row_entropy(d: np.ndarray, beta: float):
    """Entropy (nats) and probabilities of exp(-beta * d), normalised."""
    shifted = d - d.min()
    p = np.exp(-beta * shifted)
    z = p.sum()
    p /= z
    return math.log(z) + beta * float(np.dot(p, shifted)), p


def conditional_probabilities(features, perplexity: float):
    """Row-stochastic ``P[i, j] = p(j | i)`` and the bandwidth per row.

    Returns ``(P, betas, entropies)``, where ``beta = 1 / (2 sigma^2)`` and
    entropies are in bits (so ``2 ** H`` is the achieved perplexity).
    """
    x = features.rows if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    n = len(x)
    if n < 5:
        raise ConfigurationError(f"t-SNE needs at least 5 points, got {n}")
    if not 0 < perplexity < n:
        raise ConfigurationError(f"perplexity must lie in (0, {n}), got {perplexity}")
    d = squared_distances(x)
    target = math.log(perplexity)
    P = np.zeros((n, n))
    betas = np.empty(n)
    entropies = np.empty(n)
    unconverged = 0
    for i in range(n):
        di = np.delete(d[i], i)
        scale = np.median(di)
        log_beta = -math.log(scale) if scale > 0 else 0.0
        lo = hi = None
        best = None
        for _ in range(MAX_BISECTION_STEPS):
            h, p = _row_entropy(di, math.exp(log_beta))
            err = h - target
            if best is None or abs(err) < abs(best[0]):
                best = (err, log_beta, h, p)
            if abs(err) <= ENTROPY_TOL:
                break
            if err > 0:  # too flat: sharpen
                lo = log_beta
                log_beta = log_beta + 1.0 if hi is None else 0.5 * (log_beta + hi)
            else:
                hi = log_beta
                log_beta = log_beta - 1.0 if lo is None else 0.5 * (log_beta + lo)
        err, log_beta, h, p = best
        if abs(err) > ENTROPY_TOL:
            unconverged += 1
        P[i, np.arange(n) != i] = p
        betas[i] = math.exp(log_beta)
        entropies[i] = h / math.log(2.0)
    if unconverged:
        warnings.warn(
            f"perplexity bisection did not converge for {unconverged} of {n} points; "
            "keeping the closest bandwidth found",
            RuntimeWarning,
            stacklevel=2,
        )
    return P, betas, entropies


def conditional_affinities(features, perplexity: float = 13.0) -> np.ndarray:
    """Symmetric joint affinities ``(p(j|i) + p(i|j)) / 2N``; sums to 1."""
    P, _, _ = conditional_probabilities(features, perplexity)
    n = len(P)
    return (P + P.T) / (2.0 * n)


def student_t_affinities(y: np.ndarray):
    """``(Q, kernel)`` with ``kernel = 1 / (1 + |y_i - y_j|^2)``, zero diagonal."""
    num = 1.0 / (1.0 + squared_distances(y))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / np.maximum(Q[mask], 1e-300))))


def kl_gradient(P: np.ndarray, y: np.ndarray):
    """KL(P||Q) and its gradient ``4 sum_j (p_ij - q_ij)(y_i - y_j)/(1 + |y_i - y_j|^2)``."""
    Q, num = student_t_affinities(y)
    W = (P - Q) * num
    grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ y
    return kl_divergence(P, Q), grad, Q


def tsne(features, config: TsneConfig = TsneConfig()) -> Embedding:
    if not isinstance(features, FeatureMatrix):
        features = FeatureMatrix(features)
    P = conditional_affinities(features, config.perplexity)
    n = len(P)
    rng = np.random.default_rng(config.seed)
    y = rng.normal(0.0, config.init_sigma, size=(n, config.output_dims))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    history = []
    kl_after_ex = None

    for it in range(config.iterations):
        exaggerating = it < config.exaggeration_iters
        target = P * config.early_exaggeration if exaggerating else P
        _, grad, _ = kl_gradient(target, y)
        momentum = config.momentum if exaggerating else config.final_momentum
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, MIN_GAIN, out=gains)
        update = momentum * update - config.learning_rate * gains * grad
        y = y + update
        step = it + 1
        if step == config.exaggeration_iters or step % config.log_every == 0 or step == config.iterations:
            Q, _ = student_t_affinities(y)
            kl = kl_divergence(P, Q)
            history.append((step, kl, float(Q.sum())))
            if step == config.exaggeration_iters:
                kl_after_ex = kl
    y = y - y.mean(axis=0)
    Q, _ = student_t_affinities(y)
    return Embedding(y, list(features.labels), kl_divergence(P, Q), history, kl_after_ex)


def extract_features(net: Network, specs: Sequence[Spectrogram], stats: Optional[NormStats] = None) -> FeatureMatrix:
    """Pre-FC features (flattened final 2x2 maps) for each spectrogram."""
    if not net.trained:
        raise StateError("feature extraction needs a trained network")
    if stats is None:
        stats = net.norm_stats
    feats = extract_features_array(net, spectrograms_to_batch(specs, stats))
    return FeatureMatrix(feats, [s.label for s in specs])


def raw_features(specs: Sequence[Spectrogram], stats: Optional[NormStats] = None) -> FeatureMatrix:
    """Flattened (optionally normalized) spectrograms, for comparison runs."""
    arr = spectrograms_to_batch(specs, stats).reshape(len(specs), -1)
    return FeatureMatrix(arr, [s.label for s in specs])
