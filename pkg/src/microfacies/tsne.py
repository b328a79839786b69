"""Exact t-SNE (O(n^2) gradient) for embedding extracted features in 2-D."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import SeededRng

_EPS = 1e-12


@dataclass
class EmbeddingSet:
    coords: np.ndarray  # [n, 2]
    labels: np.ndarray | None
    kl_divergence: float
    kl_after_exaggeration: float
    config: dict = field(default_factory=dict)


def _sq_distances(x):
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def conditional_probabilities(dist, perplexity, tol=1e-5, max_iter=200):
    """Row-wise Gaussian conditionals whose entropy matches ``log(perplexity)``.

    The precision of each row is found by bisection (doubling/halving while
    no bracket exists).  Returns ``(P, entropies)``.
    """
    n = dist.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    entropies = np.zeros(n)
    for i in range(n):
        d = np.delete(dist[i], i)
        d = d - d.min()  # shift for stability; cancels in normalization
        beta, lo, hi = 1.0, -np.inf, np.inf
        for _ in range(max_iter):
            w = np.exp(-d * beta)
            s = w.sum()
            p = w / s
            h = np.log(s) + beta * np.sum(d * p)
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = beta / 2 if lo == -np.inf else (beta + lo) / 2
        P[i, np.arange(n) != i] = p
        entropies[i] = h
    return P, entropies


def _kl(P, Q):
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def _q_matrix(y):
    num = 1.0 / (1.0 + _sq_distances(y))
    np.fill_diagonal(num, 0.0)
    return num, np.maximum(num / num.sum(), _EPS)


def tsne_embed(features, perplexity=30.0, iterations=1000, seed=0, labels=None,
               learning_rate=200.0, exaggeration=12.0, exaggeration_iters=250,
               momentum=(0.5, 0.8)) -> EmbeddingSet:
    """Embed ``features [n, d]`` in 2-D.

    Early exaggeration multiplies P for the first ``exaggeration_iters``
    steps, during which momentum is ``momentum[0]``; afterwards P is exact
    and momentum is ``momentum[1]``.  Per-parameter gains follow the
    usual delta-bar-delta rule.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValueError(f"features must be [n, d] with d >= 2, got {x.shape}")
    n = x.shape[0]
    if n < 3 * perplexity:
        raise ValueError(f"need at least 3*perplexity = {3 * perplexity:g} points, got {n}")
    if np.allclose(x, x[0]):
        raise ValueError("all points are identical; embedding is undefined")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")

    cond, _ = conditional_probabilities(_sq_distances(x), perplexity)
    P = np.maximum((cond + cond.T) / (2.0 * n), _EPS)
    np.fill_diagonal(P, 0.0)

    y = SeededRng(seed, "tsne").normal((n, 2), 0.0, 1e-4).astype(np.float64)
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_exag = None
    for it in range(iterations):
        exag = exaggeration if it < exaggeration_iters else 1.0
        mom = momentum[0] if it < exaggeration_iters else momentum[1]
        num, Q = _q_matrix(y)
        pq = (exag * P - Q) * num
        grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)
        same = np.sign(grad) == np.sign(velocity)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        velocity = mom * velocity - learning_rate * gains * grad
        y = y + velocity
        y -= y.mean(axis=0)
        if it + 1 == exaggeration_iters:
            kl_exag = _kl(P, _q_matrix(y)[1])
    final = _kl(P, _q_matrix(y)[1])
    if kl_exag is None:
        kl_exag = final
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("t-SNE diverged to non-finite coordinates")
    return EmbeddingSet(y, None if labels is None else np.asarray(labels), final, kl_exag,
                        {"perplexity": perplexity, "iterations": iterations, "seed": seed,
                         "learning_rate": learning_rate, "exaggeration": exaggeration})


def nn_purity(coords, labels):
    """Fraction of points whose nearest other point shares its label."""
    d = _sq_distances(np.asarray(coords, dtype=np.float64))
    np.fill_diagonal(d, np.inf)
    labels = np.asarray(labels)
    return float(np.mean(labels[np.argmin(d, axis=1)] == labels))
