"""Seeded k-means (k-means++ init) and silhouette scoring on numpy arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia_trace: list[float]     # objective after each assignment step


def _kmeans_pp_init(x: np.ndarray, k: int, rng) -> np.ndarray:
    centroids = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min(cdist(x, np.asarray(centroids), "sqeuclidean"), axis=1)
        total = d2.sum()
        if total == 0:
            centroids.append(x[rng.integers(len(x))])
            continue
        centroids.append(x[rng.choice(len(x), p=d2 / total)])
    return np.asarray(centroids, dtype=np.float64)


def kmeans(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-10) -> KMeansResult:
    """Single seeded run; empty clusters are reseeded to the farthest point."""
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(x, k, rng)
    labels = np.zeros(len(x), dtype=int)
    trace = []
    for _ in range(max_iter):
        d2 = cdist(x, centroids, "sqeuclidean")
        labels = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(len(x)), labels].sum()))
        new_centroids = centroids.copy()
        for j in range(k):
            members = x[labels == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
            else:
                new_centroids[j] = x[np.argmax(d2.min(axis=1))]
        shift = np.abs(new_centroids - centroids).max()
        centroids = new_centroids
        if shift <= tol:
            break
    d2 = cdist(x, centroids, "sqeuclidean")
    labels = np.argmin(d2, axis=1)
    trace.append(float(d2[np.arange(len(x)), labels].sum()))
    return KMeansResult(centroids=centroids, labels=labels, inertia_trace=trace)


def silhouette_score(x: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette over all points; singleton clusters score 0."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    ids = np.unique(labels)
    if len(ids) < 2:
        return float("nan")
    dist = cdist(x, x)
    scores = np.zeros(len(x))
    for i in range(len(x)):
        same = labels == labels[i]
        n_same = same.sum()
        if n_same <= 1:
            scores[i] = 0.0
            continue
        a = dist[i, same].sum() / (n_same - 1)
        b = min(dist[i, labels == c].mean() for c in ids if c != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())
