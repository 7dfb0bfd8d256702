"""Seeded K-means with k-means++ initialization.

Used both to seed the EM fit of the Gaussian mixture and to cluster
network embeddings at inference time.
"""

from __future__ import annotations

import numpy as np


def kmeans_plus_plus(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Pick k seed points from data (M, D) by the k-means++ rule."""
    m = data.shape[0]
    centers = np.empty((k, data.shape[1]))
    idx = rng.integers(m)
    centers[0] = data[idx]
    d2 = np.sum((data - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(m)
        else:
            idx = rng.choice(m, p=d2 / total)
        centers[j] = data[idx]
        d2 = np.minimum(d2, np.sum((data - centers[j]) ** 2, axis=1))
    return centers


def _lloyd(data, centers, max_iter):
    for _ in range(max_iter):
        d2 = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new_centers = centers.copy()
        for j in range(centers.shape[0]):
            pts = data[labels == j]
            if len(pts):
                new_centers[j] = pts.mean(axis=0)
        if np.allclose(new_centers, centers):
            centers = new_centers
            break
        centers = new_centers
    d2 = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    inertia = d2[np.arange(len(data)), labels].sum()
    return labels, centers, inertia


def kmeans(data, k, seed=0, n_restarts=10, max_iter=100):
    """Best-of-n-restarts Lloyd iterations; returns (labels, centers, inertia)."""
    data = np.asarray(data, dtype=np.float64)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_restarts):
        centers = kmeans_plus_plus(data, k, rng)
        labels, centers, inertia = _lloyd(data, centers, max_iter)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    return best
