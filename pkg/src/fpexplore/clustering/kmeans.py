"""Hard clustering baseline: Lloyd's algorithm with k-means++ seeding."""

from __future__ import annotations

import numpy as np


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    idx = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[idx]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # every point already coincides with a center; take the first unused one
            unused = np.setdiff1d(np.arange(n), idx)
            nxt = int(unused[0])
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        idx.append(nxt)
        d2 = np.minimum(d2, _sq_dists(x, x[[nxt]])[:, 0])
    return x[idx].copy()


def fit_kmeans(points, K: int, seed: int = 0, max_iter: int = 100):
    """Returns ``(centroids [K, d], labels [N])``. Ties go to the lowest centroid index."""
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("points must be a non-empty (N, d) array")
    if not 1 <= K <= len(x):
        raise ValueError(f"K={K} must lie in [1, N={len(x)}]")
    rng = np.random.default_rng(seed)
    centroids = kmeans_plusplus(x, K, rng)
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    for _ in range(max_iter):
        new = centroids.copy()
        for k in range(K):
            members = labels == k
            if members.any():
                new[k] = x[members].mean(axis=0)
        new_labels = np.argmin(_sq_dists(x, new), axis=1)
        centroids = new
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centroids, labels


def distortion(points, centroids, labels) -> float:
    x = np.asarray(points, dtype=float)
    return float(((x - centroids[labels]) ** 2).sum())


def nearest_centroid(centroids: np.ndarray, xy) -> int:
    d = ((centroids - np.asarray(xy, dtype=float)) ** 2).sum(axis=1)
    return int(np.argmin(d))


def binary_coherence(labels: np.ndarray, cluster: int) -> np.ndarray:
    """1 for members of ``cluster``, 0 elsewhere (hard-clustering coherence)."""
    return (np.asarray(labels) == cluster).astype(float)
