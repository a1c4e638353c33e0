"""Full-covariance Gaussian mixture EM, kept as a cost reference for the diagonal fit.

Each iteration forms a d x d covariance per component and whitens every
point with it, so its work grows as O(N K d^2) against the O(N K d) of the
diagonal variational fit.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp


def full_covariance_em(points, K: int, n_iter: int, seed: int = 0, reg: float = 1e-6):
    x = np.asarray(points, dtype=float)
    n, d = x.shape
    rng = np.random.default_rng(seed)
    means = x[rng.choice(n, size=K, replace=False)].copy()
    covs = np.tile(np.cov(x.T).reshape(d, d) + reg * np.eye(d), (K, 1, 1))
    weights = np.full(K, 1.0 / K)
    log_lik = np.empty((n, K))
    for _ in range(n_iter):
        for k in range(K):
            chol = np.linalg.cholesky(covs[k])
            inv_chol = np.linalg.inv(chol)
            # whitening by a dense triangular factor: N d^2 multiply-adds
            z = np.einsum("ij,nj->ni", inv_chol, x - means[k])
            log_det = 2.0 * np.log(np.diag(chol)).sum()
            log_lik[:, k] = -0.5 * (np.einsum("ni,ni->n", z, z) + log_det
                                    + d * math.log(2.0 * math.pi))
        log_r = np.log(weights) + log_lik
        resp = np.exp(log_r - logsumexp(log_r, axis=1, keepdims=True))
        nk = resp.sum(axis=0) + 1e-12
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        for k in range(K):
            diff = x - means[k]
            covs[k] = np.einsum("n,ni,nj->ij", resp[:, k], diff, diff) / nk[k] + reg * np.eye(d)
    return weights, means, covs
