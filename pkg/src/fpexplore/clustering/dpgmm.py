"""Truncated stick-breaking DP mixture of diagonal Gaussians, fit by mean-field VB.

Generative model, per component k and axis d::

    v_k ~ Beta(1, gamma)                    (stick fractions, v_K = 1)
    lambda_kd ~ Gamma(a0, b0_d)             (precision)
    mu_kd | lambda_kd ~ N(m0_d, 1 / (beta0 * lambda_kd))
    z_n ~ Cat(pi(v)),  x_nd | z_n = k ~ N(mu_kd, 1 / lambda_kd)

The variational family factorizes as q(z) q(v) q(mu, lambda) with
Beta and Normal-Gamma factors. Every update is an exact coordinate
maximization, so the lower bound can only go up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import digamma, gammaln, logsumexp

from .kmeans import fit_kmeans

LOG_2PI = math.log(2.0 * math.pi)

ACTIVE_WEIGHT = 1e-3
VARIANCE_FLOOR = 1e-4


class EmptyInputError(ValueError):
    pass


@dataclass(frozen=True)
class Prior:
    concentration: float      # gamma
    mean: np.ndarray          # m0, [d]
    mean_precision: float     # beta0
    shape: float              # a0
    rate: np.ndarray          # b0, [d]


@dataclass(frozen=True)
class Posterior:
    """Variational parameters; enough to resume inference exactly."""
    stick_a: np.ndarray   # [K-1]
    stick_b: np.ndarray   # [K-1]
    mean: np.ndarray      # [K, d]
    beta: np.ndarray      # [K]
    shape: np.ndarray     # [K]
    rate: np.ndarray      # [K, d]


@dataclass(frozen=True)
class MixtureModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    converged: bool = True
    elbo_trace: tuple[float, ...] = ()
    n_iter: int = 0
    n_points: int = 0
    posterior: Optional[Posterior] = field(default=None, repr=False, compare=False)

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def active(self) -> np.ndarray:
        return self.weights > ACTIVE_WEIGHT

    @property
    def n_active(self) -> int:
        return int(self.active.sum())


def max_components(n: int) -> int:
    return max(1, n // 2)


def make_prior(x: np.ndarray, concentration: float = 1.0,
               mean_precision: float = 1.0) -> Prior:
    # a0 = 1 is two degrees of freedom; rate b0 = a0 * var puts E[variance] near the data variance
    var = np.maximum(x.var(axis=0), VARIANCE_FLOOR)
    return Prior(concentration, x.mean(axis=0), mean_precision, 1.0, var.copy())


# ----------------------------------------------------------------------------
# coordinate updates


def _update_params(x, resp, prior: Prior) -> Posterior:
    nk = resp.sum(axis=0)                                   # [K]
    safe = np.maximum(nk, 1e-300)[:, None]
    xbar = (resp.T @ x) / safe                              # [K, d]
    diff = x[:, None, :] - xbar[None, :, :]
    sk = np.einsum("nk,nkd->kd", resp, diff * diff) / safe  # weighted within-component variance
    beta = prior.mean_precision + nk
    mean = (prior.mean_precision * prior.mean + nk[:, None] * xbar) / beta[:, None]
    shape = prior.shape + nk / 2.0
    dev = xbar - prior.mean
    rate = prior.rate + 0.5 * (nk[:, None] * sk
                               + (prior.mean_precision * nk / beta)[:, None] * dev * dev)
    tail = np.cumsum(nk[::-1])[::-1]                        # sum_{j >= k} N_j
    stick_a = 1.0 + nk[:-1]
    stick_b = prior.concentration + tail[1:]
    return Posterior(stick_a, stick_b, mean, beta, shape, rate)


def _expected_log_weights(post: Posterior) -> np.ndarray:
    tot = digamma(post.stick_a + post.stick_b)
    e_log_v = digamma(post.stick_a) - tot
    e_log_1mv = digamma(post.stick_b) - tot
    out = np.zeros(len(post.beta))
    out[:-1] = e_log_v
    out[1:] += np.cumsum(e_log_1mv)
    return out


def _expected_log_lik(x, post: Posterior) -> np.ndarray:
    """E_q[log N(x_n | mu_k, lambda_k^-1)], shape [N, K]; costs O(N K d)."""
    e_log_lam = digamma(post.shape)[:, None] - np.log(post.rate)     # [K, d]
    e_lam = post.shape[:, None] / post.rate                          # [K, d]
    d = x.shape[1]
    const = 0.5 * e_log_lam.sum(axis=1) - 0.5 * d * LOG_2PI - 0.5 * d / post.beta
    diff = x[:, None, :] - post.mean[None, :, :]
    quad = np.einsum("nkd,kd->nk", diff * diff, e_lam)
    return const - 0.5 * quad


def _log_rho(x, post: Posterior) -> np.ndarray:
    return _expected_log_lik(x, post) + _expected_log_weights(post)


def _normalize(log_rho: np.ndarray) -> np.ndarray:
    return np.exp(log_rho - logsumexp(log_rho, axis=1, keepdims=True))


def _elbo(resp, log_rho, post: Posterior, prior: Prior) -> float:
    """Evidence lower bound at (q(z)=resp, q(v, mu, lambda)=post)."""
    # E[log p(x|z,..)] + E[log p(z|v)] - E[log q(z)]
    with np.errstate(divide="ignore", invalid="ignore"):
        ent_z = -np.sum(np.where(resp > 0, resp * np.log(resp), 0.0))
    data = float(np.sum(resp * log_rho)) + ent_z

    # E[log p(v)] - E[log q(v)]
    a, b, g = post.stick_a, post.stick_b, prior.concentration
    tot = digamma(a + b)
    e_log_v = digamma(a) - tot
    e_log_1mv = digamma(b) - tot
    log_p_v = np.sum(math.log(g) + (g - 1.0) * e_log_1mv)
    log_q_v = np.sum(gammaln(a + b) - gammaln(a) - gammaln(b)
                     + (a - 1.0) * e_log_v + (b - 1.0) * e_log_1mv)

    # E[log p(mu, lambda)] - E[log q(mu, lambda)]
    e_log_lam = digamma(post.shape)[:, None] - np.log(post.rate)
    e_lam = post.shape[:, None] / post.rate
    b0, a0, m0, r0 = prior.mean_precision, prior.shape, prior.mean, prior.rate
    log_p_ml = (0.5 * math.log(b0) - 0.5 * LOG_2PI + 0.5 * e_log_lam
                - 0.5 * b0 * (1.0 / post.beta[:, None] + e_lam * (post.mean - m0) ** 2)
                + a0 * np.log(r0) - gammaln(a0) + (a0 - 1.0) * e_log_lam - r0 * e_lam)
    ak = post.shape[:, None]
    log_q_ml = (0.5 * np.log(post.beta)[:, None] - 0.5 * LOG_2PI + 0.5 * e_log_lam - 0.5
                + ak * np.log(post.rate) - gammaln(ak) + (ak - 1.0) * e_log_lam - ak)
    return float(data + log_p_v - log_q_v + np.sum(log_p_ml) - np.sum(log_q_ml))


def _sorted_update(x, resp, prior: Prior, previous: float):
    """M-step with components reordered by decreasing expected size.

    Larger sticks first tightens the truncated stick-breaking bound; the
    reordering is kept only if the bound is not lower than without it.
    """
    order = np.argsort(-resp.sum(axis=0), kind="stable")
    candidates = [resp[:, order]] if np.any(order != np.arange(len(order))) else []
    candidates.append(resp)
    best = None
    for r in candidates:
        post = _update_params(x, r, prior)
        log_rho = _log_rho(x, post)
        bound = _elbo(r, log_rho, post, prior)
        if best is None or bound > best[2]:
            best = (post, log_rho, bound)
        if bound >= previous:
            break
    return best


def _expected_weights(post: Posterior) -> np.ndarray:
    mean_v = post.stick_a / (post.stick_a + post.stick_b)
    out = np.ones(len(post.beta))
    out[:-1] = mean_v
    out[1:] *= np.cumprod(1.0 - mean_v)
    return out / out.sum()


# ----------------------------------------------------------------------------
# initialization


def _cold_resp(x, K, seed) -> np.ndarray:
    n = len(x)
    if K == 1:
        return np.ones((n, 1))
    _, labels = fit_kmeans(x, K, seed=seed)
    resp = np.zeros((n, K))
    resp[np.arange(n), labels] = 1.0
    return resp


def _resize_posterior(post: Posterior, K: int, prior: Prior) -> Posterior:
    k_old = len(post.beta)
    if k_old == K:
        return post
    if k_old > K:
        return Posterior(post.stick_a[:K - 1], post.stick_b[:K - 1], post.mean[:K],
                         post.beta[:K], post.shape[:K], post.rate[:K])
    extra = K - k_old
    d = post.mean.shape[1]
    # new components start at the prior; the old last stick becomes a real break
    stick_a = np.concatenate([post.stick_a, np.ones(extra)])
    stick_b = np.concatenate([post.stick_b, np.full(extra, prior.concentration)])
    return Posterior(stick_a, stick_b,
                     np.vstack([post.mean, np.tile(prior.mean, (extra, 1))]),
                     np.concatenate([post.beta, np.full(extra, prior.mean_precision)]),
                     np.concatenate([post.shape, np.full(extra, prior.shape)]),
                     np.vstack([post.rate, np.tile(prior.rate, (extra, 1))]).reshape(-1, d))


def _shift(post: Posterior, delta) -> Posterior:
    return replace(post, mean=post.mean + delta)


def warm_start_usable(prev: Optional[MixtureModel], n_now: int) -> bool:
    """Reuse the previous fit only while the point count moved by less than half."""
    if prev is None or prev.posterior is None or prev.n_points == 0:
        return False
    return abs(n_now - prev.n_points) / prev.n_points < 0.5


# ----------------------------------------------------------------------------
# fitting


def _validate(points) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if x.size else x.reshape(0, 1)
    if len(x) == 0:
        raise EmptyInputError("cannot fit a mixture to zero points")
    if not np.all(np.isfinite(x)):
        raise ValueError("points must be finite")
    return x


def fit_dpgmm(points, warm_start: Optional[MixtureModel] = None, seed: int = 0, *,
              truncation: Optional[int] = None, concentration: Optional[float] = None,
              mean_precision: float = 1.0, tol: Optional[float] = 1e-3, max_iter: int = 100,
              variance_floor: float = VARIANCE_FLOOR):
    """Fit the truncated DP mixture by coordinate-ascent variational inference.

    Parameters
    ----------
    points : array of shape (N, d)
    warm_start : MixtureModel, optional
        Previous fit; its variational posterior seeds the first E-step when
        :func:`warm_start_usable` allows it, else a k-means cold start is used.
    seed : int
        Seed for the k-means++ cold start.
    truncation : int, optional
        Stick-breaking truncation; defaults to ``max(1, N // 2)``.
    concentration : float, optional
        DP concentration; defaults to ``1 / truncation``. Larger values leave
        visible stick mass on empty components (about ``gamma / N`` each).
    tol : float or None
        Stop once the relative lower-bound change falls below this; ``None``
        runs exactly ``max_iter`` iterations (fixed-cost timing).

    Returns
    -------
    model : MixtureModel
    resp : ndarray of shape (N, K)
        Variational responsibilities q(z_n = k) at the final iterate.
    """
    x = _validate(points)
    n = len(x)
    K = truncation if truncation is not None else max_components(n)
    K = max(1, min(K, n))
    offset = x.mean(axis=0)
    xc = x - offset                     # centering keeps the quadratic terms well conditioned
    if concentration is None:
        concentration = 1.0 / K
    prior = make_prior(xc, concentration, mean_precision)

    if warm_start is not None and warm_start_usable(warm_start, n):
        post = _resize_posterior(_shift(warm_start.posterior, -offset), K, prior)
        resp = _normalize(_log_rho(xc, post))
    else:
        resp = _cold_resp(xc, K, seed)

    post = _update_params(xc, resp, prior)
    log_rho = _log_rho(xc, post)
    trace = [_elbo(resp, log_rho, post, prior)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        resp = _normalize(log_rho)
        post, log_rho, bound = _sorted_update(xc, resp, prior, trace[-1])
        trace.append(bound)
        if tol is not None and abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            converged = True
            break

    model = MixtureModel(
        weights=_expected_weights(post),
        means=post.mean + offset,
        variances=np.maximum(post.rate / post.shape[:, None], variance_floor),
        converged=converged,
        elbo_trace=tuple(trace),
        n_iter=it,
        n_points=n,
        posterior=_shift(post, offset),
    )
    return model, resp


def closed_form_single_component(points, mean_precision: float = 1.0):
    """Exact Normal-Gamma posterior and log evidence for one component.

    With a single component the mean-field factorization is exact, so the
    variational fit must land here and its bound must equal ``log_evidence``.
    """
    x = _validate(points)
    prior = make_prior(x, 1.0, mean_precision)
    n = len(x)
    xbar = x.mean(axis=0)
    s = ((x - xbar) ** 2).sum(axis=0)
    b0, a0, m0, r0 = prior.mean_precision, prior.shape, prior.mean, prior.rate
    bn = b0 + n
    mn = (b0 * m0 + n * xbar) / bn
    an = a0 + n / 2.0
    rn = r0 + 0.5 * s + 0.5 * b0 * n * (xbar - m0) ** 2 / bn
    log_ev = np.sum(-0.5 * n * LOG_2PI + 0.5 * math.log(b0 / bn)
                    + a0 * np.log(r0) - an * np.log(rn) + gammaln(an) - gammaln(a0))
    return dict(mean=mn, beta=bn, shape=an, rate=rn, log_evidence=float(log_ev))


def model_to_text(model: MixtureModel) -> str:
    """Versioned plain-text record: K, then one ``alpha mu.. var..`` line per component."""
    lines = ["# mixture-model v1", f"K {model.K}"]
    for w, mu, var in zip(model.weights, model.means, model.variances):
        vals = [repr(float(w))] + [repr(float(v)) for v in mu] + [repr(float(v)) for v in var]
        lines.append(" ".join(vals))
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> MixtureModel:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows or rows[0][0] != "K":
        raise ValueError("mixture record must start with a K line")
    K = int(rows[0][1])
    body = np.array([[float(v) for v in r] for r in rows[1:1 + K]])
    d = (body.shape[1] - 1) // 2
    return MixtureModel(body[:, 0], body[:, 1:1 + d], body[:, 1 + d:])


def with_weights(model: MixtureModel, weights) -> MixtureModel:
    return replace(model, weights=np.asarray(weights, dtype=float))
