"""Mixture allocation, cluster coherence and joint viewpoint priorities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .dpgmm import MixtureModel

# smallest coherence kept after normalization; far viewpoints underflow otherwise
COHERENCE_FLOOR = 1e-300


class ConsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class PriorityEntry:
    viewpoint_id: int
    gain_prob: float
    coherence: float
    joint: float


def log_gaussian_diag(x, means, variances) -> np.ndarray:
    """log N(x | mu_k, diag(var_k)) for one point ``x`` or many; shape [..., K]."""
    x = np.asarray(x, dtype=float)
    diff = x[..., None, :] - means
    return -0.5 * (np.sum(diff * diff / variances, axis=-1)
                   + np.sum(np.log(variances), axis=-1)
                   + means.shape[-1] * math.log(2.0 * math.pi))


def _xy(pose_or_xy) -> np.ndarray:
    if hasattr(pose_or_xy, "x") and hasattr(pose_or_xy, "y"):
        return np.array([pose_or_xy.x, pose_or_xy.y])
    return np.asarray(pose_or_xy, dtype=float)


def responsibility(model: MixtureModel, x) -> np.ndarray:
    """P(k | x) = alpha_k N(x|k) / sum_j alpha_j N(x|j), evaluated in log space."""
    with np.errstate(divide="ignore"):
        logp = np.log(model.weights) + log_gaussian_diag(_xy(x), model.means, model.variances)
    return np.exp(logp - logsumexp(logp, axis=-1, keepdims=True))


def allocate_component(model: MixtureModel, robot_pose) -> int:
    """Index of the component with the largest weighted density at the robot."""
    with np.errstate(divide="ignore"):
        score = np.log(model.weights) + log_gaussian_diag(_xy(robot_pose), model.means,
                                                          model.variances)
    return int(np.argmax(score))  # argmax returns the first maximum


def cluster_coherence(model: MixtureModel, k_c: int, positions) -> np.ndarray:
    """Density of component ``k_c`` at each viewpoint, normalized over the viewpoints."""
    pts = np.asarray(positions, dtype=float).reshape(-1, model.means.shape[1])
    if len(pts) == 0:
        raise ConsistencyError("coherence needs at least one viewpoint")
    logp = log_gaussian_diag(pts, model.means[k_c:k_c + 1], model.variances[k_c:k_c + 1])[:, 0]
    p = np.exp(logp - logsumexp(logp))
    if p.min() < COHERENCE_FLOOR:
        p = np.maximum(p, COHERENCE_FLOOR)
        p /= p.sum()
    return p


def prioritize(gain_probs, coherence) -> list[PriorityEntry]:
    """Joint priority P(I|v) * P(k_c|v), sorted descending; ties by viewpoint id.

    Both inputs are either sequences aligned by viewpoint id or dicts keyed by it.
    """
    if isinstance(gain_probs, dict) or isinstance(coherence, dict):
        if not (isinstance(gain_probs, dict) and isinstance(coherence, dict)):
            raise ConsistencyError("mixing keyed and positional priority inputs")
        if set(gain_probs) != set(coherence):
            raise ConsistencyError("gain probabilities and coherence cover different viewpoints")
        ids = sorted(gain_probs)
        g = np.array([gain_probs[i] for i in ids], dtype=float)
        c = np.array([coherence[i] for i in ids], dtype=float)
    else:
        g = np.asarray(gain_probs, dtype=float)
        c = np.asarray(coherence, dtype=float)
        if g.shape != c.shape:
            raise ConsistencyError(f"length mismatch: {g.shape} vs {c.shape}")
        ids = list(range(len(g)))
    joint = g * c
    order = sorted(range(len(ids)), key=lambda i: (-joint[i], ids[i]))
    return [PriorityEntry(ids[i], float(g[i]), float(c[i]), float(joint[i])) for i in order]


def joint_by_id(entries: list[PriorityEntry]) -> np.ndarray:
    out = np.zeros(len(entries))
    for e in entries:
        out[e.viewpoint_id] = e.joint
    return out
