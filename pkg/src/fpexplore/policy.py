"""Target selection: FAME-style collaboration cost and FroShe-style herding score."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .clustering.kmeans import fit_kmeans
from .worldgen import Pose

BASELINE = "baseline"
FP = "fp"
MODES = (BASELINE, FP)


@dataclass(frozen=True)
class FamePolicyParams:
    kappa_a: float = 1.0
    kappa_r: float = 0.5
    kappa_fp: float = 1.0
    d_rep: float = 10.0
    kappa_d: float = 1.0

    def __post_init__(self):
        if min(self.kappa_a, self.kappa_r, self.kappa_fp, self.kappa_d) < 0:
            raise ValueError("FAME weights must be non-negative")
        if not self.d_rep > 0:
            raise ValueError("d_rep must be positive")


@dataclass(frozen=True)
class FroshePolicyParams:
    lambda_m: float = 0.6
    lambda_d: float = 0.4
    lambda_fp: float = 0.6

    def __post_init__(self):
        if min(self.lambda_m, self.lambda_d, self.lambda_fp) < 0:
            raise ValueError("FroShe weights must be non-negative")


@dataclass(frozen=True)
class PeerInfo:
    peer_id: int
    position: Pose
    assigned_target: Optional[Pose] = None


@dataclass(frozen=True)
class Selection:
    index: int
    score: float
    breakdown: dict = field(default_factory=dict)


def falloff(dist, d_rep: float):
    """Quadratic potential max(0, 1 - d / d_rep)^2 with compact support."""
    return np.maximum(0.0, 1.0 - np.asarray(dist, dtype=float) / d_rep) ** 2


def _check_mode(mode: str):
    if mode not in MODES:
        raise ValueError(f"unknown policy mode {mode!r}; expected one of {MODES}")


def _joint_array(priorities, n: int) -> np.ndarray:
    if priorities is None:
        return np.zeros(n)
    if len(priorities) and hasattr(priorities[0], "joint"):
        out = np.zeros(n)
        for e in priorities:
            out[e.viewpoint_id] = e.joint
        return out
    return np.asarray(priorities, dtype=float)


def fame_select(robot: Pose, positions, priorities, peers: Sequence[PeerInfo],
                params: FamePolicyParams, mode: str = FP,
                path_lengths=None, own_target: Optional[Pose] = None) -> Optional[Selection]:
    """Minimize distance cost plus collaboration cost over the viewpoints.

    ``positions`` are viewpoint (x, y) rows (or a ViewpointPool);
    ``path_lengths`` are routed distances with ``inf`` for unreachable
    viewpoints, Euclidean distance is used when they are not given.
    Returns ``None`` when nothing is reachable.
    """
    _check_mode(mode)
    pts = positions.positions() if hasattr(positions, "positions") else np.asarray(positions, float)
    pts = pts.reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return None
    if path_lengths is None:
        dist = np.hypot(pts[:, 0] - robot.x, pts[:, 1] - robot.y)
    else:
        dist = np.asarray(path_lengths, dtype=float)
    ok = np.isfinite(dist)
    if not ok.any():
        return None
    d_max = float(dist[ok].max()) or 1.0

    repulse = np.zeros(n)
    for peer in peers:
        repulse += falloff(np.hypot(pts[:, 0] - peer.position.x, pts[:, 1] - peer.position.y),
                           params.d_rep)
        if peer.assigned_target is not None:
            t = peer.assigned_target
            repulse += falloff(np.hypot(pts[:, 0] - t.x, pts[:, 1] - t.y), params.d_rep)

    if mode == FP:
        attract = params.kappa_fp * _joint_array(priorities, n)
    elif own_target is not None:
        attract = params.kappa_a * falloff(
            np.hypot(pts[:, 0] - own_target.x, pts[:, 1] - own_target.y), params.d_rep)
    else:
        attract = np.zeros(n)

    dist_cost = np.where(ok, params.kappa_d * np.where(ok, dist, 0.0) / d_max, np.inf)
    cost = dist_cost - attract + params.kappa_r * repulse
    i = int(np.argmin(cost))
    return Selection(i, float(cost[i]), {
        "distance": float(dist_cost[i]), "attraction": float(attract[i]),
        "repulsion": float(params.kappa_r * repulse[i])})


@dataclass(frozen=True)
class FrosheCandidate:
    position: tuple[float, float]
    weight: float
    target_index: int  # viewpoint to drive to when this candidate wins


def froshe_candidates(positions, n_clusters: int, seed: int = 0) -> list[FrosheCandidate]:
    """K-means batches of viewpoints: centroid, member count, member nearest the centroid."""
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    k = max(1, min(n_clusters, len(pts)))
    centroids, labels = fit_kmeans(pts, k, seed=seed)
    out = []
    for j in range(k):
        members = np.flatnonzero(labels == j)
        if members.size == 0:
            continue
        d = ((pts[members] - centroids[j]) ** 2).sum(axis=1)
        out.append(FrosheCandidate((float(centroids[j, 0]), float(centroids[j, 1])),
                                   float(members.size), int(members[np.argmin(d)])))
    return out


def froshe_select(robot: Pose, positions, weights, params: FroshePolicyParams,
                  mode: str = FP) -> Optional[Selection]:
    """Herding score argmax.

    In baseline mode ``weights`` are batch sizes and the term is
    ``lambda_m * w / w_max``; in FP mode they are joint priorities scaled by
    ``lambda_fp``. Distance is Euclidean over ``d_max``, the farthest candidate.
    """
    _check_mode(mode)
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return None
    w = _joint_array(weights, len(pts)) if mode == FP else np.asarray(weights, dtype=float)
    dist = np.hypot(pts[:, 0] - robot.x, pts[:, 1] - robot.y)
    d_max = float(dist.max()) or 1.0
    if mode == FP:
        gain = params.lambda_fp * w
    else:
        w_max = float(w.max()) or 1.0
        gain = params.lambda_m * w / w_max
    score = gain - params.lambda_d * dist / d_max
    i = int(np.argmax(score))
    return Selection(i, float(score[i]), {"gain": float(gain[i]),
                                          "distance": float(params.lambda_d * dist[i] / d_max)})


def policy_label(name: str, mode: str) -> str:
    return name if mode == BASELINE else f"{name}+fp"
