"""Tick-based multi-robot exploration loop and its metrics."""

from __future__ import annotations

import json
import logging
import math
import time
from functools import reduce
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .clustering import (allocate_component, binary_coherence, cluster_coherence,
                         fit_dpgmm, fit_kmeans, nearest_centroid, prioritize)
from .config import ScenarioConfig
from .mapping import (FREE, UNKNOWN, BeliefGrid, FrontierSet, detect_frontiers,
                      merge_beliefs, sense_into)
from .policy import (BASELINE, FP, PeerInfo, fame_select, froshe_candidates,
                     froshe_select)
from .viewpoint import (DistanceField, GainEstimator, Viewpoint, ViewpointPool,
                        _yaw_to_unknown, astar_cells, gain_probabilities, generate_viewpoints, merge_pools)
from .worldgen import GroundTruthGrid, Pose, generate_world, reachable_free, spawn_poses

log = logging.getLogger(__name__)

Cell = tuple[int, int]


@dataclass
class RobotState:
    id: int
    pose: Pose
    speed: float = 1.0
    target: Optional[Viewpoint] = None
    path: list = field(default_factory=list)  # remaining cells, current cell excluded
    distance: float = 0.0
    last_target: Optional[Pose] = None
    decided_tick: int = -(10 ** 9)
    progress: float = 0.0  # meters traveled past the last cell center, < one step


@dataclass(frozen=True)
class CommModel:
    range: float = math.inf

    def __post_init__(self):
        if not self.range > 0:
            raise ValueError("communication range must be positive or inf")


@dataclass
class RunMetrics:
    ticks: int = 0
    coverage_trace: list = field(default_factory=list)     # (tick, fraction of reachable free known)
    path_lengths: list = field(default_factory=list)       # meters per robot
    overlaps: int = 0
    latencies: list = field(default_factory=list)          # seconds per prioritization
    termination: str = ""
    prioritize_calls: int = 0
    max_active_components: int = 0
    newly_known: list = field(default_factory=list)        # team cells first known per tick
    initial_known: int = 0
    final_known: int = 0
    # no-starvation audit: smallest DP-GMM joint priority, largest out-of-cluster k-means coherence
    min_dpgmm_joint: float = math.inf
    max_kmeans_outside: float = 0.0
    kmeans_outside_checks: int = 0                         # evaluations with out-of-cluster viewpoints
    priority_checks: int = 0
    entropy_trace: list = field(default_factory=list)      # (tick, robot, bits)

    @property
    def coverage(self) -> float:
        return self.coverage_trace[-1][1] if self.coverage_trace else 0.0

    @property
    def total_path(self) -> float:
        return float(sum(self.path_lengths))

    @property
    def mean_latency(self) -> float:
        return float(np.mean(self.latencies)) if self.latencies else 0.0


def comm_components(positions: Sequence[Pose], comm_range: float) -> list[list[int]]:
    """Connected components of the disc graph (transitive closure), sorted by smallest id."""
    n = len(positions)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if math.isinf(comm_range) or math.hypot(positions[i].x - positions[j].x,
                                                     positions[i].y - positions[j].y) <= comm_range:
                a, b = find(i), find(j)
                if a != b:
                    parent[max(a, b)] = min(a, b)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def overlap_events(traces: Sequence[Sequence[tuple[int, Cell]]]) -> list[tuple[int, Cell, int]]:
    """``(robot, cell, tick)`` for each first entry into a cell another robot passed earlier.

    ``traces[i]`` is robot i's sequence of ``(tick, cell)`` visits. Each
    (robot, cell) pair counts at most once, at the robot's first entry.
    """
    first_seen: list[dict] = []
    for trace in traces:
        seen: dict = {}
        for tick, cell in trace:
            cell = (int(cell[0]), int(cell[1]))
            if cell not in seen:
                seen[cell] = tick
        first_seen.append(seen)
    earliest: dict = {}
    for i, seen in enumerate(first_seen):
        for cell, t in seen.items():
            earliest.setdefault(cell, []).append((t, i))
    events = []
    for cell, visits in earliest.items():
        if len(visits) < 2:
            continue
        for t, i in visits:
            if any(t2 < t for t2, j in visits if j != i):
                events.append((i, cell, t))
    return sorted(events, key=lambda e: (e[2], e[0], e[1]))


def count_overlaps(traces: Sequence[Sequence[tuple[int, Cell]]]) -> int:
    """Cell-level events where a robot enters a cell a different robot traversed before."""
    return len(overlap_events(traces))


def live_frontiers(frontiers: FrontierSet, estimator: GainEstimator) -> FrontierSet:
    """Frontiers from which at least one Unknown cell is visible.

    An Unknown cell touching a frontier only through a corner flanked by two
    obstacles can never be observed, so its frontier would attract robots forever.
    """
    cells = estimator.belief.cells
    keep = [i for i, (r, c) in enumerate(frontiers.cells)
            if estimator.visible_unknown((int(r), int(c)),
                                         _yaw_to_unknown(cells, int(r), int(c))).size]
    return FrontierSet(frontiers.cells[keep], frontiers.positions[keep])


def _seed_for(seed: int, tick: int) -> int:
    return (seed * 1_000_003 + tick) % (2 ** 63)


class Simulation:
    """One mission. ``step`` advances a tick; ``run`` loops to termination."""

    def __init__(self, config: ScenarioConfig, seed: int,
                 world: Optional[GroundTruthGrid] = None,
                 starts: Optional[Sequence[Pose]] = None, record_trace: bool = True):
        self.config = config
        self.seed = seed
        self.world = world if world is not None else generate_world(replace(config.world, seed=seed))
        starts = list(starts) if starts is not None else spawn_poses(self.world, config.n_r, seed)
        self.robots = [RobotState(i, p, config.speed) for i, p in enumerate(starts)]
        self.beliefs = [BeliefGrid.for_world(self.world) for _ in self.robots]
        self.reachable = reachable_free(self.world, starts)
        self.n_reachable = int(self.reachable.sum())
        self.tick = 0
        self.done = False
        self.metrics = RunMetrics()
        self.cell_traces: list[list] = [[(0, self._cell(r.pose))] for r in self.robots]
        self.record_trace = record_trace
        self.trace: list[dict] = []
        self._models: dict[int, object] = {}   # warm starts keyed by component leader
        self._team_known = np.zeros(self.world.shape, dtype=bool)
        self.components: list[list[int]] = []
        self.last_pools: dict[int, ViewpointPool] = {}

    # ------------------------------------------------------------------
    def _cell(self, pose: Pose) -> Cell:
        return self.world.cell_of(pose.x, pose.y)

    def _log(self, robot: RobotState, event: str, **extra):
        if not self.record_trace:
            return
        rec = {"tick": self.tick, "robot": robot.id,
               "pose": [round(robot.pose.x, 6), round(robot.pose.y, 6), round(robot.pose.yaw, 6)],
               "target": None if robot.target is None
               else [robot.target.pose.x, robot.target.pose.y],
               "event": event}
        rec.update(extra)
        self.trace.append(rec)

    # ------------------------------------------------------------------
    def step(self) -> None:
        if self.done:
            raise RuntimeError("mission already terminated")
        cfg = self.config
        self.tick += 1

        # (1) sense
        for robot, belief in zip(self.robots, self.beliefs):
            sense_into(self.world, belief, robot.pose, cfg.sensor)

        # (2) merge within communication components
        self.components = comm_components([r.pose for r in self.robots], cfg.comm_range)
        for comp in self.components:
            if len(comp) > 1:
                merged = self.beliefs[comp[0]]
                for i in comp[1:]:
                    merged = merge_beliefs(merged, self.beliefs[i])
                for i in comp:
                    self.beliefs[i] = merged.copy()

        # (3) + (4) prioritize and select, per component
        for comp in self.components:
            self._decide(comp)

        # (5) move
        for robot in self.robots:
            self._advance(robot)

        # (6) metrics
        self._update_metrics()

    def _needs_decision(self, robot: RobotState, frontier_cells: np.ndarray) -> bool:
        if robot.target is None or not robot.path:
            return True
        if not frontier_cells[robot.target.frontier_cell]:
            return True
        belief = self.beliefs[robot.id]
        if any(belief.cells[c] != FREE for c in robot.path):
            return True
        return self.tick - robot.decided_tick >= self.config.redecide_period

    def _decide(self, comp: list[int]) -> None:
        cfg = self.config
        belief = self.beliefs[comp[0]]
        estimator = GainEstimator(belief, cfg.sensor)
        frontiers = live_frontiers(detect_frontiers(belief), estimator)
        fmask = np.zeros(belief.shape, dtype=bool)
        if len(frontiers):
            fmask[frontiers.cells[:, 0], frontiers.cells[:, 1]] = True
        deciders = [i for i in comp if self._needs_decision(self.robots[i], fmask)]
        if not deciders:
            return
        if len(frontiers) == 0:
            for i in deciders:
                r = self.robots[i]
                r.target, r.path = None, []
                self._log(r, "idle", reason="no-frontiers")
            return

        fields = {i: DistanceField(belief, self.robots[i].pose) for i in comp}
        pools = [generate_viewpoints(belief, frontiers, cfg.sensor, i, self.robots[i].pose,
                                     fields[i], estimator) for i in comp]
        pool = merge_pools(pools)
        self.last_pools[comp[0]] = pool
        if len(pool) == 0:
            for i in deciders:
                r = self.robots[i]
                r.target, r.path = None, []
                self._log(r, "idle", reason="no-reachable-viewpoint")
            return

        positions = pool.positions()
        cells = np.array([vp.frontier_cell for vp in pool])
        needs_priority = cfg.mode == FP
        joint_for: dict[int, np.ndarray] = {}
        if needs_priority:
            t0 = time.perf_counter()
            joint_for = self._priorities(comp, deciders, pool, positions)
            self.metrics.latencies.append(time.perf_counter() - t0)
            self.metrics.prioritize_calls += 1

        for i in deciders:
            robot = self.robots[i]
            lengths = fields[i].dist[cells[:, 0], cells[:, 1]]
            choice = self._select(robot, comp, pool, positions, lengths, joint_for.get(i))
            if choice is None:
                robot.target, robot.path = None, []
                self._log(robot, "idle", reason="unreachable")
                continue
            vp = pool[choice.index]
            path = fields[i].path_to(vp.frontier_cell)
            robot.target = vp
            robot.path = list(path.cells[1:])
            robot.decided_tick = self.tick
            robot.last_target = vp.pose
            self._log(robot, "select", viewpoint=int(choice.index),
                      score=round(choice.score, 9),
                      breakdown={k: round(v, 9) for k, v in choice.breakdown.items()})

    def _priorities(self, comp, deciders, pool, positions) -> dict[int, np.ndarray]:
        cfg = self.config
        gain_p = gain_probabilities(pool)
        out = {}
        if cfg.clustering == "dpgmm":
            leader = comp[0]
            model, _ = fit_dpgmm(positions, warm_start=self._models.get(leader),
                                 seed=_seed_for(self.seed, self.tick))
            self._models[leader] = model
            self.metrics.max_active_components = max(self.metrics.max_active_components,
                                                     model.n_active)
            for i in deciders:
                k_c = allocate_component(model, self.robots[i].pose)
                coh = cluster_coherence(model, k_c, positions)
                joint = np.array([e.joint for e in sorted(prioritize(gain_p, coh),
                                                          key=lambda e: e.viewpoint_id)])
                self.metrics.min_dpgmm_joint = min(self.metrics.min_dpgmm_joint, float(joint.min()))
                self.metrics.priority_checks += 1
                out[i] = joint
        else:
            k = max(1, min(cfg.kmeans_k, len(pool)))
            centroids, labels = fit_kmeans(positions, k, seed=_seed_for(self.seed, self.tick))
            for i in deciders:
                own = nearest_centroid(centroids, self.robots[i].pose.xy)
                coh = binary_coherence(labels, own)
                outside = coh[labels != own]
                if outside.size:
                    self.metrics.kmeans_outside_checks += 1
                    self.metrics.max_kmeans_outside = max(self.metrics.max_kmeans_outside,
                                                          float(outside.max()))
                self.metrics.priority_checks += 1
                out[i] = gain_p * coh
        return out

    def _select(self, robot, comp, pool, positions, lengths, joint):
        cfg = self.config
        if cfg.policy == "fame":
            peers = [PeerInfo(j, self.robots[j].pose,
                              None if self.robots[j].target is None else self.robots[j].target.pose)
                     for j in comp if j != robot.id]
            return fame_select(robot.pose, positions, joint, peers, cfg.fame, cfg.mode,
                               path_lengths=lengths, own_target=robot.last_target)
        reach = np.flatnonzero(np.isfinite(lengths))
        if reach.size == 0:
            return None
        if cfg.mode == BASELINE:
            cands = froshe_candidates(positions[reach], cfg.froshe_clusters,
                                      seed=_seed_for(self.seed, self.tick))
            sel = froshe_select(robot.pose, [c.position for c in cands],
                                [c.weight for c in cands], cfg.froshe, BASELINE)
            if sel is None:
                return None
            return replace(sel, index=int(reach[cands[sel.index].target_index]))
        sel = froshe_select(robot.pose, positions[reach], joint[reach], cfg.froshe, FP)
        if sel is None:
            return None
        return replace(sel, index=int(reach[sel.index]))

    def _advance(self, robot: RobotState) -> None:
        if not robot.path:
            return
        belief = self.beliefs[robot.id]
        if belief.cells[robot.path[0]] != FREE:
            # blocked by a newly observed obstacle: replan to the same target
            start = self._cell(robot.pose)
            path = astar_cells(belief.cells == FREE, start, robot.target.frontier_cell,
                               belief.resolution)
            if path is None:
                robot.target, robot.path = None, []
                self._log(robot, "blocked")
                return
            robot.path = list(path.cells[1:])
        res = self.world.resolution
        # the robot moves continuously; its pose snaps to the last cell center passed
        robot.progress += robot.speed
        cur = self._cell(robot.pose)
        moved = False
        while robot.path:
            nxt = robot.path[0]
            step = res * (math.sqrt(2.0) if nxt[0] != cur[0] and nxt[1] != cur[1] else 1.0)
            if step > robot.progress + 1e-12 or belief.cells[nxt] != FREE:
                break
            assert not self.world.occupied[nxt], "motion into an obstacle"
            robot.progress -= step
            robot.distance += step
            yaw = math.atan2(nxt[0] - cur[0], nxt[1] - cur[1])
            x, y = self.world.cell_center(*nxt)
            robot.pose = Pose(x, y, yaw)
            robot.path.pop(0)
            self.cell_traces[robot.id].append((self.tick, nxt))
            cur = nxt
            moved = True
        if not robot.path:
            robot.progress = 0.0
            self._log(robot, "arrive")
            robot.target = None
        elif moved:
            self._log(robot, "move")

    def _update_metrics(self) -> None:
        known = np.zeros(self.world.shape, dtype=bool)
        for b in self.beliefs:
            known |= b.cells != UNKNOWN
        newly = int((known & ~self._team_known).sum())
        if self.tick == 1:
            self.metrics.initial_known = newly
        self.metrics.newly_known.append(newly)
        self._team_known = known
        cov = float((known & self.reachable).sum()) / max(self.n_reachable, 1)
        self.metrics.coverage_trace.append((self.tick, cov))
        for b_idx, b in enumerate(self.beliefs):
            self.metrics.entropy_trace.append((self.tick, b_idx, float((b.cells == UNKNOWN).sum())))

        cfg = self.config
        if cov >= cfg.coverage_threshold:
            self._finish("coverage")
        elif self._team_exhausted():
            self._finish("explored")
        elif self.tick >= cfg.tick_budget:
            self._finish("timeout")

    def team_belief(self) -> BeliefGrid:
        """Union of every robot's map (what a perfect team-wide merge would hold)."""
        return reduce(merge_beliefs, self.beliefs)

    def _team_exhausted(self) -> bool:
        team = self.team_belief()
        est = GainEstimator(team, self.config.sensor)
        return not any(est.visible_unknown((int(r), int(c)),
                                           _yaw_to_unknown(team.cells, int(r), int(c))).size
                       for r, c in detect_frontiers(team).cells)

    def _finish(self, reason: str) -> None:
        self.done = True
        m = self.metrics
        m.ticks = self.tick
        m.termination = reason
        m.path_lengths = [r.distance for r in self.robots]
        m.overlaps = count_overlaps(self.cell_traces)
        m.final_known = int(self._team_known.sum())

    def run(self) -> RunMetrics:
        while not self.done:
            self.step()
        return self.metrics

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def run(config: ScenarioConfig, seed: Optional[int] = None, **kwargs) -> RunMetrics:
    """Run one mission of ``config`` (first configured seed unless given)."""
    seed = config.seeds[0] if seed is None else seed
    return Simulation(config, seed, **kwargs).run()
