"""Frontier viewpoints, A* routing, path information gain and gain probabilities."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .mapping import (FREE, OCCUPIED, UNKNOWN, BeliefGrid, FrontierSet, SensorModel,
                      cast, entropy)
from .worldgen import Pose, wrap_angle

SQRT2 = math.sqrt(2.0)
NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]

Cell = tuple[int, int]


class PlanningError(RuntimeError):
    pass


class EmptyPoolError(RuntimeError):
    """Raised when prioritization is requested over no viewpoints."""


@dataclass(frozen=True)
class Viewpoint:
    pose: Pose
    gain: float
    owner: int
    frontier_cell: Cell

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.pose.x, self.pose.y])


@dataclass(frozen=True)
class ViewpointPool:
    entries: tuple[Viewpoint, ...]
    origins: frozenset[int] = frozenset()

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i) -> Viewpoint:
        return self.entries[i]

    def positions(self) -> np.ndarray:
        return np.array([[v.pose.x, v.pose.y] for v in self.entries], dtype=float).reshape(-1, 2)

    def gains(self) -> np.ndarray:
        return np.array([v.gain for v in self.entries], dtype=float)

    def index_of(self, frontier_cell: Cell) -> Optional[int]:
        for i, v in enumerate(self.entries):
            if v.frontier_cell == frontier_cell:
                return i
        return None


@dataclass(frozen=True)
class Path:
    cells: tuple[Cell, ...]
    resolution: float
    straight_moves: int = 0
    diagonal_moves: int = 0

    @property
    def length(self) -> float:
        return (self.straight_moves + self.diagonal_moves * SQRT2) * self.resolution

    @classmethod
    def from_cells(cls, cells: Sequence[Cell], resolution: float) -> "Path":
        cells = tuple((int(r), int(c)) for r, c in cells)
        straight = diagonal = 0
        for (r0, c0), (r1, c1) in zip(cells, cells[1:]):
            if abs(r1 - r0) > 1 or abs(c1 - c0) > 1 or (r0, c0) == (r1, c1):
                raise ValueError(f"cells {(r0, c0)} and {(r1, c1)} are not 8-adjacent")
            if r0 != r1 and c0 != c1:
                diagonal += 1
            else:
                straight += 1
        return cls(cells, resolution, straight, diagonal)


def _octile(a: Cell, b: Cell) -> float:
    dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
    return (max(dr, dc) - min(dr, dc)) + SQRT2 * min(dr, dc)


def plan_path(belief: BeliefGrid, start: Pose, goal: Pose) -> Optional[Path]:
    """A* over Free cells with octile costs. ``None`` if the goal is unreachable."""
    s = belief.cell_of(start.x, start.y)
    g = belief.cell_of(goal.x, goal.y)
    if not belief.in_bounds(*s) or belief.cells[s] != FREE:
        raise PlanningError(f"start {start} is not in a Free cell")
    return astar_cells(belief.cells == FREE, s, g, belief.resolution)


def astar_cells(passable: np.ndarray, s: Cell, g: Cell, resolution: float) -> Optional[Path]:
    rows, cols = passable.shape
    if not (0 <= g[0] < rows and 0 <= g[1] < cols) or not passable[g]:
        return None
    best = {s: 0.0}
    parent: dict[Cell, Cell] = {}
    heap = [(_octile(s, g), 0.0, s)]
    closed = set()
    while heap:
        _, cost, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == g:
            cells = [cur]
            while cur in parent:
                cur = parent[cur]
                cells.append(cur)
            return Path.from_cells(cells[::-1], resolution)
        closed.add(cur)
        r, c = cur
        for dr, dc in NEIGHBORS:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < rows and 0 <= nc < cols) or not passable[nr, nc]:
                continue
            nxt = (nr, nc)
            ncost = cost + (SQRT2 if dr and dc else 1.0)
            if ncost < best.get(nxt, math.inf):
                best[nxt] = ncost
                parent[nxt] = cur
                heapq.heappush(heap, (ncost + _octile(nxt, g), ncost, nxt))
    return None


class DistanceField:
    """Single-source shortest paths over Free cells (all goals at once).

    Backed by scipy's Dijkstra; A* stays the per-goal planner, this serves
    the many-goals case of routing to every frontier viewpoint.
    """

    def __init__(self, belief: BeliefGrid, start: Pose):
        s = belief.cell_of(start.x, start.y)
        if not belief.in_bounds(*s) or belief.cells[s] != FREE:
            raise PlanningError(f"start {start} is not in a Free cell")
        self.shape = belief.shape
        self.resolution = belief.resolution
        self.start = s
        graph = _free_graph(belief.cells == FREE)
        cols = self.shape[1]
        dist, pred = dijkstra(graph, directed=False, indices=s[0] * cols + s[1],
                              return_predecessors=True)
        self.dist = dist.reshape(self.shape) * self.resolution
        self._pred = pred

    def reachable(self, cell: Cell) -> bool:
        return bool(np.isfinite(self.dist[cell]))

    def length(self, cell: Cell) -> float:
        return float(self.dist[cell])

    def path_to(self, cell: Cell) -> Optional[Path]:
        if not self.reachable(cell):
            return None
        cols = self.shape[1]
        idx = cell[0] * cols + cell[1]
        out = []
        while idx >= 0:
            out.append(divmod(int(idx), cols))
            idx = self._pred[idx]
        return Path.from_cells(out[::-1], self.resolution)


_GRAPH_STEPS = ((0, 1, 1.0), (1, 0, 1.0), (1, 1, SQRT2), (1, -1, SQRT2))


def _free_graph(free: np.ndarray):
    rows, cols = free.shape
    idx = np.arange(rows * cols).reshape(rows, cols)
    src, dst, w = [], [], []
    for dr, dc, cost in _GRAPH_STEPS:
        r0, r1 = 0, rows - dr
        c0, c1 = max(0, -dc), cols - max(0, dc)
        a = free[r0:r1, c0:c1] & free[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        src.append(idx[r0:r1, c0:c1][a])
        dst.append(idx[r0 + dr:r1 + dr, c0 + dc:c1 + dc][a])
        w.append(np.full(int(a.sum()), cost))
    n = rows * cols
    return coo_matrix((np.concatenate(w), (np.concatenate(src), np.concatenate(dst))),
                      shape=(n, n)).tocsr()


# ----------------------------------------------------------------------------
# information gain


def sample_stride(sensor: SensorModel, resolution: float) -> int:
    return max(1, math.ceil(sensor.range / (2.0 * resolution)))


def gain_poses(path: Path, sensor: SensorModel, goal_yaw: Optional[float] = None):
    """(cell, yaw) pairs where the sensor is simulated along ``path``."""
    cells = path.cells
    stride = sample_stride(sensor, path.resolution)
    idx = list(range(0, len(cells), stride))
    if idx[-1] != len(cells) - 1:
        idx.append(len(cells) - 1)
    out = []
    for i in idx:
        if i == len(cells) - 1 and goal_yaw is not None:
            yaw = goal_yaw
        elif i > 0:
            yaw = math.atan2(cells[i][0] - cells[i - 1][0], cells[i][1] - cells[i - 1][1])
        elif len(cells) > 1:
            yaw = math.atan2(cells[1][0] - cells[0][0], cells[1][1] - cells[0][1])
        else:
            yaw = goal_yaw if goal_yaw is not None else 0.0
        out.append((cells[i], yaw))
    return out


def predict_belief(belief: BeliefGrid, path: Path, sensor: SensorModel,
                   goal_yaw: Optional[float] = None) -> BeliefGrid:
    """Belief after driving ``path``, assuming Unknown space is free."""
    pred = belief.copy()
    blocked = belief.cells == OCCUPIED
    for (r, c), yaw in gain_poses(path, sensor, goal_yaw):
        rr, cc, _ = cast(blocked, r, c, sensor, yaw, belief.resolution)
        hit_unknown = pred.cells[rr, cc] == UNKNOWN
        pred.cells[rr[hit_unknown], cc[hit_unknown]] = FREE
    return pred


def information_gain(belief: BeliefGrid, path: Path, sensor: SensorModel,
                     goal_yaw: Optional[float] = None) -> float:
    """Entropy drop (bits) from executing ``path`` under the free-space assumption.

    Stored as a non-negative magnitude: ``H(belief) - H(predicted)``.
    """
    return entropy(belief) - entropy(predict_belief(belief, path, sensor, goal_yaw))


class GainEstimator:
    """Cached path gains for one belief snapshot.

    Each revealed Unknown cell is worth exactly one bit, so the gain of a
    path is the size of the union of Unknown cells visible from its sample
    poses. Visibility depends only on the belief, so it is memoized per
    (cell, yaw) and shared by every path through that cell.
    """

    def __init__(self, belief: BeliefGrid, sensor: SensorModel):
        self.belief = belief
        self.sensor = sensor
        self._blocked = belief.cells == OCCUPIED
        self._unknown = belief.cells == UNKNOWN
        self._cols = belief.shape[1]
        self._cache: dict = {}
        self._bit_cache: dict = {}
        self._tree_memo: dict = {}

    def visible_unknown(self, cell: Cell, yaw: float) -> np.ndarray:
        key = cell if self.sensor.omnidirectional else (cell, round(yaw, 6))
        hit = self._cache.get(key)
        if hit is None:
            rr, cc, _ = cast(self._blocked, cell[0], cell[1], self.sensor, yaw,
                             self.belief.resolution)
            keep = self._unknown[rr, cc]
            hit = np.unique(rr[keep] * self._cols + cc[keep])
            self._cache[key] = hit
        return hit

    def gain(self, path: Path, goal_yaw: Optional[float] = None) -> float:
        parts = [self.visible_unknown(cell, yaw)
                 for cell, yaw in gain_poses(path, self.sensor, goal_yaw)]
        if len(parts) == 1:
            return float(len(parts[0]))
        return float(len(np.unique(np.concatenate(parts))))

    def _bits(self, cell: Cell) -> int:
        bits = self._bit_cache.get(cell)
        if bits is None:
            mask = np.zeros(self._unknown.size, dtype=bool)
            mask[self.visible_unknown(cell, 0.0)] = True
            bits = int.from_bytes(np.packbits(mask).tobytes(), "big")
            self._bit_cache[cell] = bits
        return bits

    def tree_gain(self, field: "DistanceField", cell: Cell) -> float:
        """:meth:`gain` of ``field.path_to(cell)`` for an omnidirectional sensor.

        Sample poses sit at path depths that are multiples of the stride, so
        the revealed set is accumulated down the shortest-path tree and
        shared between every path through a node.
        """
        if not self.sensor.omnidirectional:
            raise ValueError("tree gains need a yaw-independent sensor")
        if not field.reachable(cell):
            raise PlanningError(f"{cell} is unreachable")
        memo = self._tree_memo.setdefault(id(field), (field, {}))[1]
        stride = sample_stride(self.sensor, self.belief.resolution)
        cols = self._cols
        chain = []
        idx = cell[0] * cols + cell[1]
        while idx >= 0 and idx not in memo:
            chain.append(idx)
            idx = int(field._pred[idx])
        depth, bits = memo[idx] if idx >= 0 else (-1, 0)
        for idx in reversed(chain):
            depth += 1
            if depth % stride == 0:
                bits |= self._bits(divmod(idx, cols))
            memo[idx] = (depth, bits)
        return float((bits | self._bits(cell)).bit_count())


# ----------------------------------------------------------------------------
# viewpoints and pools


def _yaw_to_unknown(cells: np.ndarray, r: int, c: int) -> float:
    rows, cols = cells.shape
    sdr = sdc = 0
    for dr, dc in NEIGHBORS:
        nr, nc = r + dr, c + dc
        if 0 <= nr < rows and 0 <= nc < cols and cells[nr, nc] == UNKNOWN:
            sdr += dr
            sdc += dc
    if sdr == 0 and sdc == 0:
        return 0.0
    return wrap_angle(math.atan2(sdr, sdc))


def generate_viewpoints(belief: BeliefGrid, frontiers: FrontierSet, sensor: SensorModel,
                        owner: int, start: Optional[Pose] = None,
                        field: Optional[DistanceField] = None,
                        estimator: Optional[GainEstimator] = None) -> list[Viewpoint]:
    """One viewpoint per frontier cell, placed on the cell, facing its Unknown side.

    With a ``start`` pose the gain is accumulated along the routed path from
    it and frontiers that cannot be reached are skipped; without one, the
    gain is that of observing from the viewpoint alone.
    """
    if len(frontiers) == 0:
        return []
    estimator = estimator or GainEstimator(belief, sensor)
    if start is not None and field is None:
        field = DistanceField(belief, start)
    res = belief.resolution
    out = []
    tree = field is not None and estimator.sensor.omnidirectional
    for (r, c) in frontiers.cells:
        r, c = int(r), int(c)
        yaw = _yaw_to_unknown(belief.cells, r, c)
        if field is not None and not field.reachable((r, c)):
            continue
        if tree:
            gain = estimator.tree_gain(field, (r, c))
        else:
            path = field.path_to((r, c)) if field is not None else Path(((r, c),), res)
            gain = estimator.gain(path, yaw)
        x, y = belief.cell_center(r, c)
        out.append(Viewpoint(Pose(x, y, yaw), gain, owner, (r, c)))
    return out


def merge_pools(pools: Iterable[Sequence[Viewpoint]]) -> ViewpointPool:
    """Union of pools keyed by frontier cell, keeping the max-gain duplicate."""
    best: dict[Cell, Viewpoint] = {}
    origins = set()
    for pool in pools:
        for vp in pool:
            origins.add(vp.owner)
            cur = best.get(vp.frontier_cell)
            if cur is None or vp.gain > cur.gain or (vp.gain == cur.gain and vp.owner < cur.owner):
                best[vp.frontier_cell] = vp
    entries = tuple(best[k] for k in sorted(best))
    return ViewpointPool(entries, frozenset(origins))


def gain_probabilities(pool) -> np.ndarray:
    """Normalize viewpoint gains into P(I | viewpoint); uniform if all gains are 0."""
    gains = pool.gains() if isinstance(pool, ViewpointPool) else np.asarray(pool, dtype=float)
    if gains.size == 0:
        raise EmptyPoolError("no viewpoints to prioritize")
    if np.any(gains < 0) or not np.all(np.isfinite(gains)):
        raise ValueError("gains must be finite and non-negative")
    total = gains.sum()
    if total <= 0.0:
        return np.full(gains.size, 1.0 / gains.size)
    return gains / total


def pool_to_text(pool: ViewpointPool, resolution: float) -> str:
    lines = [f"# viewpoint-pool v1 resolution={resolution!r}"]
    for vp in pool:
        lines.append(f"{vp.owner} {vp.pose.x!r} {vp.pose.y!r} {vp.pose.yaw!r} {vp.gain!r}")
    return "\n".join(lines) + "\n"


def pool_from_text(text: str) -> ViewpointPool:
    entries = []
    resolution = None
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line.split():
                if tok.startswith("resolution="):
                    resolution = float(tok.split("=", 1)[1])
            continue
        owner, x, y, yaw, gain = line.split()
        x, y = float(x), float(y)
        if resolution is None:
            raise ValueError("pool record lacks a resolution header")
        cell = (int(math.floor(y / resolution)), int(math.floor(x / resolution)))
        entries.append(Viewpoint(Pose(x, y, float(yaw)), float(gain), int(owner), cell))
    return merge_pools([entries])
