"""Per-robot belief grids, deterministic raycast sensing, entropy, frontiers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .worldgen import GroundTruthGrid, Pose, write_pgm

UNKNOWN = np.int8(-1)
FREE = np.int8(0)
OCCUPIED = np.int8(1)

TWO_PI = 2.0 * math.pi


class SensingError(RuntimeError):
    pass


class MergeError(ValueError):
    pass


@dataclass(frozen=True)
class SensorModel:
    range: float = 5.0
    fov: float = TWO_PI
    ray_count: Optional[int] = None

    def __post_init__(self):
        if not self.range > 0:
            raise ValueError("sensor range must be positive")
        if not (0 < self.fov <= TWO_PI + 1e-12):
            raise ValueError("fov must lie in (0, 2*pi]")
        if self.ray_count is not None and self.ray_count < 8:
            raise ValueError("ray_count must be >= 8")

    @property
    def rays(self) -> int:
        if self.ray_count is not None:
            return self.ray_count
        return max(8, int(round(360 * self.fov / TWO_PI)))

    @property
    def omnidirectional(self) -> bool:
        return self.fov >= TWO_PI - 1e-12

    def ray_angles(self, yaw: float) -> np.ndarray:
        n = self.rays
        if self.omnidirectional:
            # yaw-independent so that visibility can be cached per cell
            return (np.arange(n) + 0.5) * (TWO_PI / n)
        return yaw - self.fov / 2.0 + (np.arange(n) + 0.5) * (self.fov / n)


class BeliefGrid:
    """Tri-state occupancy belief. ``cells`` holds UNKNOWN/FREE/OCCUPIED codes."""

    __slots__ = ("cells", "resolution", "origin")

    def __init__(self, cells: np.ndarray, resolution: float, origin=(0.0, 0.0)):
        self.cells = cells
        self.resolution = float(resolution)
        self.origin = (float(origin[0]), float(origin[1]))

    @classmethod
    def unknown(cls, shape, resolution: float, origin=(0.0, 0.0)) -> "BeliefGrid":
        return cls(np.full(shape, UNKNOWN, dtype=np.int8), resolution, origin)

    @classmethod
    def for_world(cls, world: GroundTruthGrid) -> "BeliefGrid":
        return cls.unknown(world.shape, world.resolution)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def copy(self) -> "BeliefGrid":
        return BeliefGrid(self.cells.copy(), self.resolution, self.origin)

    @property
    def occupancy_prob(self) -> np.ndarray:
        p = np.full(self.cells.shape, 0.5)
        p[self.cells == FREE] = 0.0
        p[self.cells == OCCUPIED] = 1.0
        return p

    def known_mask(self) -> np.ndarray:
        return self.cells != UNKNOWN

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        res = self.resolution
        return (int(math.floor((y - self.origin[1]) / res)),
                int(math.floor((x - self.origin[0]) / res)))

    def cell_center(self, r: int, c: int) -> tuple[float, float]:
        res = self.resolution
        return (self.origin[0] + (c + 0.5) * res, self.origin[1] + (r + 0.5) * res)

    def in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.cells.shape[0] and 0 <= c < self.cells.shape[1]

    def same_geometry(self, other: "BeliefGrid") -> bool:
        return (self.cells.shape == other.cells.shape
                and self.resolution == other.resolution
                and self.origin == other.origin)

    def __eq__(self, other):
        if not isinstance(other, BeliefGrid):
            return NotImplemented
        return self.same_geometry(other) and np.array_equal(self.cells, other.cells)

    def __repr__(self):
        known = int(self.known_mask().sum())
        return f"BeliefGrid(shape={self.shape}, known={known}, res={self.resolution})"


# ----------------------------------------------------------------------------
# ray tables


def _supercover(angle: float, reach: float) -> list[tuple[int, int]]:
    """Cells (dx, dy) touched by a ray from the center of cell (0, 0).

    Grid traversal over unit cells centered at integer coordinates; when the
    ray crosses exactly through a corner both side cells are emitted before
    the diagonal cell.
    """
    dx, dy = math.cos(angle), math.sin(angle)
    if abs(dx) < 1e-12:
        dx = 0.0
    if abs(dy) < 1e-12:
        dy = 0.0
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    t_max_x = 0.5 / abs(dx) if dx else math.inf
    t_max_y = 0.5 / abs(dy) if dy else math.inf
    t_dx = 1.0 / abs(dx) if dx else math.inf
    t_dy = 1.0 / abs(dy) if dy else math.inf
    x = y = 0
    cells = [(0, 0)]
    while True:
        t = min(t_max_x, t_max_y)
        if t > reach:
            break
        if abs(t_max_x - t_max_y) < 1e-9:
            cells.append((x + sx, y))
            cells.append((x, y + sy))
            x += sx
            y += sy
            t_max_x += t_dx
            t_max_y += t_dy
        elif t_max_x < t_max_y:
            x += sx
            t_max_x += t_dx
        else:
            y += sy
            t_max_y += t_dy
        cells.append((x, y))
    return cells


@lru_cache(maxsize=4096)
def _ray_table(n: int, start: float, step: float, reach: float):
    # rays are cast independently, so exact duplicates add nothing; drop them
    rays = list(dict.fromkeys(tuple(_supercover(start + (i + 0.5) * step, reach))
                              for i in range(n)))
    width = max(len(r) for r in rays)
    dr = np.zeros((len(rays), width), dtype=np.int64)
    dc = np.zeros((len(rays), width), dtype=np.int64)
    valid = np.zeros((len(rays), width), dtype=bool)
    for i, ray in enumerate(rays):
        n = len(ray)
        dc[i, :n] = [p[0] for p in ray]
        dr[i, :n] = [p[1] for p in ray]
        valid[i, :n] = True
    for arr in (dr, dc, valid):
        arr.setflags(write=False)
    return dr, dc, valid


def ray_table(sensor: SensorModel, yaw: float, resolution: float):
    """Per-ray cell offsets ``(drow, dcol, valid)`` matching :meth:`SensorModel.ray_angles`."""
    n = sensor.rays
    reach = round(sensor.range / resolution, 9)
    if sensor.omnidirectional:
        return _ray_table(n, 0.0, TWO_PI / n, reach)
    return _ray_table(n, round(yaw - sensor.fov / 2.0, 9), sensor.fov / n, reach)


def cast(blocked: np.ndarray, r: int, c: int, sensor: SensorModel, yaw: float,
         resolution: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raycast from cell (r, c) against a boolean blocking grid.

    Returns ``(rows, cols, hit)`` of every cell a ray reaches: cells before
    the first blocking cell plus the blocking cell itself (``hit`` True).
    Rays end at the grid border.
    """
    dr, dc, valid = ray_table(sensor, yaw, resolution)
    rr = r + dr
    cc = c + dc
    rows, cols = blocked.shape
    inb = valid & (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
    block = np.zeros(inb.shape, dtype=bool)
    block[inb] = blocked[rr[inb], cc[inb]]
    stop = block | ~inb
    first = np.where(stop.any(axis=1), stop.argmax(axis=1), stop.shape[1])[:, None]
    steps = np.arange(stop.shape[1])
    seen = inb & ((steps < first) | (block & (steps == first)))
    return rr[seen], cc[seen], block[seen]


def sense_into(world: GroundTruthGrid, belief: BeliefGrid, pose: Pose,
               sensor: SensorModel) -> int:
    """In-place :func:`sense`. Returns the number of cells that became known."""
    r, c = belief.cell_of(pose.x, pose.y)
    if not world.in_bounds(r, c):
        raise SensingError(f"pose {pose} outside the world")
    if world.occupied[r, c]:
        raise SensingError(f"cannot sense from inside an obstacle at {pose}")
    rr, cc, _ = cast(world.occupied, r, c, sensor, pose.yaw, belief.resolution)
    fresh = belief.cells[rr, cc] == UNKNOWN
    flat = np.unique(rr[fresh] * belief.cells.shape[1] + cc[fresh])
    rr, cc = np.divmod(flat, belief.cells.shape[1])
    belief.cells[rr, cc] = np.where(world.occupied[rr, cc], OCCUPIED, FREE)
    return len(flat)


def sense(world: GroundTruthGrid, belief: BeliefGrid, pose: Pose,
          sensor: SensorModel) -> BeliefGrid:
    out = belief.copy()
    sense_into(world, out, pose, sensor)
    return out


def binary_entropy_bits(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    h = np.zeros_like(p)
    mid = (p > 0.0) & (p < 1.0)
    q = p[mid]
    h[mid] = -(q * np.log2(q) + (1.0 - q) * np.log2(1.0 - q))
    return h


def entropy(belief: BeliefGrid) -> float:
    """Shannon entropy of the map in bits (sum of per-cell binary entropies)."""
    return float(binary_entropy_bits(belief.occupancy_prob).sum())


@dataclass(frozen=True)
class FrontierSet:
    cells: np.ndarray      # int [n, 2] of (row, col), row-major order
    positions: np.ndarray  # float [n, 2] world (x, y)

    def __len__(self):
        return len(self.cells)

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(r), int(c)) for r, c in self.cells}


def unknown_neighbor_count(cells: np.ndarray) -> np.ndarray:
    unk = np.pad(cells == UNKNOWN, 1, constant_values=False).astype(np.int8)
    rows, cols = cells.shape
    count = np.zeros((rows, cols), dtype=np.int8)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr or dc:
                count += unk[1 + dr:1 + dr + rows, 1 + dc:1 + dc + cols]
    return count


def frontier_mask(belief: BeliefGrid) -> np.ndarray:
    return (belief.cells == FREE) & (unknown_neighbor_count(belief.cells) > 0)


def detect_frontiers(belief: BeliefGrid) -> FrontierSet:
    """Free cells with at least one Unknown 8-neighbor, row-major."""
    cells = np.argwhere(frontier_mask(belief))
    res = belief.resolution
    positions = np.column_stack([belief.origin[0] + (cells[:, 1] + 0.5) * res,
                                 belief.origin[1] + (cells[:, 0] + 0.5) * res])
    return FrontierSet(cells, positions.reshape(-1, 2))


def merge_beliefs(a: BeliefGrid, b: BeliefGrid) -> BeliefGrid:
    """Cell-wise join: known beats Unknown, Occupied beats Free."""
    if not a.same_geometry(b):
        raise MergeError("cannot merge belief grids with different geometry")
    out = np.maximum(a.cells, b.cells)  # UNKNOWN(-1) < FREE(0) < OCCUPIED(1)
    return BeliefGrid(out, a.resolution, a.origin)


def export_belief_pgm(belief: BeliefGrid, path) -> None:
    write_pgm(path, belief.cells, {FREE: 255, OCCUPIED: 0, UNKNOWN: 128})
