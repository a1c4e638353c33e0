"""Forest-like 2-D worlds: tree discs rasterized onto an occupancy grid.

Grid convention used across the package: ``cells[row, col]`` with row along
+y and col along +x, origin at the lower-left corner of the world, cell
``(r, c)`` centered at ``((c + 0.5) * res, (r + 0.5) * res)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

MAX_TREE_ATTEMPTS = 10_000

Rect = tuple[float, float, float, float]  # x0, y0, x1, y1


class WorldSpecError(ValueError):
    pass


class UnsatisfiableDensityError(RuntimeError):
    pass


class SpawnError(RuntimeError):
    pass


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    yaw: float = 0.0

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


def wrap_angle(a: float) -> float:
    """Map an angle into [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class WorldSpec:
    width: float
    height: float
    resolution: float = 0.5
    tree_density: float = 0.1
    tree_radius_range: tuple[float, float] = (0.2, 0.5)
    seed: int = 0
    density_patches: Optional[tuple[tuple[Rect, float], ...]] = None
    # (x, y, radius) disc kept free of trees; spawns are drawn inside it
    spawn_clearing: Optional[tuple[float, float, float]] = (2.0, 2.0, 2.0)

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0 and self.resolution > 0):
            raise WorldSpecError("width, height and resolution must be positive")
        if self.tree_density < 0:
            raise WorldSpecError("tree_density must be >= 0")
        lo, hi = self.tree_radius_range
        if lo > hi or lo < 0:
            raise WorldSpecError("tree_radius_range must satisfy 0 <= min <= max")
        if self.density_patches is not None:
            for rect, dens in self.density_patches:
                x0, y0, x1, y1 = rect
                if not (x1 > x0 and y1 > y0) or dens < 0:
                    raise WorldSpecError(f"bad density patch {rect!r}: {dens}")

    @property
    def shape(self) -> tuple[int, int]:
        # the tiny slack keeps e.g. 32/0.1 from rounding up to 321
        rows = math.ceil(self.height / self.resolution - 1e-9)
        cols = math.ceil(self.width / self.resolution - 1e-9)
        return rows, cols

    def regions(self) -> list[tuple[Rect, float]]:
        if self.density_patches:
            return [(tuple(r), float(d)) for r, d in self.density_patches]
        return [((0.0, 0.0, self.width, self.height), self.tree_density)]


def mixed_density_patches(width: float, height: float,
                          densities: Sequence[float] = (0.1, 0.15, 0.2, 0.15)):
    """Quadrant layout (SW, SE, NW, NE) for a multi-density forest."""
    hx, hy = width / 2.0, height / 2.0
    rects = [(0.0, 0.0, hx, hy), (hx, 0.0, width, hy),
             (0.0, hy, hx, height), (hx, hy, width, height)]
    return tuple(zip(rects, (float(d) for d in densities)))


@dataclass(frozen=True, eq=False)
class GroundTruthGrid:
    occupied: np.ndarray  # bool [rows, cols]
    spec: WorldSpec
    tree_centers: np.ndarray = field(repr=False)
    tree_radii: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupied.shape

    @property
    def resolution(self) -> float:
        return self.spec.resolution

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        res = self.spec.resolution
        return int(math.floor(y / res)), int(math.floor(x / res))

    def cell_center(self, r: int, c: int) -> tuple[float, float]:
        res = self.spec.resolution
        return (c + 0.5) * res, (r + 0.5) * res

    def in_bounds(self, r: int, c: int) -> bool:
        rows, cols = self.shape
        return 0 <= r < rows and 0 <= c < cols

    def is_free_at(self, x: float, y: float) -> bool:
        r, c = self.cell_of(x, y)
        return self.in_bounds(r, c) and not self.occupied[r, c]

    def occupied_fraction(self) -> float:
        return float(self.occupied.mean())


def _clearing_cells(spec: WorldSpec) -> np.ndarray:
    rows, cols = spec.shape
    if spec.spawn_clearing is None:
        return np.zeros((0, 2), dtype=int)
    cx, cy, rad = spec.spawn_clearing
    res = spec.resolution
    yy, xx = np.mgrid[0:rows, 0:cols]
    d = np.hypot((xx + 0.5) * res - cx, (yy + 0.5) * res - cy)
    return np.argwhere(d <= rad)


def _disc_hits_cells(x, y, radius, cells_xy, res) -> bool:
    # distance from disc center to each protected cell's square
    if len(cells_xy) == 0:
        return False
    half = res / 2.0
    dx = np.maximum(np.abs(cells_xy[:, 0] - x) - half, 0.0)
    dy = np.maximum(np.abs(cells_xy[:, 1] - y) - half, 0.0)
    return bool(np.any(dx * dx + dy * dy < radius * radius))


def _rasterize(occ: np.ndarray, x: float, y: float, radius: float, res: float):
    rows, cols = occ.shape
    r0 = max(int(math.floor((y - radius) / res)), 0)
    r1 = min(int(math.floor((y + radius) / res)), rows - 1)
    c0 = max(int(math.floor((x - radius) / res)), 0)
    c1 = min(int(math.floor((x + radius) / res)), cols - 1)
    if r0 <= r1 and c0 <= c1:
        yy, xx = np.mgrid[r0:r1 + 1, c0:c1 + 1]
        inside = np.hypot((xx + 0.5) * res - x, (yy + 0.5) * res - y) <= radius
        occ[r0:r1 + 1, c0:c1 + 1] |= inside
    # the cell holding the trunk is always blocked, so thin trees never vanish
    rc, cc = int(math.floor(y / res)), int(math.floor(x / res))
    if 0 <= rc < rows and 0 <= cc < cols:
        occ[rc, cc] = True


def generate_world(spec: WorldSpec) -> GroundTruthGrid:
    """Scatter trees per density region and rasterize them.

    Tree count per region is ``round(density * area)``. Centers are drawn
    uniformly; a draw whose disc would touch the spawn clearing is rejected
    and redrawn, up to ``MAX_TREE_ATTEMPTS`` times per tree.
    """
    rng = np.random.default_rng(spec.seed)
    res = spec.resolution
    occ = np.zeros(spec.shape, dtype=bool)
    protected = _clearing_cells(spec)
    protected_xy = (protected[:, ::-1] + 0.5) * res
    lo, hi = spec.tree_radius_range

    centers, radii = [], []
    for (x0, y0, x1, y1), density in spec.regions():
        n_trees = int(round(density * (x1 - x0) * (y1 - y0)))
        for _ in range(n_trees):
            for _attempt in range(MAX_TREE_ATTEMPTS):
                x = rng.uniform(x0, x1)
                y = rng.uniform(y0, y1)
                rad = rng.uniform(lo, hi)
                if not _disc_hits_cells(x, y, max(rad, res / 2.0), protected_xy, res):
                    break
            else:
                raise UnsatisfiableDensityError(
                    f"could not place a tree in region {(x0, y0, x1, y1)} "
                    f"after {MAX_TREE_ATTEMPTS} attempts")
            centers.append((x, y))
            radii.append(rad)
            _rasterize(occ, x, y, rad, res)

    occ.setflags(write=False)
    return GroundTruthGrid(occ, spec,
                           np.asarray(centers, dtype=float).reshape(-1, 2),
                           np.asarray(radii, dtype=float))


def expected_occupied_fraction(spec: WorldSpec) -> float:
    """Analytic area fraction covered by randomly placed (overlapping) discs."""
    lo, hi = spec.tree_radius_range
    mean_disc = math.pi * (lo * lo + lo * hi + hi * hi) / 3.0
    total = spec.width * spec.height
    covered = 0.0
    for (x0, y0, x1, y1), density in spec.regions():
        area = (x1 - x0) * (y1 - y0)
        n = round(density * area)
        covered += area * (1.0 - (1.0 - mean_disc / area) ** n)
    return covered / total


def spawn_poses(grid: GroundTruthGrid, n_r: int, seed: int,
                robot_radius: float = 0.25) -> list[Pose]:
    """Draw ``n_r`` distinct collision-free poses at cell centers.

    Candidates are Free cells inside the spawn clearing when the world has
    one, else every Free cell. Poses keep ``2 * robot_radius`` clearance.
    """
    if n_r < 1:
        raise SpawnError("n_r must be >= 1")
    rng = np.random.default_rng(seed)
    free = ~grid.occupied
    if grid.spec.spawn_clearing is not None:
        mask = np.zeros_like(free)
        cells = _clearing_cells(grid.spec)
        mask[cells[:, 0], cells[:, 1]] = True
        free = free & mask
    candidates = np.argwhere(free)
    if len(candidates) < n_r:
        raise SpawnError(f"{n_r} robots requested but only {len(candidates)} free cells")

    res = grid.resolution
    chosen: list[np.ndarray] = []
    for idx in rng.permutation(len(candidates)):
        r, c = candidates[idx]
        xy = np.array([(c + 0.5) * res, (r + 0.5) * res])
        if all(np.hypot(*(xy - other)) >= 2.0 * robot_radius for other in chosen):
            chosen.append(xy)
            if len(chosen) == n_r:
                break
    if len(chosen) < n_r:
        raise SpawnError(f"only {len(chosen)} of {n_r} poses satisfy the clearance")
    yaws = rng.uniform(-math.pi, math.pi, size=n_r)
    return [Pose(float(x), float(y), wrap_angle(float(t))) for (x, y), t in zip(chosen, yaws)]


EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def reachable_free(grid: GroundTruthGrid, starts: Sequence[Pose]) -> np.ndarray:
    """Free cells 8-connected to any start pose."""
    labels, _ = ndimage.label(~grid.occupied, structure=EIGHT_CONNECTED)
    keep = {labels[grid.cell_of(p.x, p.y)] for p in starts} - {0}
    return np.isin(labels, list(keep))


def write_pgm(path, cells: np.ndarray, values: dict) -> None:
    """Binary PGM (P5), north-up. ``values`` maps cell codes to gray levels."""
    img = np.zeros(cells.shape, dtype=np.uint8)
    for code, gray in values.items():
        img[cells == code] = gray
    img = img[::-1]
    rows, cols = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def export_world_pgm(grid: GroundTruthGrid, path) -> None:
    write_pgm(path, grid.occupied.astype(np.int8), {0: 255, 1: 0})
