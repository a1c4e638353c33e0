"""Scenario configuration: a YAML document validated into :class:`ScenarioConfig`.

Minimal document::

    world: {width: 32, height: 32, tree_density: 0.1}
    n_r: 4

Everything else falls back to the defaults below. ``tree_density`` also
accepts ``mixed`` (quadrant patches), and ``comm_range`` accepts ``inf``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .mapping import SensorModel
from .policy import BASELINE, FP, FamePolicyParams, FroshePolicyParams
from .worldgen import WorldSpec, mixed_density_patches

POLICIES = ("fame", "froshe")
CLUSTERING = ("dpgmm", "kmeans_hd")


class ConfigError(ValueError):
    """Validation failure; ``errors`` lists ``field: message`` strings."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ScenarioConfig:
    world: WorldSpec
    sensor: SensorModel = SensorModel()
    n_r: int = 1
    comm_range: float = math.inf
    policy: str = "fame"
    mode: str = FP
    fame: FamePolicyParams = FamePolicyParams()
    froshe: FroshePolicyParams = FroshePolicyParams()
    froshe_clusters: int = 8
    clustering: str = "dpgmm"
    kmeans_k: Optional[int] = None
    seeds: tuple[int, ...] = tuple(range(10))
    tick_budget: int = 600
    coverage_threshold: float = 0.95
    speed: float = 1.0
    redecide_period: int = 5
    output_dir: Optional[str] = None
    density_label: str = ""

    @property
    def policy_label(self) -> str:
        return self.policy if self.mode == BASELINE else f"{self.policy}+fp"

    @property
    def density(self) -> str:
        if self.density_label:
            return self.density_label
        return "mixed" if self.world.density_patches else f"{self.world.tree_density:g}"

    def config_hash(self) -> str:
        """Digest of everything that shapes a run except the seed list and output path."""
        doc = to_document(self)
        doc.pop("seeds", None)
        doc.pop("output_dir", None)
        blob = json.dumps(doc, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def with_seed_override(self, seeds) -> "ScenarioConfig":
        return replace(self, seeds=tuple(int(s) for s in seeds))


_TOP_KEYS = {"world", "sensor", "n_r", "comm_range", "policy", "clustering", "seeds",
             "tick_budget", "coverage_threshold", "speed", "redecide_period", "output_dir"}
_WORLD_KEYS = {"width", "height", "resolution", "tree_density", "tree_radius_range",
               "density_patches", "spawn_clearing"}
_SENSOR_KEYS = {"range", "fov_deg", "ray_count"}
_POLICY_KEYS = {"name", "mode", "params", "froshe_clusters"}
_CLUSTER_KEYS = {"mode", "kmeans_k"}


def _number(v, name, errors, positive=False, allow_inf=False):
    if isinstance(v, str) and allow_inf and v.strip().lower() in ("inf", "infinity"):
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errors.append(f"{name}: expected a number, got {v!r}")
        return None
    v = float(v)
    if math.isinf(v) and not allow_inf:
        errors.append(f"{name}: must be finite")
        return None
    if positive and not v > 0:
        errors.append(f"{name}: must be > 0")
        return None
    return v


def _unknown(section: dict, allowed: set, prefix: str, errors):
    for key in sorted(set(section) - allowed):
        errors.append(f"{prefix}{key}: unknown key")


def from_document(doc: Any) -> ScenarioConfig:
    errors: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["<root>: expected a mapping"])
    _unknown(doc, _TOP_KEYS, "", errors)

    w = doc.get("world")
    if not isinstance(w, dict):
        errors.append("world: required mapping")
        w = {}
    _unknown(w, _WORLD_KEYS, "world.", errors)
    width = _number(w.get("width", 32.0), "world.width", errors, positive=True)
    height = _number(w.get("height", 32.0), "world.height", errors, positive=True)
    res = _number(w.get("resolution", 0.5), "world.resolution", errors, positive=True)
    dens_raw = w.get("tree_density", 0.1)
    patches = None
    label = ""
    if isinstance(dens_raw, str) and dens_raw.strip().lower() == "mixed":
        density = 0.0
        label = "mixed"
        if width and height:
            patches = mixed_density_patches(width, height)
    else:
        density = _number(dens_raw, "world.tree_density", errors)
        if density is not None and density < 0:
            errors.append("world.tree_density: must be >= 0")
    if "density_patches" in w:
        try:
            patches = tuple((tuple(float(v) for v in p["rect"]), float(p["density"]))
                            for p in w["density_patches"])
        except (TypeError, KeyError, ValueError):
            errors.append("world.density_patches: expected a list of {rect: [x0,y0,x1,y1], density}")
    radius = w.get("tree_radius_range", [0.2, 0.5])
    if not (isinstance(radius, (list, tuple)) and len(radius) == 2):
        errors.append("world.tree_radius_range: expected [min, max]")
        radius = (0.2, 0.5)
    clearing = w.get("spawn_clearing", [2.0, 2.0, 2.0])
    if clearing is not None and not (isinstance(clearing, (list, tuple)) and len(clearing) == 3):
        errors.append("world.spawn_clearing: expected [x, y, radius] or null")
        clearing = None

    s = doc.get("sensor", {}) or {}
    if not isinstance(s, dict):
        errors.append("sensor: expected a mapping")
        s = {}
    _unknown(s, _SENSOR_KEYS, "sensor.", errors)
    rng_ = _number(s.get("range", 5.0), "sensor.range", errors, positive=True)
    fov = _number(s.get("fov_deg", 360.0), "sensor.fov_deg", errors, positive=True)
    if fov is not None and fov > 360.0:
        errors.append("sensor.fov_deg: must be <= 360")
    rays = s.get("ray_count")
    if rays is not None and (not isinstance(rays, int) or rays < 8):
        errors.append("sensor.ray_count: expected an integer >= 8")

    n_r = doc.get("n_r")
    if not isinstance(n_r, int) or isinstance(n_r, bool) or n_r < 1:
        errors.append(f"n_r: required integer >= 1, got {n_r!r}")
    comm = _number(doc.get("comm_range", "inf"), "comm_range", errors, positive=True,
                   allow_inf=True)

    p = doc.get("policy", {}) or {}
    if isinstance(p, str):
        p = {"name": p}
    if not isinstance(p, dict):
        errors.append("policy: expected a mapping or a policy name")
        p = {}
    _unknown(p, _POLICY_KEYS, "policy.", errors)
    name = p.get("name", "fame")
    if name not in POLICIES:
        errors.append(f"policy.name: expected one of {POLICIES}, got {name!r}")
    mode = p.get("mode", FP)
    if mode not in (BASELINE, FP):
        errors.append(f"policy.mode: expected 'baseline' or 'fp', got {mode!r}")
    params = p.get("params", {}) or {}
    fame, froshe = FamePolicyParams(), FroshePolicyParams()
    try:
        if name == "fame":
            fame = FamePolicyParams(**params)
        elif name == "froshe":
            froshe = FroshePolicyParams(**params)
    except TypeError as exc:
        errors.append(f"policy.params: {exc}")
    except ValueError as exc:
        errors.append(f"policy.params: {exc}")
    fclusters = p.get("froshe_clusters", 8)
    if not isinstance(fclusters, int) or fclusters < 1:
        errors.append("policy.froshe_clusters: expected an integer >= 1")

    c = doc.get("clustering", {}) or {}
    if isinstance(c, str):
        c = {"mode": c}
    _unknown(c, _CLUSTER_KEYS, "clustering.", errors)
    cmode = c.get("mode", "dpgmm")
    if cmode not in CLUSTERING:
        errors.append(f"clustering.mode: expected one of {CLUSTERING}, got {cmode!r}")
    kk = c.get("kmeans_k")
    if kk is not None and (not isinstance(kk, int) or kk < 1):
        errors.append("clustering.kmeans_k: expected an integer >= 1")
    if cmode == "kmeans_hd" and kk is None:
        errors.append("clustering.kmeans_k: required for kmeans_hd")

    seeds = doc.get("seeds", list(range(10)))
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(x, int) for x in seeds):
        errors.append("seeds: expected a non-empty list of integers")
        seeds = [0]

    budget = doc.get("tick_budget", 600)
    if not isinstance(budget, int) or budget < 1:
        errors.append("tick_budget: expected an integer >= 1")
    thr = _number(doc.get("coverage_threshold", 0.95), "coverage_threshold", errors)
    if thr is not None and not 0 < thr <= 1:
        errors.append("coverage_threshold: must lie in (0, 1]")
    speed = _number(doc.get("speed", 1.0), "speed", errors, positive=True)
    period = doc.get("redecide_period", 5)
    if not isinstance(period, int) or period < 1:
        errors.append("redecide_period: expected an integer >= 1")
    out = doc.get("output_dir")
    if out is not None and not isinstance(out, str):
        errors.append("output_dir: expected a path string")

    world = None
    if not errors:
        try:
            world = WorldSpec(width=width, height=height, resolution=res,
                              tree_density=density or 0.0,
                              tree_radius_range=(float(radius[0]), float(radius[1])),
                              density_patches=patches,
                              spawn_clearing=None if clearing is None
                              else tuple(float(v) for v in clearing))
        except ValueError as exc:
            errors.append(f"world: {exc}")
    sensor = None
    if not errors:
        try:
            sensor = SensorModel(range=rng_, fov=math.radians(fov), ray_count=rays)
        except ValueError as exc:
            errors.append(f"sensor: {exc}")
    if errors:
        raise ConfigError(errors)

    return ScenarioConfig(
        world=world, sensor=sensor, n_r=n_r, comm_range=comm, policy=name, mode=mode,
        fame=fame, froshe=froshe, froshe_clusters=fclusters, clustering=cmode,
        kmeans_k=kk, seeds=tuple(seeds), tick_budget=budget, coverage_threshold=thr,
        speed=speed, redecide_period=period, output_dir=out, density_label=label)


def parse_config(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"{path}: no such file"])
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: parse error: {exc}"]) from exc
    return from_document(doc)


def to_document(cfg: ScenarioConfig) -> dict:
    w = cfg.world
    world = {"width": w.width, "height": w.height, "resolution": w.resolution,
             "tree_radius_range": list(w.tree_radius_range),
             "spawn_clearing": None if w.spawn_clearing is None else list(w.spawn_clearing)}
    if cfg.density_label == "mixed":
        world["tree_density"] = "mixed"
    else:
        world["tree_density"] = w.tree_density
        if w.density_patches:
            world["density_patches"] = [{"rect": list(r), "density": d}
                                        for r, d in w.density_patches]
    params = asdict(cfg.fame) if cfg.policy == "fame" else asdict(cfg.froshe)
    return {
        "world": world,
        "sensor": {"range": cfg.sensor.range, "fov_deg": math.degrees(cfg.sensor.fov),
                   "ray_count": cfg.sensor.ray_count},
        "n_r": cfg.n_r,
        "comm_range": "inf" if math.isinf(cfg.comm_range) else cfg.comm_range,
        "policy": {"name": cfg.policy, "mode": cfg.mode, "params": params,
                   "froshe_clusters": cfg.froshe_clusters},
        "clustering": {"mode": cfg.clustering, "kmeans_k": cfg.kmeans_k},
        "seeds": list(cfg.seeds),
        "tick_budget": cfg.tick_budget,
        "coverage_threshold": cfg.coverage_threshold,
        "speed": cfg.speed,
        "redecide_period": cfg.redecide_period,
        "output_dir": cfg.output_dir,
    }


# ----------------------------------------------------------------------------
# sweeps

SWEEP_AXES = {
    "density": ("world", "tree_density"),
    "n_r": (None, "n_r"),
    "comm_range": (None, "comm_range"),
    "policy": ("policy", "name"),
    "mode": ("policy", "mode"),
    "clustering": ("clustering", "mode"),
}


@dataclass(frozen=True)
class Sweep:
    base: dict
    axes: dict = field(default_factory=dict)

    def cells(self) -> list[ScenarioConfig]:
        """Cartesian product of the axes in declaration order; each cell shares ``seeds``."""
        combos: list[dict] = [{}]
        for axis, values in self.axes.items():
            combos = [dict(c, **{axis: v}) for c in combos for v in values]
        out = []
        for combo in combos:
            doc = copy.deepcopy(self.base)
            for axis, value in combo.items():
                section, key = SWEEP_AXES[axis]
                if section is None:
                    doc[key] = value
                else:
                    sub = doc.setdefault(section, {})
                    if isinstance(sub, str):
                        sub = doc[section] = {"name" if section == "policy" else "mode": sub}
                    sub[key] = value
            out.append(from_document(doc))
        return out


def parse_sweep(path: Union[str, Path]) -> Sweep:
    """A scenario document plus a ``sweep:`` mapping of axis -> list of values."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"{path}: no such file"])
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: parse error: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError(["<root>: expected a mapping"])
    axes = doc.pop("sweep", {}) or {}
    errors = [f"sweep.{a}: unknown axis (expected one of {sorted(SWEEP_AXES)})"
              for a in axes if a not in SWEEP_AXES]
    errors += [f"sweep.{a}: expected a non-empty list" for a, v in axes.items()
               if not isinstance(v, list) or not v]
    if errors:
        raise ConfigError(errors)
    sweep = Sweep(doc, dict(axes))
    sweep.cells()  # validate every cell up front
    return sweep
