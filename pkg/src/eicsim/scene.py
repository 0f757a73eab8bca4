"""Cube-simplified urban scenes: data model, generation, validation, time evolution.

A scene is a square street grid with four building blocks around a crossing,
a multi-lane main road along x with vehicles parked on one side, a transmitter
with a uniform linear array, and a grid of receiver points at street level.
All scene values are immutable; ``advance_time`` returns a new scene.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)


class Vec3(NamedTuple):
    x: float
    y: float
    z: float


class MaterialName(str, enum.Enum):
    CONCRETE = "Concrete"
    METAL = "Metal"
    GROUND = "Ground"


@dataclass(frozen=True)
class Material:
    name: MaterialName
    reflection_amplitude: float


CONCRETE = Material(MaterialName.CONCRETE, 0.6)
METAL = Material(MaterialName.METAL, 0.9)
GROUND = Material(MaterialName.GROUND, 0.7)
MATERIALS = {m.name: m for m in (CONCRETE, METAL, GROUND)}


class MobilityKind(str, enum.Enum):
    STATIC = "Static"
    DYNAMIC = "Dynamic"
    RANDOM = "Random"


@dataclass(frozen=True)
class Mobility:
    kind: MobilityKind = MobilityKind.STATIC
    velocity: Vec3 = Vec3(0.0, 0.0, 0.0)
    toggle_probability: float = 0.0

    @classmethod
    def static(cls) -> Mobility:
        return cls(MobilityKind.STATIC)

    @classmethod
    def dynamic(cls, velocity) -> Mobility:
        return cls(MobilityKind.DYNAMIC, velocity=Vec3(*map(float, velocity)))

    @classmethod
    def random(cls, toggle_probability: float) -> Mobility:
        return cls(MobilityKind.RANDOM, toggle_probability=float(toggle_probability))


@dataclass(frozen=True)
class Scatterer:
    id: int
    box_min: Vec3
    box_max: Vec3
    material: Material = CONCRETE
    mobility: Mobility = Mobility()
    group_id: int = -1
    surface_count: int = 6
    present: bool = True

    @property
    def size(self) -> Vec3:
        return Vec3(*(hi - lo for lo, hi in zip(self.box_min, self.box_max)))

    def contains(self, p) -> bool:
        """Closed-box containment."""
        return all(lo <= v <= hi for lo, v, hi in zip(self.box_min, p, self.box_max))

    def translated(self, offset) -> Scatterer:
        lo = Vec3(*(a + o for a, o in zip(self.box_min, offset)))
        hi = Vec3(*(a + o for a, o in zip(self.box_max, offset)))
        return replace(self, box_min=lo, box_max=hi)


@dataclass(frozen=True)
class TxSite:
    position: Vec3
    n_elements: int = 128
    element_spacing: float = 0.5
    boresight_azimuth: float = math.pi / 2
    per_element_power_dbm: float = -8.0

    @property
    def total_power_dbm(self) -> float:
        return self.per_element_power_dbm + 10.0 * math.log10(self.n_elements)


@dataclass(frozen=True)
class Scene:
    bounds: tuple[Vec3, Vec3]
    scatterers: tuple[Scatterer, ...]
    tx: TxSite
    rx_points: tuple[Vec3, ...]
    seed: int = 0

    @cached_property
    def active(self) -> tuple[Scatterer, ...]:
        return tuple(s for s in self.scatterers if s.present)

    @cached_property
    def box_array(self) -> np.ndarray:
        """(n_active, 2, 3) array of [box_min, box_max] for present scatterers."""
        if not self.active:
            return np.zeros((0, 2, 3))
        return np.array([[s.box_min, s.box_max] for s in self.active], dtype=float)

    @cached_property
    def rx_array(self) -> np.ndarray:
        return np.asarray(self.rx_points, dtype=float).reshape(-1, 3)

    def scatterer(self, sid: int) -> Scatterer:
        for s in self.scatterers:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def with_rx(self, rx_points) -> Scene:
        return replace(self, rx_points=tuple(Vec3(*map(float, p)) for p in rx_points))


class PlacementError(RuntimeError):
    """Scene generation could not place boxes clear of the Tx/Rx sites."""


@dataclass(frozen=True)
class SceneGenConfig:
    side: float = 200.0
    height: float = 100.0
    building_groups: int = 4
    buildings_per_group: int = 3
    building_height: tuple[float, float] = (10.0, 40.0)
    building_footprint: tuple[float, float] = (15.0, 40.0)
    road_center_y: float = 0.0
    cross_center_x: float = 0.0
    n_lanes: int = 4
    lane_width: float = 3.5
    sidewalk: float = 3.0
    vehicle_count: tuple[int, int] = (4, 8)
    vehicle_size: tuple[float, float, float] = (4.5, 1.8, 1.5)
    vehicle_speed: tuple[float, float] = (0.0, 15.0)
    n_random: int = 0
    random_toggle_probability: float = 0.2
    tx_position: tuple[float, float, float] = (-57.4, 27.0, 19.0)
    tx_elements: int = 128
    tx_power_dbm: float = -8.0
    rx_gap: float = 2.0
    rx_height: float = 2.0
    tx_clearance: float = 2.0
    # buildings may not block the Tx's view of the main-road centreline over this x-range
    tx_road_view: tuple[float, float] | None = (-60.0, 20.0)
    max_retries: int = 200

    @property
    def road_half_width(self) -> float:
        return self.n_lanes * self.lane_width / 2.0


def _rx_grid(cfg: SceneGenConfig) -> np.ndarray:
    half = cfg.side / 2.0
    ticks = np.arange(-half + cfg.rx_gap / 2.0, half, cfg.rx_gap)
    gx, gy = np.meshgrid(ticks, ticks, indexing="xy")
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, cfg.rx_height)])
    return pts


def _overlaps_2d(a_lo, a_hi, b_lo, b_hi, gap=0.0) -> bool:
    return not (a_hi[0] + gap <= b_lo[0] or b_hi[0] + gap <= a_lo[0]
                or a_hi[1] + gap <= b_lo[1] or b_hi[1] + gap <= a_lo[1])


def _block_regions(cfg: SceneGenConfig) -> list[tuple[float, float, float, float]]:
    """(x0, x1, y0, y1) of the building blocks, ordered by quadrant."""
    half = cfg.side / 2.0
    margin = cfg.road_half_width + cfg.sidewalk
    xs = [(-half + 1.0, cfg.cross_center_x - margin), (cfg.cross_center_x + margin, half - 1.0)]
    ys = [(cfg.road_center_y + margin, half - 1.0), (-half + 1.0, cfg.road_center_y - margin)]
    regions = [(x0, x1, y0, y1) for (y0, y1) in ys for (x0, x1) in xs]
    return regions[: cfg.building_groups]


def _hits_box(p0, targets: np.ndarray, lo, hi) -> bool:
    """Slab test of the segments p0 -> targets[i] against one closed box."""
    p0 = np.asarray(p0, dtype=float)
    d = targets - p0
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0, t1 = (lo - p0) / d, (hi - p0) / d
    par = d == 0
    inside = (p0 >= lo) & (p0 <= hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t0, t1))
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t0, t1))
    enter = np.maximum(tmin.max(axis=1), 0.0)
    leave = np.minimum(tmax.min(axis=1), 1.0)
    return bool(np.any(enter <= leave))


def generate_scene(config: SceneGenConfig | None = None, seed: int = 0) -> Scene:
    """Build a scene deterministically from ``(config, seed)``."""
    cfg = config or SceneGenConfig()
    if cfg.building_groups > 4:
        raise ValueError("at most four building blocks fit around one crossing")
    rng = np.random.default_rng(seed)
    half = cfg.side / 2.0
    bounds = (Vec3(-half, -half, 0.0), Vec3(half, half, cfg.height))
    tx = Vec3(*map(float, cfg.tx_position))
    road_view = None
    if cfg.tx_road_view is not None:
        xs = np.arange(cfg.tx_road_view[0], cfg.tx_road_view[1] + 1e-9, 5.0)
        road_view = np.column_stack([xs, np.full(len(xs), cfg.road_center_y), np.full(len(xs), cfg.rx_height)])

    scatterers: list[Scatterer] = []
    sid = 0
    for group, (x0, x1, y0, y1) in enumerate(_block_regions(cfg)):
        placed = 0
        for _ in range(cfg.max_retries):
            if placed == cfg.buildings_per_group:
                break
            fx, fy = rng.uniform(*cfg.building_footprint, size=2)
            fx, fy = min(fx, x1 - x0), min(fy, y1 - y0)
            h = rng.uniform(*cfg.building_height)
            bx = rng.uniform(x0, x1 - fx)
            by = rng.uniform(y0, y1 - fy)
            lo = Vec3(float(bx), float(by), 0.0)
            hi = Vec3(float(bx + fx), float(by + fy), float(h))
            if any(_overlaps_2d(lo, hi, s.box_min, s.box_max, gap=1.0) for s in scatterers):
                continue
            c = cfg.tx_clearance
            if (lo.x - c <= tx.x <= hi.x + c and lo.y - c <= tx.y <= hi.y + c
                    and tx.z <= hi.z + c):
                continue
            if road_view is not None and _hits_box(tx, road_view, lo, hi):
                continue
            scatterers.append(Scatterer(sid, lo, hi, CONCRETE, Mobility.static(), group_id=group))
            sid += 1
            placed += 1
        if placed < cfg.buildings_per_group:
            raise PlacementError(
                f"placed {placed}/{cfg.buildings_per_group} buildings in group {group} "
                f"after {cfg.max_retries} attempts")

    # vehicles occupy the lanes on the negative-y side of the main road
    lo_n, hi_n = int(cfg.vehicle_count[0]), int(cfg.vehicle_count[1])
    n_vehicles = int(rng.integers(lo_n, hi_n + 1)) if hi_n > 0 else 0
    vl, vw, vh = cfg.vehicle_size
    side_lanes = max(1, cfg.n_lanes // 2)
    vehicles: list[tuple[Vec3, Vec3]] = []
    attempts = 0
    while len(vehicles) < n_vehicles:
        attempts += 1
        if attempts > cfg.max_retries * max(1, n_vehicles):
            raise PlacementError(f"placed {len(vehicles)}/{n_vehicles} vehicles")
        lane = int(rng.integers(side_lanes))
        cy = cfg.road_center_y - (lane + 0.5) * cfg.lane_width
        cx = float(rng.uniform(-half + vl, half - vl))
        lo = Vec3(cx - vl / 2, cy - vw / 2, 0.0)
        hi = Vec3(cx + vl / 2, cy + vw / 2, vh)
        if any(_overlaps_2d(lo, hi, a, b, gap=2.0) for a, b in vehicles):
            continue
        vehicles.append((lo, hi))
    for lo, hi in vehicles:
        speed = float(rng.uniform(*cfg.vehicle_speed))
        scatterers.append(Scatterer(sid, lo, hi, METAL, Mobility.dynamic((speed, 0.0, 0.0))))
        sid += 1

    # small random-class clutter along the positive-y sidewalk
    for _ in range(cfg.n_random):
        cx = float(rng.uniform(-half + 2, half - 2))
        cy = cfg.road_center_y + cfg.road_half_width + cfg.sidewalk / 2
        lo, hi = Vec3(cx - 0.5, cy - 0.5, 0.0), Vec3(cx + 0.5, cy + 0.5, 1.8)
        scatterers.append(Scatterer(sid, lo, hi, CONCRETE,
                                    Mobility.random(cfg.random_toggle_probability)))
        sid += 1

    boxes = np.array([[s.box_min, s.box_max] for s in scatterers]).reshape(-1, 2, 3)
    pts = _rx_grid(cfg)
    if len(boxes):
        inside = np.any(np.all((pts[:, None, :] >= boxes[None, :, 0, :])
                               & (pts[:, None, :] <= boxes[None, :, 1, :]), axis=2), axis=1)
        pts = pts[~inside]
    txsite = TxSite(tx, n_elements=cfg.tx_elements, per_element_power_dbm=cfg.tx_power_dbm)
    return Scene(bounds, tuple(scatterers), txsite,
                 tuple(map(Vec3._make, pts.tolist())), int(seed))


def advance_time(scene: Scene, dt: float, rng: np.random.Generator | None = None) -> Scene:
    """Move Dynamic scatterers by ``velocity*dt`` and toggle Random ones.

    Random scatterers draw one uniform each, in id order, from ``rng``.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    lo_b, hi_b = scene.bounds
    out = []
    for s in scene.scatterers:
        kind = s.mobility.kind
        if kind is MobilityKind.DYNAMIC and dt > 0:
            off = [v * dt for v in s.mobility.velocity]
            moved = s.translated(off)
            shift = [0.0, 0.0, 0.0]
            for a in range(3):
                if moved.box_min[a] < lo_b[a]:
                    shift[a] = lo_b[a] - moved.box_min[a]
                elif moved.box_max[a] > hi_b[a]:
                    shift[a] = hi_b[a] - moved.box_max[a]
            if any(shift):
                logger.info("scatterer %d clamped to scene bounds by %s", s.id, shift)
                moved = moved.translated(shift)
            out.append(moved)
        elif kind is MobilityKind.RANDOM:
            if rng is None:
                raise ValueError("a generator is required to evolve Random scatterers")
            if rng.random() < s.mobility.toggle_probability:
                s = replace(s, present=not s.present)
            out.append(s)
        else:
            out.append(s)
    return replace(scene, scatterers=tuple(out))


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    scatterer_id: int | None = None


def validate_scene(scene: Scene) -> list[Violation]:
    v: list[Violation] = []
    lo_b, hi_b = scene.bounds
    finite = lambda p: all(math.isfinite(c) for c in p)  # noqa: E731
    if not (finite(lo_b) and finite(hi_b)) or any(a >= b for a, b in zip(lo_b, hi_b)):
        v.append(Violation("bounds", "scene bounds are not a finite, non-empty box"))
    tx = scene.tx
    if not finite(tx.position):
        v.append(Violation("tx", "Tx position is not finite"))
    if tx.n_elements < 1:
        v.append(Violation("tx", "Tx needs at least one element"))
    if not tx.element_spacing > 0:
        v.append(Violation("tx", "element spacing must be positive"))
    for s in scene.scatterers:
        if not (finite(s.box_min) and finite(s.box_max)):
            v.append(Violation("finite", f"scatterer {s.id} has non-finite corners", s.id))
            continue
        if any(a >= b for a, b in zip(s.box_min, s.box_max)):
            v.append(Violation("box_order", f"scatterer {s.id} has box_min >= box_max", s.id))
        if any(a < b for a, b in zip(s.box_min, lo_b)) or any(a > b for a, b in zip(s.box_max, hi_b)):
            v.append(Violation("bounds", f"scatterer {s.id} extends outside the scene", s.id))
        if s.surface_count != 6:
            v.append(Violation("surfaces", f"scatterer {s.id} is a cube with {s.surface_count} surfaces", s.id))
        if not 0.0 <= s.material.reflection_amplitude <= 1.0:
            v.append(Violation("material", f"scatterer {s.id} reflection amplitude outside [0, 1]", s.id))
        if not 0.0 <= s.mobility.toggle_probability <= 1.0:
            v.append(Violation("mobility", f"scatterer {s.id} toggle probability outside [0, 1]", s.id))
        if not finite(s.mobility.velocity):
            v.append(Violation("mobility", f"scatterer {s.id} velocity is not finite", s.id))
        if s.contains(tx.position):
            v.append(Violation("contains_tx", f"scatterer {s.id} contains the Tx", s.id))
    boxes = np.array([[s.box_min, s.box_max] for s in scene.scatterers]).reshape(-1, 2, 3)
    ids = [s.id for s in scene.scatterers]
    rx = scene.rx_array
    for i, p in enumerate(rx):
        if not np.all(np.isfinite(p)):
            v.append(Violation("rx", f"rx point {i} is not finite"))
            continue
        if np.any(p < lo_b) or np.any(p > hi_b):
            v.append(Violation("rx_bounds", f"rx point {i} lies outside the scene"))
        if p[2] <= 0:
            v.append(Violation("rx_height", f"rx point {i} has non-positive height"))
    if len(boxes) and len(rx):
        hit = np.all((rx[:, None, :] >= boxes[None, :, 0, :]) & (rx[:, None, :] <= boxes[None, :, 1, :]), axis=2)
        for i, j in zip(*np.nonzero(hit)):
            v.append(Violation("contains_rx", f"scatterer {ids[j]} contains rx point {i}", ids[j]))
    return v


# -- serialization ---------------------------------------------------------

SCHEMA_VERSION = 1


def scene_to_dict(scene: Scene) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": scene.seed,
        "bounds": {"min": list(scene.bounds[0]), "max": list(scene.bounds[1])},
        "tx": {
            "position": list(scene.tx.position),
            "n_elements": scene.tx.n_elements,
            "element_spacing": scene.tx.element_spacing,
            "boresight_azimuth": scene.tx.boresight_azimuth,
            "per_element_power_dbm": scene.tx.per_element_power_dbm,
        },
        "scatterers": [
            {
                "id": s.id,
                "box_min": list(s.box_min),
                "box_max": list(s.box_max),
                "material": {"name": s.material.name.value,
                             "reflection_amplitude": s.material.reflection_amplitude},
                "mobility": {"kind": s.mobility.kind.value,
                             "velocity": list(s.mobility.velocity),
                             "toggle_probability": s.mobility.toggle_probability},
                "group_id": s.group_id,
                "surface_count": s.surface_count,
                "present": s.present,
            }
            for s in scene.scatterers
        ],
        "rx_points": [list(p) for p in scene.rx_points],
    }


def scene_from_dict(d: dict) -> Scene:
    if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ValueError(f"unsupported scene schema version {d['schema_version']}")
    v3 = lambda xs: Vec3(*map(float, xs))  # noqa: E731
    t = d["tx"]
    tx = TxSite(v3(t["position"]), int(t["n_elements"]), float(t["element_spacing"]),
                float(t["boresight_azimuth"]), float(t["per_element_power_dbm"]))
    scs = []
    for s in d["scatterers"]:
        m, mob = s["material"], s["mobility"]
        scs.append(Scatterer(
            int(s["id"]), v3(s["box_min"]), v3(s["box_max"]),
            Material(MaterialName(m["name"]), float(m["reflection_amplitude"])),
            Mobility(MobilityKind(mob["kind"]), v3(mob["velocity"]), float(mob["toggle_probability"])),
            int(s["group_id"]), int(s["surface_count"]), bool(s.get("present", True)),
        ))
    return Scene((v3(d["bounds"]["min"]), v3(d["bounds"]["max"])), tuple(scs), tx,
                 tuple(v3(p) for p in d["rx_points"]), int(d["seed"]))


def dumps(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), sort_keys=True, separators=(",", ":"))


def loads(text: str) -> Scene:
    return scene_from_dict(json.loads(text))


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps(scene))


def load_scene(path) -> Scene:
    with open(path, encoding="utf-8") as f:
        return loads(f.read())
