"""Wireless environmental information: taxonomy, quantity accounting, link features."""

from __future__ import annotations

import csv
import enum
from dataclasses import astuple, dataclass, fields, replace
from typing import Iterable, Sequence

import numpy as np

from .channel import Cir, PathKind, relative_azimuth, segments_hit_boxes
from .scene import MobilityKind, Scatterer, Scene


class WeiCategory(str, enum.Enum):
    STATIC = "Static"
    DYNAMIC = "Dynamic"
    RANDOM = "Random"


class WeiKind(str, enum.Enum):
    POSITION = "Position"
    SIZE = "Size"
    MATERIAL = "Material"
    VELOCITY = "Velocity"
    BLOCKAGE_FLAG = "BlockageFlag"
    REFLECTOR_BEARING = "ReflectorBearing"


@dataclass(frozen=True)
class WeiItem:
    category: WeiCategory
    kind: WeiKind
    dimension_d: int
    quantity_theta: float
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != self.dimension_d:
            raise ValueError(f"{self.kind.value} item has {len(self.values)} values, "
                             f"expected {self.dimension_d}")
        if self.dimension_d < 0 or self.quantity_theta < 0:
            raise ValueError("dimension and quantity must be non-negative")


@dataclass(frozen=True)
class ComplexAccount:
    """Building complex of M buildings, N scatterers each, K surfaces per scatterer."""

    M: int
    N: int
    K: int
    xi_per_surface: tuple[float, ...]

    def __post_init__(self):
        if min(self.M, self.N, self.K) < 0:
            raise ValueError("M, N and K must be non-negative")


_CATEGORY = {
    MobilityKind.STATIC: WeiCategory.STATIC,
    MobilityKind.DYNAMIC: WeiCategory.DYNAMIC,
    MobilityKind.RANDOM: WeiCategory.RANDOM,
}


def classify(scatterer: Scatterer) -> WeiCategory:
    return _CATEGORY[scatterer.mobility.kind]


def compute_wei_quantity(item: WeiItem) -> float:
    """xi = d * theta."""
    return item.dimension_d * item.quantity_theta


def total_quantity(items: Iterable[WeiItem]) -> float:
    return float(sum(compute_wei_quantity(i) for i in items))


def account_complex(account: ComplexAccount) -> float:
    return account.M * account.N * account.K * float(sum(account.xi_per_surface))


def scatterer_items(s: Scatterer, theta: float = 1.0) -> list[WeiItem]:
    """Record what is known about one scatterer as WEI items."""
    cat = classify(s)
    centre = tuple((a + b) / 2 for a, b in zip(s.box_min, s.box_max))
    items = [
        WeiItem(cat, WeiKind.POSITION, 3, theta, centre),
        WeiItem(cat, WeiKind.SIZE, 3, theta, tuple(s.size)),
        WeiItem(cat, WeiKind.MATERIAL, 1, theta, (s.material.reflection_amplitude,)),
    ]
    if cat is WeiCategory.DYNAMIC:
        items.append(WeiItem(cat, WeiKind.VELOCITY, 3, theta, tuple(s.mobility.velocity)))
    return items


def scene_items(scene: Scene, theta: float = 1.0) -> list[WeiItem]:
    return [it for s in scene.scatterers for it in scatterer_items(s, theta)]


def scene_account(scene: Scene, theta: float = 1.0) -> dict[int, ComplexAccount]:
    """Per building group: one scatterer per building, six surfaces each.

    Every surface carries the position/size/material items of its box.
    """
    groups: dict[int, list[Scatterer]] = {}
    for s in scene.scatterers:
        if s.group_id >= 0:
            groups.setdefault(s.group_id, []).append(s)
    out = {}
    for g, members in sorted(groups.items()):
        xi = tuple(compute_wei_quantity(i) for i in scatterer_items(members[0], theta))
        out[g] = ComplexAccount(len(members), 1, members[0].surface_count, xi)
    return out


# -- link features ---------------------------------------------------------------

@dataclass(frozen=True)
class WeiFeatureVector:
    d2d: float
    d3d: float
    los_blocked: int
    n_first_order_reflectors: int
    nearest_blocker_height_margin: float
    strongest_reflector_bearing: float
    dynamic_blocker_flag: int
    rx_bearing: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


FEATURE_COLUMNS = tuple(f.name for f in fields(WeiFeatureVector))


class LinkMismatch(ValueError):
    """Traced paths belong to a different Tx/Rx pair than requested."""


def _blockers(scene: Scene, rx) -> list[tuple[Scatterer, float]]:
    """Scatterers crossing the Tx-Rx segment with the ray height at entry."""
    active = sorted(scene.active, key=lambda s: s.id)
    if not active:
        return []
    tx = np.asarray(scene.tx.position, dtype=float)
    rx = np.asarray(rx, dtype=float)
    boxes = np.array([[s.box_min, s.box_max] for s in active])
    hit = segments_hit_boxes([tx], [rx], boxes)[0]
    out = []
    d = rx - tx
    for j in np.nonzero(hit)[0]:
        lo, hi = boxes[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            t0, t1 = (lo - tx) / d, (hi - tx) / d
        tlo = np.where(d == 0, -np.inf, np.minimum(t0, t1))
        t_entry = max(0.0, float(tlo.max()))
        out.append((active[j], float(tx[2] + t_entry * d[2])))
    return out


def extract_link_features(scene: Scene, rx_point, traced_paths: Cir) -> WeiFeatureVector:
    tx = np.asarray(scene.tx.position, dtype=float)
    rx = np.asarray(rx_point, dtype=float)
    if traced_paths.tx is not None and not np.allclose(traced_paths.tx, tx, rtol=0, atol=1e-9):
        raise LinkMismatch("paths were traced from a different Tx")
    if traced_paths.rx is not None and not np.allclose(traced_paths.rx, rx, rtol=0, atol=1e-9):
        raise LinkMismatch("paths were traced to a different Rx")
    d2d = float(np.hypot(*(rx[:2] - tx[:2])))
    d3d = float(np.linalg.norm(rx - tx))
    blockers = _blockers(scene, rx)
    if bool(blockers) == traced_paths.has_direct:
        raise LinkMismatch("direct-path presence disagrees with the scene geometry")
    margin, dyn = 0.0, 0
    if blockers:
        # the blocker whose entry point lies closest to the Rx
        dist = [np.linalg.norm(rx[:2] - np.clip(rx[:2], np.asarray(s.box_min[:2]), np.asarray(s.box_max[:2])))
                for s, _ in blockers]
        s, z_entry = blockers[int(np.argmin(dist))]
        margin = s.box_max[2] - z_entry
        dyn = int(classify(s) is WeiCategory.DYNAMIC)
    walls = [p for p in traced_paths.paths if p.kind is PathKind.WALL]
    bearing = 0.0
    if walls:
        bearing = max(walls, key=lambda p: abs(p.gain)).aod_azimuth
    return WeiFeatureVector(
        d2d=d2d, d3d=d3d, los_blocked=int(bool(blockers)),
        n_first_order_reflectors=len({p.scatterer_id for p in walls}),
        nearest_blocker_height_margin=float(margin),
        strongest_reflector_bearing=float(bearing),
        dynamic_blocker_flag=dyn,
        rx_bearing=float(relative_azimuth(scene.tx, rx)[0]),
    )


def features_matrix(feats: Sequence[WeiFeatureVector]) -> np.ndarray:
    return np.array([f.as_array() for f in feats], dtype=float).reshape(-1, len(FEATURE_COLUMNS))


def write_features_csv(path, feats: Sequence[WeiFeatureVector], header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(FEATURE_COLUMNS)
        for v in feats:
            w.writerow([repr(x) if isinstance(x, float) else x for x in astuple(v)])


# -- preprocessing -----------------------------------------------------------------

MIN_FEATURE_SIZE = 0.5


def preprocess(scene: Scene, min_size: float = MIN_FEATURE_SIZE) -> Scene:
    """Drop sub-resolution clutter: boxes whose every side is below ``min_size``."""
    kept = tuple(s for s in scene.scatterers if not all(e < min_size for e in s.size))
    if len(kept) == len(scene.scatterers):
        return scene
    return replace(scene, scatterers=kept)

