"""Geometric channel engine and statistical baseline.

Tracing covers the direct ray, the ground bounce (image of the Tx in z=0) and
first-order specular reflections off the vertical faces of every box.  There is
no diffraction and no transmission, so points in deep shadow can end up with an
empty impulse response.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .scene import GROUND, Material, MobilityKind, Scene, TxSite, Vec3

C = 3.0e8  # propagation speed, m/s
POWER_FLOOR_DBM = -300.0


@dataclass(frozen=True)
class OfdmConfig:
    fc_hz: float = 6.775e9
    bandwidth_hz: float = 8.28e6
    scs_hz: float = 120e3
    n_symbols: int = 3

    def __post_init__(self):
        if min(self.fc_hz, self.bandwidth_hz, self.scs_hz) <= 0 or self.n_symbols < 1:
            raise ValueError("OFDM parameters must be positive")
        if self.n_subcarriers < 1:
            raise ValueError("bandwidth holds no subcarrier")

    @property
    def n_subcarriers(self) -> int:
        return int(math.floor(self.bandwidth_hz / self.scs_hz + 1e-9))

    @property
    def wavelength(self) -> float:
        return C / self.fc_hz

    @property
    def subcarrier_freqs(self) -> np.ndarray:
        k = np.arange(self.n_subcarriers)
        return self.fc_hz - self.bandwidth_hz / 2 + (k + 0.5) * self.scs_hz

    @property
    def symbol_times(self) -> np.ndarray:
        return np.arange(self.n_symbols) / self.scs_hz


class PathKind(str, enum.Enum):
    DIRECT = "Direct"
    GROUND = "GroundReflection"
    WALL = "WallReflection"


@dataclass(frozen=True)
class PathComponent:
    kind: PathKind
    delay: float
    gain: complex
    aod_azimuth: float
    doppler_hz: float = 0.0
    scatterer_id: int | None = None
    face_id: int | None = None
    bounce: Vec3 | None = None

    @property
    def length(self) -> float:
        return self.delay * C


@dataclass(frozen=True)
class Cir:
    paths: tuple[PathComponent, ...]
    tx: Vec3 | None = None
    rx: Vec3 | None = None

    def __post_init__(self):
        kinds = [p.kind for p in self.paths]
        if kinds.count(PathKind.DIRECT) > 1 or kinds.count(PathKind.GROUND) > 1:
            raise ValueError("a CIR holds at most one direct and one ground path")

    @property
    def has_direct(self) -> bool:
        return any(p.kind is PathKind.DIRECT for p in self.paths)

    def walls(self) -> list[PathComponent]:
        return [p for p in self.paths if p.kind is PathKind.WALL]


@dataclass(frozen=True)
class Cfr:
    h: np.ndarray  # (n_subcarriers, n_symbols, n_tx)

    @property
    def shape(self):
        return self.h.shape


# -- geometry ----------------------------------------------------------------

def segments_hit_boxes(p0, p1, boxes) -> np.ndarray:
    """Slab test of closed segments ``p0[i]->p1[i]`` against closed boxes.

    p0, p1 are (M, 3); boxes is (B, 2, 3).  Returns an (M, B) bool matrix.
    """
    p0 = np.asarray(p0, dtype=float).reshape(-1, 1, 3)
    p1 = np.asarray(p1, dtype=float).reshape(-1, 1, 3)
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 2, 3)
    lo, hi = boxes[None, :, 0, :], boxes[None, :, 1, :]
    d = p1 - p0
    flat = d == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo - p0) / d
        t1 = (hi - p0) / d
    inside = (p0 >= lo) & (p0 <= hi)
    tlo = np.where(flat, np.where(inside, -np.inf, np.inf), np.minimum(t0, t1))
    thi = np.where(flat, np.where(inside, np.inf, -np.inf), np.maximum(t0, t1))
    enter = np.maximum(tlo.max(axis=2), 0.0)
    leave = np.minimum(thi.min(axis=2), 1.0)
    return enter <= leave


def segment_intersects_box(p0, p1, box) -> bool:
    """True iff segment p0-p1 meets the closed box ``(box_min, box_max)``."""
    if tuple(p0) == tuple(p1):
        raise ValueError("degenerate segment")
    lo, hi = box
    return bool(segments_hit_boxes([p0], [p1], np.array([[lo, hi]]))[0, 0])


def points_in_boxes(pts, boxes) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 1, 3)
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 2, 3)
    return np.all((pts >= boxes[None, :, 0]) & (pts <= boxes[None, :, 1]), axis=2)


def relative_azimuth(tx: TxSite, target) -> np.ndarray:
    """Azimuth of ``target - tx`` measured from array broadside, wrapped to (-pi, pi]."""
    v = np.asarray(target, dtype=float).reshape(-1, 3) - np.asarray(tx.position)
    az = np.arctan2(v[:, 1], v[:, 0]) - tx.boresight_azimuth
    return np.angle(np.exp(1j * az))


# -- gains -------------------------------------------------------------------

def path_gain(path_length_m: float, fc_hz: float, reflection=None) -> complex:
    """Friis amplitude and carrier phase, times ``-amplitude`` per reflection.

    ``reflection`` is a Material, a sequence of Materials, or None.
    """
    if not path_length_m > 0:
        raise ValueError("path length must be positive")
    lam = C / fc_hz
    g = lam / (4 * math.pi * path_length_m) * np.exp(-2j * math.pi * path_length_m / lam)
    if reflection is None:
        events = ()
    elif isinstance(reflection, Material):
        events = (reflection,)
    else:
        events = tuple(reflection)
    for m in events:
        g *= -m.reflection_amplitude
    return complex(g)


def free_space_loss_db(path_length_m: float, fc_hz: float) -> float:
    return -20.0 * math.log10(abs(path_gain(path_length_m, fc_hz)))


# -- tracer ------------------------------------------------------------------

_KIND_ORDER = {PathKind.DIRECT: 0, PathKind.GROUND: 1, PathKind.WALL: 2}

# face_id -> (axis, 0 for min side / 1 for max side)
FACES = ((0, 0), (0, 1), (1, 0), (1, 1))


def trace_many(scene: Scene, rx_points, fc_hz: float = 6.775e9) -> list[Cir]:
    """Trace every Rx point against the scene; vectorized over points and faces."""
    rx = np.asarray(rx_points, dtype=float).reshape(-1, 3)
    P = len(rx)
    tx = np.asarray(scene.tx.position, dtype=float)
    lam = C / fc_hz
    active = sorted(scene.active, key=lambda s: s.id)
    boxes = np.array([[s.box_min, s.box_max] for s in active], dtype=float).reshape(-1, 2, 3)
    B = len(boxes)
    if P == 0:
        return []
    if B:
        inside = points_in_boxes(rx, boxes).any(axis=1)
        if inside.any():
            raise ValueError(f"rx point {rx[np.argmax(inside)].tolist()} lies inside a scatterer")

    def blocked(a, b, exclude=None):
        if B == 0 or len(a) == 0:
            return np.zeros(len(a), dtype=bool)
        out = np.zeros(len(a), dtype=bool)
        step = max(1, 400_000 // max(B, 1))
        for i in range(0, len(a), step):
            hits = segments_hit_boxes(a[i:i + step], b[i:i + step], boxes)
            if exclude is not None:
                hits[np.arange(hits.shape[0]), exclude[i:i + step]] = False
            out[i:i + step] = hits.any(axis=1)
        return out

    txs = np.broadcast_to(tx, rx.shape)
    direct_ok = ~blocked(txs, rx)

    # ground bounce through the image of the Tx in z = 0
    lo_b, hi_b = np.asarray(scene.bounds[0]), np.asarray(scene.bounds[1])
    ground_ok = np.zeros(P, dtype=bool)
    gpts = np.zeros_like(rx)
    if tx[2] > 0:
        timg = tx * np.array([1.0, 1.0, -1.0])
        s = tx[2] / (tx[2] + rx[:, 2])
        gpts = timg + s[:, None] * (rx - timg)
        gpts[:, 2] = 0.0
        in_b = np.all((gpts[:, :2] >= lo_b[:2]) & (gpts[:, :2] <= hi_b[:2]), axis=1)
        idx = np.nonzero(in_b)[0]
        ok = ~blocked(txs[idx], gpts[idx]) & ~blocked(gpts[idx], rx[idx])
        ground_ok[idx[ok]] = True

    # first-order wall reflections
    wall_hits: list[tuple[int, int, int, np.ndarray, np.ndarray]] = []
    if B:
        F = 4 * B
        f_box = np.repeat(np.arange(B), 4)
        f_face = np.tile(np.arange(4), B)
        f_axis = np.array([FACES[f][0] for f in f_face])
        f_side = np.array([FACES[f][1] for f in f_face])
        f_coord = boxes[f_box, f_side, f_axis]
        f_sign = np.where(f_side == 1, 1.0, -1.0)
        other = 1 - f_axis
        tx_out = f_sign * (tx[f_axis] - f_coord) > 0  # (F,)
        rx_a = rx[:, f_axis]  # (P, F)
        rx_out = f_sign * (rx_a - f_coord) > 0
        cand = rx_out & tx_out[None, :]
        timg_a = 2 * f_coord - tx[f_axis]  # (F,)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = (f_coord - timg_a) / (rx_a - timg_a)
        # Q components: along `other` axis and z
        tx_o = tx[other]
        q_o = tx_o + u * (rx[:, other] - tx_o)
        q_z = tx[2] + u * (rx[:, 2:3] - tx[2])
        olo, ohi = boxes[f_box, 0, other], boxes[f_box, 1, other]
        zlo, zhi = boxes[f_box, 0, 2], boxes[f_box, 1, 2]
        cand &= (q_o >= olo) & (q_o <= ohi) & (q_z >= zlo) & (q_z <= zhi)
        pi_, fi = np.nonzero(cand)
        if len(pi_):
            q = np.empty((len(pi_), 3))
            ax, ot = f_axis[fi], other[fi]
            q[np.arange(len(pi_)), ax] = f_coord[fi]
            q[np.arange(len(pi_)), ot] = q_o[pi_, fi]
            q[:, 2] = q_z[pi_, fi]
            excl = f_box[fi]
            ok = ~blocked(np.broadcast_to(tx, q.shape), q, excl) & ~blocked(q, rx[pi_], excl)
            for p, f, qq in zip(pi_[ok], fi[ok], q[ok]):
                wall_hits.append((int(p), int(f_box[f]), int(f_face[f]), qq, None))

    # assemble per-point path lists
    per_point: list[list[PathComponent]] = [[] for _ in range(P)]
    txv = Vec3(*map(float, tx))
    bearing = lambda pts: relative_azimuth(scene.tx, pts)  # noqa: E731
    d_idx = np.nonzero(direct_ok)[0]
    if len(d_idx):
        L = np.linalg.norm(rx[d_idx] - tx, axis=1)
        az = bearing(rx[d_idx])
        for p, l, a in zip(d_idx, L, az):
            per_point[p].append(PathComponent(PathKind.DIRECT, l / C, path_gain(l, fc_hz), float(a)))
    g_idx = np.nonzero(ground_ok)[0]
    if len(g_idx):
        timg = tx * np.array([1.0, 1.0, -1.0])
        L = np.linalg.norm(rx[g_idx] - timg, axis=1)
        az = bearing(gpts[g_idx])
        for p, l, a in zip(g_idx, L, az):
            per_point[p].append(PathComponent(
                PathKind.GROUND, l / C, path_gain(l, fc_hz, GROUND), float(a),
                bounce=Vec3(*map(float, gpts[p]))))
    for p, b, face, q, _ in wall_hits:
        s = active[b]
        axis, side = FACES[face]
        timg = tx.copy()
        timg[axis] = 2 * boxes[b, side, axis] - tx[axis]
        L = float(np.linalg.norm(rx[p] - timg))
        doppler = 0.0
        if s.mobility.kind is MobilityKind.DYNAMIC:
            v_a = s.mobility.velocity[axis]
            doppler = -(2.0 * v_a * (timg[axis] - rx[p, axis]) / L) / lam
        per_point[p].append(PathComponent(
            PathKind.WALL, L / C, path_gain(L, fc_hz, s.material), float(bearing(q)[0]),
            float(doppler), s.id, face, Vec3(*map(float, q))))
    out = []
    for p in range(P):
        paths = per_point[p]
        paths.sort(key=lambda c: (_KIND_ORDER[c.kind], -1 if c.scatterer_id is None else c.scatterer_id,
                                  -1 if c.face_id is None else c.face_id))
        out.append(Cir(tuple(paths), txv, Vec3(*map(float, rx[p]))))
    return out


def trace_paths(scene: Scene, rx_point, fc_hz: float = 6.775e9) -> Cir:
    return trace_many(scene, [rx_point], fc_hz)[0]


# -- frequency response --------------------------------------------------------

def cir_to_cfr(cir: Cir, ofdm: OfdmConfig, array: TxSite, n_elements: int | None = None) -> Cfr:
    """Synthesize h[k, s, n] over subcarriers, symbols and array elements.

    Path gains already carry the carrier phase, so the delay term uses the
    subcarrier offset from the carrier; the product is exp(-j2*pi*f_k*tau).
    """
    n_el = array.n_elements if n_elements is None else n_elements
    K, S = ofdm.n_subcarriers, ofdm.n_symbols
    if not cir.paths:
        return Cfr(np.zeros((K, S, n_el), dtype=complex))
    g = np.array([p.gain for p in cir.paths], dtype=complex)
    tau = np.array([p.delay for p in cir.paths])
    fd = np.array([p.doppler_hz for p in cir.paths])
    sin_aod = np.sin([p.aod_azimuth for p in cir.paths])
    df = ofdm.subcarrier_freqs - ofdm.fc_hz
    freq = np.exp(-2j * np.pi * np.outer(df, tau))  # (K, P)
    time = np.exp(2j * np.pi * np.outer(ofdm.symbol_times, fd))  # (S, P)
    n = np.arange(n_el)
    space = np.exp(2j * np.pi * array.element_spacing * np.outer(n, sin_aod))  # (N, P)
    h = np.einsum("p,kp,sp,np->ksn", g, freq, time, space)
    return Cfr(h)


def wideband_gain(cir: Cir, ofdm: OfdmConfig) -> float:
    """Mean |h|^2 over subcarriers and symbols at a single element."""
    if not cir.paths:
        return 0.0
    g = np.array([p.gain for p in cir.paths], dtype=complex)
    tau = np.array([p.delay for p in cir.paths])
    fd = np.array([p.doppler_hz for p in cir.paths])
    df = ofdm.subcarrier_freqs - ofdm.fc_hz
    ph = np.exp(-2j * np.pi * df[:, None, None] * tau) * np.exp(
        2j * np.pi * ofdm.symbol_times[None, :, None] * fd)
    h = (ph * g).sum(axis=2)
    return float(np.mean(np.abs(h) ** 2))


def path_loss_db(cir: Cir, ofdm: OfdmConfig) -> float:
    """Single-element wideband path loss; +inf when nothing reaches the Rx."""
    g = wideband_gain(cir, ofdm)
    return math.inf if g <= 0 else -10.0 * math.log10(g)


# -- statistical baseline ------------------------------------------------------

SHADOW_SIGMA_LOS_DB = 4.0
SHADOW_SIGMA_NLOS_DB = 6.0


def stat_path_loss(d2d, d3d, fc_ghz: float, h_ut_m, los, shadow_rng=None):
    """Empirical LoS/NLoS path loss in dB, optionally with log-normal shadowing.

    Accepts scalars or arrays; ``d2d`` is carried for interface symmetry.
    """
    d3d = np.asarray(d3d, dtype=float)
    if np.any(d3d < 1.0):
        raise ValueError("d3d must be at least 1 m")
    los = np.asarray(los, dtype=bool)
    h_ut = np.asarray(h_ut_m, dtype=float)
    pl_los = 28.0 + 22.0 * np.log10(d3d) + 20.0 * math.log10(fc_ghz)
    pl_nlos = 13.54 + 39.08 * np.log10(d3d) + 20.0 * math.log10(fc_ghz) - 0.6 * (h_ut - 1.5)
    pl = np.where(los, pl_los, np.maximum(pl_los, pl_nlos))
    if shadow_rng is not None:
        sigma = np.where(los, SHADOW_SIGMA_LOS_DB, SHADOW_SIGMA_NLOS_DB)
        pl = pl + shadow_rng.normal(size=pl.shape) * sigma
    return float(pl) if pl.ndim == 0 else pl


# -- link budget -----------------------------------------------------------------

def beam_gain(cfr: Cfr, weight) -> float:
    """Mean over subcarriers and symbols of |w^H h|^2."""
    w = np.asarray(weight, dtype=complex)
    y = cfr.h @ w.conj()
    return float(np.mean(np.abs(y) ** 2))


def received_power(cfr: Cfr, weight_vector, per_element_power_dbm: float) -> float:
    w = np.asarray(weight_vector, dtype=complex)
    if w.shape != (cfr.h.shape[2],):
        raise ValueError(f"weight length {w.shape} does not match {cfr.h.shape[2]} elements")
    if abs(np.linalg.norm(w) - 1.0) > 1e-9:
        raise ValueError("beam weights must be unit norm")
    g = beam_gain(cfr, w)
    if g <= 0:
        return POWER_FLOOR_DBM
    p_total = per_element_power_dbm + 10.0 * math.log10(len(w))
    return max(POWER_FLOOR_DBM, p_total + 10.0 * math.log10(g))
