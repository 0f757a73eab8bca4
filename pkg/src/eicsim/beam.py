"""DFT-style beam codebook, exhaustive best-beam search and geometric beam predictors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import POWER_FLOOR_DBM, Cfr
from .wei import WeiFeatureVector


@dataclass(frozen=True)
class BeamCodebook:
    weights: np.ndarray  # (n_beams, n_elements)
    beam_sin_grid: np.ndarray

    @property
    def n_beams(self) -> int:
        return self.weights.shape[0]


def build_codebook(n_beams: int = 32, n_elements: int = 128, spacing: float = 0.5) -> BeamCodebook:
    """Beams uniform in sin-space, ``sin(theta_m) = (m - n_beams/2) / (n_beams/2)``."""
    if n_beams > 2 * n_elements:
        raise ValueError("more beams than the array can resolve")
    half = n_beams / 2
    grid = (np.arange(n_beams) - half) / half
    n = np.arange(n_elements)
    w = np.exp(2j * np.pi * spacing * np.outer(grid, n)) / math.sqrt(n_elements)
    return BeamCodebook(w, grid)


def beam_gains(cfr: Cfr, codebook: BeamCodebook) -> np.ndarray:
    """Mean |w^H h|^2 over subcarriers and symbols, per beam."""
    y = cfr.h @ codebook.weights.conj().T  # (K, S, n_beams)
    return np.mean(np.abs(y) ** 2, axis=(0, 1))


def beam_powers(cfr: Cfr, codebook: BeamCodebook, tx_power_dbm: float) -> np.ndarray:
    """Received power in dBm for every beam; same link budget as ``received_power``."""
    if cfr.h.shape[2] != codebook.weights.shape[1]:
        raise ValueError("channel and codebook disagree on the element count")
    g = beam_gains(cfr, codebook)
    p_total = tx_power_dbm + 10.0 * math.log10(codebook.weights.shape[1])
    with np.errstate(divide="ignore"):
        p = p_total + 10.0 * np.log10(g)
    return np.maximum(np.where(g > 0, p, POWER_FLOOR_DBM), POWER_FLOOR_DBM)


def best_beam(cfr: Cfr, codebook: BeamCodebook, tx_power_dbm: float) -> tuple[int, float]:
    p = beam_powers(cfr, codebook, tx_power_dbm)
    i = int(np.argmax(p))  # first maximum, i.e. lowest index on ties
    return i, float(p[i])


def nearest_beam(sin_value: float, codebook: BeamCodebook) -> int:
    d = np.abs(codebook.beam_sin_grid - sin_value)
    return int(np.flatnonzero(d <= d.min() + 1e-12)[0])


def predict_beam(feature: WeiFeatureVector, codebook: BeamCodebook, use_wei: bool) -> int:
    """Steer toward the Rx, or toward the strongest reflector when WEI says LoS is blocked."""
    bearing = feature.rx_bearing
    if use_wei and feature.los_blocked:
        bearing = feature.strongest_reflector_bearing
    return nearest_beam(math.sin(bearing), codebook)


def truth_ranking(powers: Sequence[float]) -> np.ndarray:
    """Beam indices by descending power, lower index first on ties."""
    p = np.asarray(powers, dtype=float)
    return np.lexsort((np.arange(len(p)), -p))


def rank_of(pred: int, powers: Sequence[float]) -> int:
    """1-based position of ``pred`` in the truth ranking."""
    return int(np.flatnonzero(truth_ranking(powers) == pred)[0]) + 1


def topk_accuracy(predicted: Sequence[int], truth_powers: Sequence[Sequence[float]], k: int) -> float:
    if len(predicted) != len(truth_powers):
        raise ValueError("predictions and truth differ in length")
    if len(predicted) == 0:
        raise ValueError("no samples")
    n_beams = len(truth_powers[0])
    if not 1 <= k <= n_beams:
        raise ValueError(f"k must lie in [1, {n_beams}]")
    hits = sum(pred in truth_ranking(p)[:k] for pred, p in zip(predicted, truth_powers))
    return hits / len(predicted)

