"""Channel prediction tiers and their metrics.

Three path-loss predictors of increasing environment awareness:

* ``StatModel``: closed-form LoS/NLoS formula, no training data.
* ``SimpleFeature``: least-squares fit of ``a + b*log10(d3d)``.
* ``WeiRegressor``: k-nearest-neighbour regression over standardized link features.

Small-scale prediction reconstructs a full-band frequency response from sparse
pilots, either with a delay basis taken from the scene geometry or by plain
linear interpolation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import Cfr, OfdmConfig, stat_path_loss
from .wei import WeiFeatureVector, features_matrix


class Tier(str, enum.Enum):
    STAT = "StatModel"
    SIMPLE = "SimpleFeature"
    WEI = "WeiRegressor"


@dataclass(frozen=True)
class Hyper:
    k: int = 5
    fc_ghz: float = 6.775
    h_ut_m: float = 2.0


@dataclass(frozen=True)
class Dataset:
    features: tuple[WeiFeatureVector, ...]
    targets: np.ndarray

    def __post_init__(self):
        if len(self.features) != len(self.targets):
            raise ValueError("features and targets differ in length")
        if len(self.features) == 0:
            raise ValueError("empty dataset")

    @property
    def X(self) -> np.ndarray:
        return features_matrix(self.features)

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=int)
        return Dataset(tuple(self.features[i] for i in idx), np.asarray(self.targets)[idx])


def train_test_split(n: int, seed: int, train_fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle of ``range(n)``; both parts are non-empty when n >= 2."""
    if n < 2:
        raise ValueError("need at least two rows to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(n - 1, max(1, int(round(train_fraction * n))))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


# -- models ---------------------------------------------------------------------

@dataclass(frozen=True)
class StatModel:
    fc_ghz: float
    h_ut_m: float
    tier: Tier = Tier.STAT

    def predict(self, X: np.ndarray) -> np.ndarray:
        d3d = np.maximum(X[:, 1], 1.0)
        los = X[:, 2] < 0.5
        return np.asarray(stat_path_loss(X[:, 0], d3d, self.fc_ghz, self.h_ut_m, los), dtype=float)


@dataclass(frozen=True)
class SimpleFeatureModel:
    a: float
    b: float
    tier: Tier = Tier.SIMPLE

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.a + self.b * np.log10(np.maximum(X[:, 1], 1e-9))


@dataclass(frozen=True)
class WeiRegressor:
    X: np.ndarray  # standardized training features
    y: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    k: int
    tier: Tier = Tier.WEI

    def predict(self, X: np.ndarray, chunk: int = 2048) -> np.ndarray:
        Z = (np.asarray(X, dtype=float) - self.mean) / self.scale
        out = np.empty(len(Z))
        for i in range(0, len(Z), chunk):
            out[i:i + chunk] = self._predict_block(Z[i:i + chunk])
        return out

    def _predict_block(self, Z: np.ndarray) -> np.ndarray:
        d2 = (np.sum(Z ** 2, axis=1)[:, None] - 2 * Z @ self.X.T
              + np.sum(self.X ** 2, axis=1)[None, :])
        d = np.sqrt(np.maximum(d2, 0.0))
        # stable: ties go to the lower training index
        nn = np.argsort(d, axis=1, kind="stable")[:, : self.k]
        dn = np.take_along_axis(d, nn, axis=1)
        yn = self.y[nn]
        out = np.empty(len(Z))
        exact = dn[:, 0] <= 1e-12
        for i in np.nonzero(exact)[0]:
            out[i] = yn[i][dn[i] <= 1e-12].mean()
        rest = ~exact
        w = 1.0 / dn[rest]
        out[rest] = np.sum(w * yn[rest], axis=1) / np.sum(w, axis=1)
        return out


Model = StatModel | SimpleFeatureModel | WeiRegressor


def fit(tier: Tier, train: Dataset, hyper: Hyper | None = None) -> Model:
    hp = hyper or Hyper()
    tier = Tier(tier)
    if tier is Tier.STAT:
        return StatModel(hp.fc_ghz, hp.h_ut_m)
    X, y = train.X, np.asarray(train.targets, dtype=float)
    if tier is Tier.SIMPLE:
        A = np.column_stack([np.ones(len(X)), np.log10(X[:, 1])])
        if len(X) == 1 or np.ptp(A[:, 1]) == 0:
            return SimpleFeatureModel(float(y.mean()), 0.0)
        (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
        return SimpleFeatureModel(float(a), float(b))
    if hp.k > len(X):
        raise ValueError(f"k={hp.k} exceeds the {len(X)} training rows")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return WeiRegressor((X - mean) / scale, y.copy(), mean, scale, hp.k)


def predict_path_loss(model: Model, feature: WeiFeatureVector) -> float:
    return float(model.predict(feature.as_array()[None, :])[0])


def predict_many(model: Model, features: Sequence[WeiFeatureVector]) -> np.ndarray:
    return model.predict(features_matrix(features))


# -- metrics ----------------------------------------------------------------------

def nmse(truth, predicted) -> float:
    t = np.asarray(truth)
    p = np.asarray(predicted)
    if t.shape != p.shape:
        raise ValueError(f"shape mismatch {t.shape} vs {p.shape}")
    energy = np.sum(np.abs(t) ** 2)
    if energy == 0:
        raise ValueError("truth has zero energy")
    return float(np.sum(np.abs(p - t) ** 2) / energy)


def cdf_points(values) -> list[tuple[float, float]]:
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("no values")
    n = len(v)
    return [(float(x), (i + 1) / n) for i, x in enumerate(v)]


# -- pilot-based reconstruction -----------------------------------------------------

PILOT_SPACING = 8
PILOT_SNR_DB = 20.0


def pilot_indices(ofdm: OfdmConfig, spacing: int = PILOT_SPACING) -> np.ndarray:
    return np.arange(0, ofdm.n_subcarriers, spacing)


def observe_pilots(cfr: Cfr, ofdm: OfdmConfig, rng=None, snr_db: float | None = PILOT_SNR_DB,
                   spacing: int = PILOT_SPACING, element: int = 0) -> np.ndarray:
    """Pilot observations (n_pilots, n_symbols) at one element, with optional noise.

    Noise is circular Gaussian scaled to the mean pilot power of the link.
    """
    obs = cfr.h[pilot_indices(ofdm, spacing), :, element].copy()
    if rng is not None and snr_db is not None:
        p = np.mean(np.abs(obs) ** 2)
        sigma = np.sqrt(p * 10 ** (-snr_db / 10) / 2)
        obs = obs + sigma * (rng.standard_normal(obs.shape) + 1j * rng.standard_normal(obs.shape))
    return obs


def merge_delays(delays, tol: float = 1e-12) -> np.ndarray:
    out: list[float] = []
    for t in np.sort(np.asarray(delays, dtype=float)):
        if not out or t - out[-1] > tol:
            out.append(float(t))
    return np.array(out)


def reconstruct_cfr_from_pilots(pilot_obs, predicted_delays, ofdm: OfdmConfig,
                                spacing: int = PILOT_SPACING) -> Cfr:
    """Least-squares path amplitudes on a known delay basis, then full-band rebuild."""
    obs = np.asarray(pilot_obs, dtype=complex)
    if obs.ndim == 1:
        obs = obs[:, None]
    idx = pilot_indices(ofdm, spacing)
    if obs.shape[0] != len(idx):
        raise ValueError(f"expected {len(idx)} pilots, got {obs.shape[0]}")
    tau = merge_delays(predicted_delays)
    if len(tau) == 0:
        return Cfr(np.zeros((ofdm.n_subcarriers, obs.shape[1], 1), dtype=complex))
    if len(tau) > len(idx):
        raise ValueError(f"{len(tau)} delays exceed {len(idx)} pilots")
    df = ofdm.subcarrier_freqs - ofdm.fc_hz
    basis = np.exp(-2j * np.pi * np.outer(df, tau))  # (K, P)
    amps, *_ = np.linalg.lstsq(basis[idx], obs, rcond=None)
    return Cfr((basis @ amps)[:, :, None])


def interpolate_cfr_from_pilots(pilot_obs, ofdm: OfdmConfig, spacing: int = PILOT_SPACING) -> Cfr:
    """Baseline without environment knowledge: linear interpolation over subcarrier index.

    Subcarriers past the last pilot hold the last pilot value.
    """
    obs = np.asarray(pilot_obs, dtype=complex)
    if obs.ndim == 1:
        obs = obs[:, None]
    idx = pilot_indices(ofdm, spacing)
    k = np.arange(ofdm.n_subcarriers)
    h = np.empty((len(k), obs.shape[1]), dtype=complex)
    for s in range(obs.shape[1]):
        h[:, s] = np.interp(k, idx, obs[:, s].real) + 1j * np.interp(k, idx, obs[:, s].imag)
    return Cfr(h[:, :, None])
