import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eicsim.channel import Cir, OfdmConfig, PathComponent, PathKind, cir_to_cfr
from eicsim.predict import (Dataset, Hyper, Tier, cdf_points, fit, interpolate_cfr_from_pilots, merge_delays,
                            nmse, observe_pilots, pilot_indices, predict_many, predict_path_loss,
                            reconstruct_cfr_from_pilots, train_test_split)
from eicsim.scene import TxSite, Vec3
from eicsim.wei import WeiFeatureVector

OFDM = OfdmConfig()
TX1 = TxSite(Vec3(0, 0, 0), n_elements=1)


def fv(d3d=100.0, blocked=0, **kw):
    base = dict(d2d=d3d, d3d=d3d, los_blocked=blocked, n_first_order_reflectors=0,
                nearest_blocker_height_margin=0.0, strongest_reflector_bearing=0.0,
                dynamic_blocker_flag=0, rx_bearing=0.0)
    base.update(kw)
    return WeiFeatureVector(**base)


def random_feats(rng, n):
    return tuple(fv(float(rng.uniform(10, 300)), int(rng.integers(2)),
                    n_first_order_reflectors=int(rng.integers(4)),
                    nearest_blocker_height_margin=float(rng.uniform(0, 20)),
                    strongest_reflector_bearing=float(rng.uniform(-1, 1)),
                    rx_bearing=float(rng.uniform(-1, 1))) for _ in range(n))


def cir_of(delays, gains):
    return Cir(tuple(PathComponent(PathKind.WALL, t, g, 0.0, scatterer_id=i, face_id=0)
                     for i, (t, g) in enumerate(zip(delays, gains))))


# -- models -------------------------------------------------------------------------

def test_stat_tier_formula():
    m = fit(Tier.STAT, Dataset((fv(),), np.array([0.0])))
    assert predict_path_loss(m, fv(100.0, 0)) == pytest.approx(88.62, abs=0.005)
    assert predict_path_loss(m, fv(100.0, 1)) == pytest.approx(108.02, abs=0.005)


def test_single_row_k1_constant():
    m = fit(Tier.WEI, Dataset((fv(50.0),), np.array([77.0])), Hyper(k=1))
    assert np.all(predict_many(m, [fv(10.0), fv(300.0, 1)]) == 77.0)


def test_k_larger_than_train_rejected():
    with pytest.raises(ValueError):
        fit(Tier.WEI, Dataset((fv(),), np.array([1.0])), Hyper(k=5))


def test_simple_feature_recovers_coefficients(rng):
    feats = random_feats(rng, 50)
    y = np.array([31.5 + 27.25 * math.log10(f.d3d) for f in feats])
    m = fit(Tier.SIMPLE, Dataset(feats, y))
    assert m.a == pytest.approx(31.5, abs=1e-9)
    assert m.b == pytest.approx(27.25, abs=1e-9)


def test_wei_interpolates_at_knot(rng):
    feats = random_feats(rng, 40)
    y = rng.uniform(60, 140, 40)
    m = fit(Tier.WEI, Dataset(feats, y))
    assert predict_many(m, feats[:10]) == pytest.approx(y[:10])


def test_wei_constant_targets(rng):
    feats = random_feats(rng, 30)
    m = fit(Tier.WEI, Dataset(feats, np.full(30, 91.0)))
    assert predict_many(m, random_feats(rng, 5)) == pytest.approx(np.full(5, 91.0))


def test_wei_equidistant_average():
    m = fit(Tier.WEI, Dataset((fv(100.0), fv(200.0)), np.array([80.0, 90.0])), Hyper(k=2))
    assert predict_path_loss(m, fv(150.0)) == pytest.approx(85.0)


def test_wei_affine_rescale_invariance(rng):
    feats = random_feats(rng, 60)
    y = rng.uniform(60, 140, 60)
    q = random_feats(rng, 20)
    base = predict_many(fit(Tier.WEI, Dataset(feats, y)), q)
    scale = lambda f: WeiFeatureVector(**{**f.__dict__, "nearest_blocker_height_margin":  # noqa: E731
                                          3.0 * f.nearest_blocker_height_margin + 7.0})
    moved = predict_many(fit(Tier.WEI, Dataset(tuple(map(scale, feats)), y)), list(map(scale, q)))
    assert moved == pytest.approx(base, rel=1e-9)


def test_split_deterministic_and_disjoint():
    a, b = train_test_split(100, 3)
    a2, b2 = train_test_split(100, 3)
    assert np.array_equal(a, a2) and np.array_equal(b, b2)
    assert len(a) == 80 and len(b) == 20
    assert not set(a) & set(b)


# -- metrics -------------------------------------------------------------------------

def test_nmse_examples(rng):
    h = rng.normal(size=20) + 1j * rng.normal(size=20)
    assert nmse(h, h) == 0
    assert nmse(h, np.zeros_like(h)) == 1
    assert nmse(h, 2 * h) == pytest.approx(1)
    with pytest.raises(ValueError):
        nmse(np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        nmse(h, h[:5])


@given(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_nmse_scale_diagnostic(alpha):
    h = np.array([1 + 2j, -0.5j, 3.0])
    assert nmse(h, alpha * h) == pytest.approx(abs(alpha - 1) ** 2, rel=1e-9, abs=1e-12)


def test_cdf_examples():
    assert cdf_points([3, 1, 2]) == [(1, 1 / 3), (2, 2 / 3), (3, 1)]
    assert cdf_points([4, 4, 4])[-1] == (4, 1)
    assert cdf_points([5.5]) == [(5.5, 1)]


# -- pilots --------------------------------------------------------------------------

def test_pilot_layout():
    idx = pilot_indices(OFDM)
    assert len(idx) == 9 and idx[0] == 0 and idx[-1] == 64


def test_exact_recovery_noiseless():
    rng = np.random.default_rng(5)
    for n in range(1, 10):
        tau = rng.uniform(100e-9, 900e-9, n)
        g = rng.normal(size=n) + 1j * rng.normal(size=n)
        h = cir_to_cfr(cir_of(tau, g), OFDM, TX1)
        obs = observe_pilots(h, OFDM, rng=None)
        assert nmse(h.h, reconstruct_cfr_from_pilots(obs, tau, OFDM).h) <= 1e-10


def test_single_path_interp_agrees_with_basis():
    h = cir_to_cfr(cir_of([300e-9], [0.01j]), OFDM, TX1)
    obs = observe_pilots(h, OFDM, rng=None)
    a = reconstruct_cfr_from_pilots(obs, [300e-9], OFDM).h
    b = interpolate_cfr_from_pilots(obs, OFDM).h
    # a single delay still rotates phase across the band; magnitude is flat
    assert np.abs(a) == pytest.approx(np.abs(h.h), abs=1e-12)
    assert np.allclose(np.abs(b[pilot_indices(OFDM)]), np.abs(a[pilot_indices(OFDM)]), atol=1e-6 * 0.01)


def test_fringe_below_pilot_spacing_basis_wins():
    tau = [100e-9, 2.1e-6]
    h = cir_to_cfr(cir_of(tau, [1.0, 0.8]), OFDM, TX1)
    obs = observe_pilots(h, OFDM, np.random.default_rng(0))
    assert nmse(h.h, reconstruct_cfr_from_pilots(obs, tau, OFDM).h) < \
        nmse(h.h, interpolate_cfr_from_pilots(obs, OFDM).h)


def test_too_many_delays_rejected():
    obs = np.ones(9, complex)
    with pytest.raises(ValueError):
        reconstruct_cfr_from_pilots(obs, np.arange(10) * 1e-7, OFDM)
    with pytest.raises(ValueError):
        reconstruct_cfr_from_pilots(np.ones(5), [1e-7], OFDM)


def test_merge_delays():
    assert list(merge_delays([3e-7, 1e-7, 1e-7 + 1e-15])) == [1e-7, 3e-7]


def test_pilot_noise_level():
    h = cir_to_cfr(cir_of([1e-7], [1.0]), OfdmConfig(n_symbols=2000), TX1)
    obs = observe_pilots(h, OfdmConfig(n_symbols=2000), np.random.default_rng(1))
    clean = observe_pilots(h, OfdmConfig(n_symbols=2000), None)
    snr = np.mean(np.abs(clean) ** 2) / np.mean(np.abs(obs - clean) ** 2)
    assert 10 * math.log10(snr) == pytest.approx(20.0, abs=0.2)
