import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eicsim.beam import (beam_powers, best_beam, build_codebook, nearest_beam, predict_beam, rank_of,
                         topk_accuracy, truth_ranking)
from eicsim.channel import Cfr, Cir, OfdmConfig, PathComponent, PathKind, cir_to_cfr, trace_paths
from eicsim.scene import METAL, TxSite, Vec3
from eicsim.wei import WeiFeatureVector, extract_link_features

from conftest import box, make_scene

CB = build_codebook()
OFDM = OfdmConfig()
TX = TxSite(Vec3(0, 0, 10))


def single_path(sin_theta, gain=1e-5 + 0j):
    cir = Cir((PathComponent(PathKind.DIRECT, 2e-7, gain, math.asin(sin_theta)),))
    return cir_to_cfr(cir, OFDM, TX)


def test_codebook_shape_and_norms():
    assert CB.weights.shape == (32, 128)
    assert np.allclose(np.linalg.norm(CB.weights, axis=1), 1.0, atol=1e-12)
    assert np.allclose(CB.weights[16], CB.weights[16][0])
    with pytest.raises(ValueError):
        build_codebook(300, 128)


def test_best_beam_examples():
    assert best_beam(single_path(0.0), CB, -8)[0] == 16
    assert best_beam(single_path(5 / 16), CB, -8)[0] == 21
    zero = Cfr(np.zeros((69, 3, 128), complex))
    i, p = best_beam(zero, CB, -8)
    assert i == 0 and p == -300.0


def test_exhaustive_grid_identification():
    for m in range(32):
        s = (m - 16) / 16
        assert best_beam(single_path(s), CB, -8)[0] == m


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.99, 0.99), st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3,
                                                  allow_nan=False, allow_infinity=False))
def test_best_beam_scale_invariant(s, alpha):
    h = single_path(s)
    assert best_beam(Cfr(alpha * h.h), CB, -8)[0] == best_beam(h, CB, -8)[0]


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.96, 0.96))
def test_single_path_best_is_nearest_grid_beam(s):
    # equal-magnitude sidelobe numerators put the peak on the nearest grid point
    g = (np.arange(32) - 16) / 16
    d = np.abs(g - s)
    if np.sort(d)[1] - np.sort(d)[0] < 1e-6:
        return
    assert best_beam(single_path(s), CB, -8)[0] == nearest_beam(s, CB)


def test_beam_powers_link_budget():
    from eicsim.channel import received_power
    h = single_path(0.3)
    p = beam_powers(h, CB, -8.0)
    for m in (0, 7, 21):
        assert p[m] == pytest.approx(received_power(h, CB.weights[m], -8.0), abs=1e-9)


def fv(rx_bearing, blocked=0, refl=0.0):
    return WeiFeatureVector(100.0, 100.0, blocked, 1, 0.0, refl, 0, rx_bearing)


def test_predictors_agree_under_los():
    f = fv(0.4)
    assert predict_beam(f, CB, True) == predict_beam(f, CB, False) == nearest_beam(math.sin(0.4), CB)


def test_tie_goes_to_lower_index():
    assert nearest_beam(1 / 32, CB) == 16
    assert predict_beam(fv(math.asin(-1 / 32)), CB, False) == 15


def test_blocked_link_with_side_reflector():
    blocker = box(0, (-5, 25, 0), (5, 35, 30))
    wall = box(1, (20, 0, 0), (22, 80, 40), material=METAL)
    sc = make_scene([blocker, wall], tx=(0, 0, 10))
    rx = (0.0, 60.0, 2.0)
    cir = trace_paths(sc, rx)
    assert not cir.has_direct and cir.walls()
    f = extract_link_features(sc, rx, cir)
    truth, _ = best_beam(cir_to_cfr(cir, OFDM, sc.tx), CB, -8)
    assert predict_beam(f, CB, True) == truth
    assert predict_beam(f, CB, False) != truth


def test_ranking_and_rank_of():
    p = [1.0, 5.0, 5.0, 2.0]
    assert list(truth_ranking(p)) == [1, 2, 3, 0]
    assert rank_of(2, p) == 2 and rank_of(0, p) == 4


def test_topk_examples(rng):
    powers = rng.normal(size=(4, 32))
    best = [int(np.argmax(p)) for p in powers]
    assert all(topk_accuracy(best, powers, k) == 1.0 for k in (1, 3, 5, 32))
    preds = [best[0], (best[1] + 1) % 32, (best[2] + 1) % 32, (best[3] + 1) % 32]
    assert topk_accuracy(preds, powers, 1) == 0.25
    with pytest.raises(ValueError):
        topk_accuracy(preds, powers, 0)
    with pytest.raises(ValueError):
        topk_accuracy(preds[:2], powers, 1)


@settings(max_examples=30)
@given(st.integers(0, 2**31))
def test_topk_monotone(seed):
    r = np.random.default_rng(seed)
    powers = r.normal(size=(20, 32))
    preds = list(r.integers(0, 32, 20))
    acc = [topk_accuracy(preds, powers, k) for k in range(1, 33)]
    assert all(a <= b for a, b in zip(acc, acc[1:]))
    assert acc[-1] == 1.0
