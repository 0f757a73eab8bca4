import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eicsim.channel import Cir, trace_paths
from eicsim.scene import METAL, Mobility, advance_time
from eicsim.wei import (FEATURE_COLUMNS, ComplexAccount, LinkMismatch, WeiCategory, WeiItem, WeiKind,
                        account_complex, classify, compute_wei_quantity, extract_link_features,
                        features_matrix, preprocess, scatterer_items, scene_account, total_quantity,
                        write_features_csv)

from conftest import box, make_scene

TX = (0.0, 0.0, 10.0)
RX = (100.0, 0.0, 2.0)


def features(sc, rx=RX):
    return extract_link_features(sc, rx, trace_paths(sc, rx))


def test_classify():
    assert classify(box(0, (0, 0, 0), (10, 10, 20))) is WeiCategory.STATIC
    assert classify(box(1, (0, 0, 0), (4, 2, 1.5), mobility=Mobility.dynamic((10, 0, 0)))) is WeiCategory.DYNAMIC
    assert classify(box(2, (0, 0, 0), (1, 1, 1), mobility=Mobility.random(0.2))) is WeiCategory.RANDOM


def test_quantity_examples():
    assert compute_wei_quantity(WeiItem(WeiCategory.STATIC, WeiKind.POSITION, 3, 1.0, (1, 2, 3))) == 3
    assert compute_wei_quantity(WeiItem(WeiCategory.STATIC, WeiKind.SIZE, 3, 0.0, (1, 2, 3))) == 0
    assert compute_wei_quantity(WeiItem(WeiCategory.STATIC, WeiKind.SIZE, 2, 1.5, (1, 2))) == 3.0
    with pytest.raises(ValueError):
        WeiItem(WeiCategory.STATIC, WeiKind.POSITION, 3, 1.0, (1, 2))


def test_account_examples():
    assert account_complex(ComplexAccount(2, 3, 6, (1, 2, 3, 4))) == 360
    assert account_complex(ComplexAccount(0, 3, 6, (1, 2))) == 0
    assert account_complex(ComplexAccount(1, 1, 1, (2.5,))) == 2.5


item = st.builds(lambda d, th: WeiItem(WeiCategory.STATIC, WeiKind.SIZE, d, th, (0.0,) * d),
                 st.integers(0, 5), st.floats(0, 10))


@given(st.lists(item), st.lists(item))
def test_quantity_additive(a, b):
    assert total_quantity(a + b) == pytest.approx(total_quantity(a) + total_quantity(b))


def test_scene_account_groups():
    from eicsim.scene import SceneGenConfig, generate_scene
    sc = generate_scene(SceneGenConfig(rx_gap=20.0), 0)
    acc = scene_account(sc)
    assert sorted(acc) == [0, 1, 2, 3]
    a = acc[0]
    assert (a.M, a.N, a.K) == (3, 1, 6)
    assert account_complex(a) == 3 * 6 * 7  # position 3 + size 3 + material 1


def test_dynamic_items_carry_velocity():
    car = box(0, (0, 0, 0), (4, 2, 1.5), mobility=Mobility.dynamic((10, 0, 0)))
    kinds = [i.kind for i in scatterer_items(car)]
    assert WeiKind.VELOCITY in kinds


def test_unobstructed_link():
    f = features(make_scene(tx=TX))
    assert f.los_blocked == 0 and f.n_first_order_reflectors == 0
    assert f.nearest_blocker_height_margin == 0.0
    assert f.d2d == 100.0 and f.d3d == pytest.approx(math.hypot(100, 8))


def test_blocked_by_hand():
    f = features(make_scene([box(0, (40, -5, 0), (60, 5, 20))], tx=TX))
    assert f.los_blocked == 1
    # ray enters the box at x=40 at height 10 - 8*0.4 = 6.8
    assert f.nearest_blocker_height_margin == pytest.approx(20 - 6.8)
    assert f.dynamic_blocker_flag == 0


def test_ray_passes_above_low_box():
    assert features(make_scene([box(0, (40, -5, 0), (60, 5, 5))], tx=TX)).los_blocked == 0


def test_homogeneity_static_vs_frozen_dynamic():
    s = box(0, (40, -5, 0), (60, 5, 20))
    d = box(0, (40, -5, 0), (60, 5, 20), mobility=Mobility.dynamic((0, 0, 0)))
    fs, fd = features(make_scene([s], tx=TX)), features(make_scene([d], tx=TX))
    assert replace(fd, dynamic_blocker_flag=0) == fs
    assert fd.dynamic_blocker_flag == 1


def test_consistency_of_position_under_motion():
    car = box(0, (0, 20, 0), (4, 22, 2), mobility=Mobility.dynamic((10, 0, 0)))
    sc = make_scene([car])
    pos = lambda s: next(i for i in scatterer_items(s.scatterers[0]) if i.kind is WeiKind.POSITION).values  # noqa
    p1 = pos(sc)
    p2 = pos(advance_time(sc, 1.5))
    assert p2 == (p1[0] + 15.0, p1[1], p1[2])


def test_correlation_moving_blocker_out_flips_blockage():
    b = box(0, (40, -5, 0), (60, 5, 20))
    assert features(make_scene([b], tx=TX)).los_blocked == 1
    assert features(make_scene([b.translated((0, 30, 0))], tx=TX)).los_blocked == 0


def test_strongest_reflector_bearing():
    wall = box(3, (20, 0, 0), (22, 80, 40), material=METAL)
    sc = make_scene([wall], tx=TX)
    f = features(sc, (0, 60, 2))
    assert f.n_first_order_reflectors == 1
    cir = trace_paths(sc, (0, 60, 2))
    w = cir.walls()[0]
    assert f.strongest_reflector_bearing == w.aod_azimuth
    # broadside is +y, so a bounce point to the +x side has a negative bearing
    assert f.strongest_reflector_bearing == pytest.approx(math.atan2(w.bounce.y, w.bounce.x) - math.pi / 2)
    assert f.rx_bearing == pytest.approx(0.0)


def test_mismatch_detected():
    sc = make_scene(tx=TX)
    cir = trace_paths(sc, RX)
    with pytest.raises(LinkMismatch):
        extract_link_features(sc, (90.0, 0.0, 2.0), cir)
    with pytest.raises(LinkMismatch):
        extract_link_features(make_scene([box(0, (40, -5, 0), (60, 5, 20))], tx=TX), RX, cir)


def test_features_csv(tmp_path):
    f = features(make_scene(tx=TX))
    p = tmp_path / "f.csv"
    write_features_csv(p, [f, f], ["config: {}"])
    lines = p.read_text().splitlines()
    assert lines[0] == "# config: {}"
    assert lines[1].split(",") == list(FEATURE_COLUMNS)
    assert len(lines) == 4
    assert features_matrix([f]).shape == (1, 8)


def test_preprocess():
    tiny = box(1, (0, 0, 0), (0.1, 0.1, 0.1))
    big = box(0, (10, 10, 0), (30, 30, 12))
    sc = make_scene([big, tiny])
    out = preprocess(sc)
    assert [s.id for s in out.scatterers] == [0]
    only_big = make_scene([big])
    assert preprocess(only_big) is only_big
    assert preprocess(out) == out
