import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eicsim.scene import (CONCRETE, Mobility, MobilityKind, SceneGenConfig, Vec3, advance_time, dumps,
                          generate_scene, load_scene, loads, save_scene, scene_from_dict, scene_to_dict,
                          validate_scene)

from conftest import box, make_scene

SMALL = SceneGenConfig(rx_gap=10.0)


def test_paper_geometry_echoed():
    cfg = replace(SceneGenConfig(), rx_gap=0.25)
    sc = generate_scene(cfg, seed=0)
    assert sc.tx.position == Vec3(-57.4, 27.0, 19.0)
    assert sc.bounds[1].x - sc.bounds[0].x == 200.0
    rx = sc.rx_array
    assert np.all(rx[:, 2] == 2.0)
    xs = np.unique(rx[:, 0])
    assert np.allclose(np.diff(xs), 0.25)
    assert validate_scene(sc) == []


def test_no_vehicles_only_static():
    sc = generate_scene(replace(SMALL, vehicle_count=(0, 0)), seed=3)
    assert all(s.mobility.kind is MobilityKind.STATIC for s in sc.scatterers)


def test_generation_is_deterministic():
    assert dumps(generate_scene(SMALL, 7)) == dumps(generate_scene(SMALL, 7))
    assert dumps(generate_scene(SMALL, 7)) != dumps(generate_scene(SMALL, 8))


def test_generated_layout():
    sc = generate_scene(SMALL, 2)
    groups = {s.group_id for s in sc.scatterers if s.mobility.kind is MobilityKind.STATIC}
    assert groups == {0, 1, 2, 3}
    cfg = SMALL
    for s in sc.scatterers:
        if s.mobility.kind is MobilityKind.DYNAMIC:
            assert s.material.name.value == "Metal"
            assert s.box_max.y <= cfg.road_center_y
            assert s.size == pytest.approx(cfg.vehicle_size)
    assert not any(s.contains(sc.tx.position) for s in sc.scatterers)


def test_road_view_kept_clear():
    from eicsim.channel import segments_hit_boxes
    for seed in range(5):
        sc = generate_scene(SMALL, seed)
        xs = np.arange(-60.0, 20.0 + 1e-9, 5.0)
        pts = np.column_stack([xs, np.zeros_like(xs), np.full_like(xs, 2.0)])
        bld = np.array([[s.box_min, s.box_max] for s in sc.scatterers if s.group_id >= 0])
        hit = segments_hit_boxes(np.repeat([sc.tx.position], len(pts), axis=0), pts, bld)
        assert not hit.any()


def test_advance_time_identity_and_kinematics():
    car = box(0, (0, 0, 0), (4, 2, 1.5), mobility=Mobility.dynamic((10, 0, 0)))
    sc = make_scene([car])
    assert advance_time(sc, 0.0) == sc
    moved = advance_time(sc, 0.5).scatterers[0]
    assert moved.box_min == Vec3(5.0, 0.0, 0.0)
    assert moved.box_max == Vec3(9.0, 2.0, 1.5)


def test_advance_time_clamps_to_bounds():
    car = box(0, (190, 0, 0), (195, 2, 1.5), mobility=Mobility.dynamic((10, 0, 0)))
    moved = advance_time(make_scene([car]), 2.0).scatterers[0]
    assert moved.box_max.x == 200.0


def test_random_toggle_certain():
    s = box(0, (0, 0, 0), (1, 1, 1), mobility=Mobility.random(1.0))
    out = advance_time(make_scene([s]), 1.0, np.random.default_rng(0))
    assert out.scatterers[0].present is False
    assert out.active == ()


def test_advance_rejects_negative_dt():
    with pytest.raises(ValueError):
        advance_time(make_scene(), -1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 5), st.integers(0, 2**32 - 1))
def test_advance_preserves_static_dynamic(dt, seed):
    sc = generate_scene(replace(SMALL, n_random=3), 1)
    out = advance_time(sc, dt, np.random.default_rng(seed))
    assert len(out.scatterers) == len(sc.scatterers)
    for a, b in zip(sc.scatterers, out.scatterers):
        if a.mobility.kind is not MobilityKind.RANDOM:
            assert a.present == b.present
        if a.mobility.kind is MobilityKind.STATIC:
            assert a == b


def test_validate_box_order():
    bad = box(5, (0, 0, 0), (1, 1, 1))
    bad = replace(bad, box_min=Vec3(2.0, 0.0, 0.0))
    v = validate_scene(make_scene([bad]))
    assert [x.code for x in v] == ["box_order"]
    assert v[0].scatterer_id == 5


def test_validate_rx_inside_building():
    b = box(3, (10, 10, 0), (20, 20, 30))
    v = validate_scene(make_scene([b], rx=[(15, 15, 2), (50, 50, 2)]))
    assert [x.code for x in v] == ["contains_rx"]
    assert v[0].scatterer_id == 3


def test_serialization_round_trip(tmp_path):
    sc = generate_scene(replace(SMALL, n_random=2), 4)
    assert loads(dumps(sc)) == sc
    assert scene_from_dict(json.loads(json.dumps(scene_to_dict(sc)))) == sc
    p = tmp_path / "s.json"
    save_scene(sc, p)
    assert load_scene(p) == sc


def test_schema_version_checked():
    d = scene_to_dict(make_scene())
    d["schema_version"] = 99
    with pytest.raises(ValueError):
        scene_from_dict(d)


def test_materials():
    assert CONCRETE.reflection_amplitude == 0.6
