import math

import numpy as np
import pytest

from eicsim.scene import CONCRETE, METAL, Mobility, Scatterer, Scene, TxSite, Vec3


def box(sid, lo, hi, material=CONCRETE, mobility=None, group_id=-1):
    return Scatterer(sid, Vec3(*map(float, lo)), Vec3(*map(float, hi)), material,
                     mobility or Mobility.static(), group_id)


def make_scene(scatterers=(), tx=(0.0, 0.0, 10.0), rx=(), side=400.0, **tx_kw):
    half = side / 2
    bounds = (Vec3(-half, -half, 0.0), Vec3(half, half, 200.0))
    return Scene(bounds, tuple(scatterers), TxSite(Vec3(*map(float, tx)), **tx_kw),
                 tuple(Vec3(*map(float, p)) for p in rx))


def random_boxes(rng, n, extent=100.0):
    out = []
    for i in range(n):
        c = rng.uniform(-extent, extent, 2)
        s = rng.uniform(2, 30, 2)
        h = rng.uniform(1, 40)
        out.append(box(i, (c[0], c[1], 0.0), (c[0] + s[0], c[1] + s[1], h)))
    return out


@pytest.fixture
def metal():
    return METAL


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def wrap(a):
    return math.atan2(math.sin(a), math.cos(a))
