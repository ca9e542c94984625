import numpy as np
import pytest

from bbmkit import PotentialError, eval_v, make_potential

SHAPES = [
    {"dim": 3, "shape": "bump", "radius": 1.0, "height": 1.0},
    {"dim": 1, "shape": "bump", "radius": 0.7, "height": 2.0, "center": 0.3},
    {"dim": 1, "shape": "table", "xs": [-1, 0, 1], "vs": [0, 2, 0]},
    {"dim": 3, "shape": "table", "xs": [0, 0.5, 1.5], "vs": [1, 1, 0]},
    {"dim": 3, "shape": "indicator_smoothed", "radius": 1.0, "height": 1.0, "eps": 0.1},
    {"dim": 1, "shape": "indicator_smoothed", "radius": 1.0, "height": 3.0, "eps": 0.2},
]


def test_bump_attributes():
    p = make_potential({"dim": 3, "shape": "bump", "radius": 1.0, "height": 1.0})
    assert p.v_max == 1.0
    assert p.support_radius == 1.0


def test_table_attributes():
    p = make_potential({"dim": 1, "shape": "table", "xs": [-1, 0, 1], "vs": [0, 2, 0]})
    assert p.v_max == 2.0
    assert p.support_radius == 1.0


@pytest.mark.parametrize("bad", [
    {"dim": 1, "shape": "table", "xs": [-1, 0, 1], "vs": [0, -0.1, 0]},
    {"dim": 1, "shape": "table", "xs": [-1, 1, 0], "vs": [0, 1, 0]},
    {"dim": 1, "shape": "table", "xs": [-1, 0, 1], "vs": [0, 0, 0]},
    {"dim": 1, "shape": "table", "xs": [-1, 0, 1], "vs": [1, 1, 0]},
    {"dim": 2, "shape": "bump", "radius": 1.0, "height": 1.0},
    {"dim": 3, "shape": "bump", "radius": -1.0, "height": 1.0},
    {"dim": 3, "shape": "bump", "radius": 1.0, "height": 1.0, "center": 0.5},
    {"dim": 3, "shape": "gaussian", "radius": 1.0},
    {"dim": 3, "shape": "indicator_smoothed", "radius": 1.0, "height": 1.0, "eps": 2.5},
])
def test_invalid_shapes_rejected(bad):
    with pytest.raises(PotentialError):
        make_potential(bad)


def test_bump_values():
    p = make_potential({"dim": 3, "shape": "bump", "radius": 1.0, "height": 1.0})
    assert eval_v(p, np.zeros(3)) == 1.0
    assert eval_v(p, [2.0, 0.0, 0.0]) == 0.0
    assert eval_v(p, [0.0, 0.5, 0.0]) == pytest.approx(0.716531, abs=1e-6)
    assert eval_v(p, [0.0, 0.5, 0.0]) == pytest.approx(np.exp(-1 / 3), rel=1e-14)


def test_json_string_input():
    p = make_potential('{"dim": 1, "shape": "bump", "radius": 2, "height": 0.5}')
    assert p.support_radius == 2.0 and p.v_max == 0.5


@pytest.mark.parametrize("spec", SHAPES)
def test_nonnegative_and_compact(spec, rng):
    p = make_potential(spec)
    if p.dim == 3:
        x = rng.normal(size=(10_000, 3)) * p.support_radius
        r = np.linalg.norm(x, axis=1)
    else:
        x = rng.uniform(-3, 3, size=10_000) * p.support_radius
        r = np.abs(x)
    v = eval_v(p, x)
    assert np.all(v >= 0)
    assert np.all(v[r > p.support_radius] == 0)
    assert v.max() <= p.v_max


@pytest.mark.parametrize("s", [0.5, 2.0, 3.7])
def test_scaling_hook(s, rng):
    p = make_potential({"dim": 3, "shape": "bump", "radius": 1.0, "height": 1.0})
    x = rng.uniform(-1.2, 1.2, size=(500, 3))
    np.testing.assert_allclose(p.scaled(s)(s * x), p(x), rtol=1e-12, atol=1e-15)


def test_smoothed_indicator_is_odd_about_radius():
    p = make_potential({"dim": 1, "shape": "indicator_smoothed", "radius": 1.0, "height": 1.0,
                        "eps": 0.2})
    d = np.linspace(0, 0.1, 11)
    np.testing.assert_allclose(p.radial(1 - d) + p.radial(1 + d), 1.0, atol=1e-14)


def test_round_trip_dict():
    for spec in SHAPES:
        p = make_potential(spec)
        q = make_potential(p.to_dict())
        assert q.to_dict() == p.to_dict()


def test_dim3_point_shape_checked():
    p = make_potential(SHAPES[0])
    with pytest.raises(ValueError):
        p(np.zeros((4, 2)))
