import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfps.errors import SingularLightError
from nfps.geometry import CameraIntrinsics, DepthMap
from nfps.lighting import (
    LightSource,
    in_admissible_region,
    per_pixel_lighting,
    sample_admissible_light,
    sample_admissible_lights,
)

K = CameraIntrinsics(20.0, 20.0, 8.0, 6.0, 17, 13)


def unit_depth(K=K, value=1.0):
    return DepthMap(np.full(K.shape, value), np.ones(K.shape, bool))


def brute_force(K, depth, light):
    """Scalar evaluation of the light model at every pixel."""
    L = np.zeros(K.shape + (3,))
    A = np.zeros(K.shape)
    p, d = np.array(light.position), np.array(light.direction)
    for v in range(K.height):
        for u in range(K.width):
            z = depth.data[v, u]
            X = np.array([z * (u - K.cx) / K.fx, z * (v - K.cy) / K.fy, z])
            diff = X - p
            dist = math.sqrt(diff @ diff)
            l = diff / dist
            c = l @ d
            lobe = 1.0 if light.mu == 0 else (max(c, 0.0) ** light.mu if c > 0 else 0.0)
            L[v, u] = l
            A[v, u] = lobe / dist**2
    return L, A


def test_principal_pixel_unit_distance():
    ppl = per_pixel_lighting(K, unit_depth(), LightSource((0, 0, 0)))
    np.testing.assert_allclose(ppl.L[6, 8], [0, 0, 1], atol=1e-15)
    assert ppl.A[6, 8] == 1.0


def test_principal_pixel_inverse_square():
    ppl = per_pixel_lighting(K, unit_depth(), LightSource((0, 0, -1), mu=1.0))
    np.testing.assert_allclose(ppl.L[6, 8], [0, 0, 1], atol=1e-15)
    assert ppl.A[6, 8] == pytest.approx(0.25, abs=1e-15)


def test_off_axis_light_monotone_profile():
    K2 = CameraIntrinsics(30.0, 30.0, 20.0, 20.0, 41, 41)
    light = LightSource((0.5, 0, 0))
    ppl = per_pixel_lighting(K2, unit_depth(K2), light)
    _, A_ref = brute_force(K2, unit_depth(K2), light)
    np.testing.assert_allclose(ppl.A, A_ref, rtol=1e-13)
    # distance from the foot point (0.5, 0, 1) in the image plane
    u, v = K2.pixel_grid()
    r = np.hypot((u - K2.cx) / K2.fx - 0.5, (v - K2.cy) / K2.fy)
    order = np.argsort(r.ravel(), kind="stable")
    a_sorted, r_sorted = ppl.A.ravel()[order], r.ravel()[order]
    strictly_farther = np.diff(r_sorted) > 1e-12
    assert np.all(np.diff(a_sorted)[strictly_farther] < 0)


@settings(max_examples=30, deadline=None)
@given(
    st.tuples(st.floats(-0.75, 0.75), st.floats(-0.75, 0.75), st.floats(-0.15, 0.15)),
    st.floats(0.0, 30.0),
    st.floats(0.0, 2 * math.pi),
    st.floats(0.0, 3.0),
)
def test_matches_scalar_oracle(pos, tilt, az, mu):
    d = (math.sin(math.radians(tilt)) * math.cos(az), math.sin(math.radians(tilt)) * math.sin(az), math.cos(math.radians(tilt)))
    light = LightSource(pos, d, mu)
    rng = np.random.default_rng(7)
    depth = DepthMap(0.8 + 0.4 * rng.random(K.shape), np.ones(K.shape, bool))
    ppl = per_pixel_lighting(K, depth, light)
    L_ref, A_ref = brute_force(K, depth, light)
    np.testing.assert_allclose(ppl.L, L_ref, atol=1e-12)
    np.testing.assert_allclose(ppl.A, A_ref, rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(np.linalg.norm(ppl.L, axis=-1), 1.0, atol=1e-12)
    assert (ppl.A >= 0).all()
    # inverse-square exactness
    X = depth.data[..., None] * K.rays()
    dist2 = np.sum((X - light.p) ** 2, axis=-1)
    lobe = np.where(ppl.L @ light.d > 0, np.maximum(ppl.L @ light.d, 0) ** mu, 0.0) if mu else 1.0
    np.testing.assert_allclose(ppl.A * dist2, lobe, rtol=1e-12, atol=1e-300)


def test_back_facing_lobe_clamped():
    light = LightSource((0, 0, 2.0), (0, 0, 1.0), mu=1.5)
    ppl = per_pixel_lighting(K, unit_depth(), light)
    assert (ppl.A == 0).all()


def test_scaling_depth_and_light():
    rng = np.random.default_rng(3)
    depth = DepthMap(0.9 + 0.2 * rng.random(K.shape), np.ones(K.shape, bool))
    light = LightSource((0.3, -0.2, 0.1), (0.1, 0.0, math.sqrt(0.99)), 1.3)
    base = per_pixel_lighting(K, depth, light)
    for s in (0.25, 3.0):
        scaled = per_pixel_lighting(K, DepthMap(depth.data * s, depth.mask), light.scaled(s))
        np.testing.assert_allclose(scaled.L, base.L, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(scaled.A, base.A / s**2, rtol=1e-12)


def test_mu_zero_ignores_direction():
    a = per_pixel_lighting(K, unit_depth(), LightSource((0.2, 0.1, 0), (0, 0, 1), 0.0))
    b = per_pixel_lighting(K, unit_depth(), LightSource((0.2, 0.1, 0), (0.6, 0, 0.8), 0.0))
    np.testing.assert_array_equal(a.A, b.A)


def test_mask_is_preserved():
    mask = np.zeros(K.shape, bool)
    mask[3:9, 2:12] = True
    ppl = per_pixel_lighting(K, DepthMap(np.where(mask, 1.0, 0.0), mask), LightSource((0, 0, 0)))
    np.testing.assert_array_equal(ppl.mask, mask)
    assert (ppl.A[~mask] == 0).all()


def test_singular_light():
    with pytest.raises(SingularLightError):
        per_pixel_lighting(K, unit_depth(), LightSource((0, 0, 1.0)))


@pytest.mark.parametrize(
    "light, expected",
    [
        (LightSource((0, 0, 0)), True),
        (LightSource((0.8, 0, 0)), False),
        (LightSource((0.75, 0, 0.15)), True),
        (LightSource((0, 0, 0.16)), False),
        (LightSource((0, 0, 0), (math.sin(math.radians(31)), 0, math.cos(math.radians(31)))), False),
        (LightSource((0, 0, 0), (math.sin(math.radians(29.9)), 0, math.cos(math.radians(29.9)))), True),
    ],
)
def test_admissible_region(light, expected):
    assert in_admissible_region(light) is expected


def test_invalid_lights():
    with pytest.raises(ValueError):
        LightSource((0, 0, 0), (0, 0, 2))
    with pytest.raises(ValueError):
        LightSource((0, 0, 0), mu=-1)
    with pytest.raises(ValueError):
        LightSource((0, 0, 0), intensity=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_samples_are_admissible_and_deterministic(seed):
    light = sample_admissible_light(seed)
    assert in_admissible_region(light)
    assert 0 <= light.mu <= 2
    assert sample_admissible_light(seed) == light


def test_sample_mean_position_centred():
    lights = sample_admissible_lights(10_000, 0)
    mean = np.mean([l.position for l in lights], axis=0)
    assert np.abs(mean).max() < 0.02
    assert all(in_admissible_region(l) for l in lights)


def test_dict_roundtrip():
    light = sample_admissible_light(5)
    assert LightSource.from_dict(light.to_dict()) == light
    with pytest.raises(ValueError):
        LightSource.from_dict({"position": [0, 0, 0], "colour": 1})
