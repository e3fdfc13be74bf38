import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfps.estimator import EstimatorConfig, estimate_normals, estimate_normals_global_lights, plane_lighting
from nfps.lighting import per_pixel_lighting
from nfps.metrics import angular_error_map, mean_angular_error
from nfps.renderer import NoiseConfig, make_fixture, render


def true_lighting(stack, depth):
    return [per_pixel_lighting(stack.K, depth, l) for l in stack.lights]


def lstsq_oracle(images, ppl, mask, cfg):
    """Pixel-by-pixel reference using numpy's least squares."""
    H, W = mask.shape
    out = np.full((H, W, 3), np.nan)
    for v in range(H):
        for u in range(W):
            if not mask[v, u]:
                continue
            obs = [
                (images[j, v, u], j)
                for j in range(len(ppl))
                if ppl[j].A[v, u] > 0 and images[j, v, u] > cfg.shadow_threshold
            ]
            obs.sort()
            spare = max(len(obs) - cfg.min_valid_obs, 0)
            hi = min(cfg.trim_high, spare)
            lo = min(cfg.trim_low, spare - hi)
            obs = obs[lo : len(obs) - hi]
            if len(obs) < cfg.min_valid_obs:
                continue
            rows = np.array([ppl[j].A[v, u] * -ppl[j].L[v, u] for _, j in obs])
            rhs = np.array([i for i, _ in obs])
            b = np.linalg.lstsq(rows, rhs, rcond=None)[0]
            out[v, u] = b
    return out


@pytest.mark.parametrize("trim", [(0, 0), (0, 1), (1, 1)])
def test_matches_lstsq_oracle_on_noisy_data(trim):
    stack, depth, _ = render(make_fixture("sphere", 64, 8, 1), NoiseConfig(sigma=0.02, seed=2))
    ppl = true_lighting(stack, depth)
    cfg = EstimatorConfig(trim_low=trim[0], trim_high=trim[1])
    normals, albedo = estimate_normals(stack.images, ppl, cfg, stack.mask)
    ref = lstsq_oracle(stack.images, ppl, stack.mask, cfg)
    ok = normals.mask
    assert ok.sum() > 0.9 * stack.mask.sum()
    b = normals.data[ok] * albedo.data[ok][:, None]
    np.testing.assert_allclose(b, ref[ok], rtol=1e-9, atol=1e-12)


def test_plane_three_lights_exact(rendered):
    stack, depth, gt = rendered("plane", 64, 3, 0)
    normals, _ = estimate_normals(stack.images, true_lighting(stack, depth), mask=stack.mask)
    assert normals.mask.all()
    assert np.nanmax(angular_error_map(normals, gt)) < 0.01


def test_exact_recovery_sphere(rendered):
    stack, depth, gt = rendered("sphere", 64, 10, 0)
    normals, _ = estimate_normals(stack.images, true_lighting(stack, depth), mask=stack.mask)
    assert np.nanmax(angular_error_map(normals, gt)) < 0.01


def test_albedo_recovered():
    stack, depth, _ = render(make_fixture("bumps", 64, 6, 0, albedo=0.5))
    _, albedo = estimate_normals(stack.images, true_lighting(stack, depth), mask=stack.mask)
    assert albedo.mask.sum() > 0.95 * stack.mask.sum()
    np.testing.assert_allclose(albedo.data[albedo.mask], 0.5, atol=1e-6)


def test_zero_pixel_is_invalid(rendered):
    stack, depth, _ = rendered("plane", 64, 5, 0)
    images = stack.images.copy()
    images[:, 10, 20] = 0.0
    normals, albedo = estimate_normals(images, true_lighting(stack, depth), mask=stack.mask)
    assert not normals.mask[10, 20]
    assert albedo.data[10, 20] == 0
    assert normals.mask.sum() == stack.mask.sum() - 1


def test_ill_conditioned_pixels_invalidated(rendered):
    stack, depth, _ = rendered("plane", 64, 5, 0)
    ppl = true_lighting(stack, depth)
    normals, _ = estimate_normals(stack.images, ppl, EstimatorConfig(condition_limit=1.0), stack.mask)
    assert not normals.mask.any()


def test_trims_never_go_below_minimum(rendered):
    stack, depth, gt = rendered("plane", 64, 3, 0)
    cfg = EstimatorConfig(trim_low=2, trim_high=2)
    normals, _ = estimate_normals(stack.images, true_lighting(stack, depth), cfg, stack.mask)
    assert normals.mask.all()
    assert mean_angular_error(normals, gt) < 0.01


def test_input_checks(rendered):
    stack, depth, _ = rendered("plane", 64, 3, 0)
    ppl = true_lighting(stack, depth)
    with pytest.raises(ValueError):
        estimate_normals(stack.images[:2], ppl)
    with pytest.raises(ValueError):
        estimate_normals(stack.images[:2], ppl[:2])
    with pytest.raises(ValueError):
        EstimatorConfig(min_valid_obs=2)


def test_permutation_invariance_bitwise():
    stack, depth, _ = render(make_fixture("sphere", 64, 10, 3), NoiseConfig(sigma=0.01, seed=1))
    ppl = true_lighting(stack, depth)
    cfg = EstimatorConfig(trim_low=1, trim_high=1)
    n0, a0 = estimate_normals(stack.images, ppl, cfg, stack.mask)
    rng = np.random.default_rng(0)
    for _ in range(3):
        perm = rng.permutation(len(ppl))
        n1, a1 = estimate_normals(stack.images[perm], [ppl[j] for j in perm], cfg, stack.mask)
        np.testing.assert_array_equal(n1.mask, n0.mask)
        np.testing.assert_array_equal(n1.data, n0.data)
        np.testing.assert_array_equal(a1.data, a0.data)


@settings(max_examples=10, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_intensity_scale_invariance(c):
    stack, depth, _ = render(make_fixture("bumps", 64, 6, 5), NoiseConfig(sigma=0.01, seed=3))
    ppl = true_lighting(stack, depth)
    n0, a0 = estimate_normals(stack.images, ppl, mask=stack.mask)
    n1, a1 = estimate_normals(stack.images * c, ppl, mask=stack.mask)
    np.testing.assert_array_equal(n1.mask, n0.mask)
    np.testing.assert_allclose(n1.data, n0.data, atol=1e-9)
    np.testing.assert_allclose(a1.data, c * a0.data, rtol=1e-9)


def test_workers_do_not_change_output(rendered):
    stack, depth, _ = rendered("sphere", 64, 10, 0)
    ppl = true_lighting(stack, depth)
    n1, a1 = estimate_normals(stack.images, ppl, mask=stack.mask)
    n4, a4 = estimate_normals(stack.images, ppl, mask=stack.mask, workers=4)
    np.testing.assert_array_equal(n1.data, n4.data)
    np.testing.assert_array_equal(a1.data, a4.data)


def test_noise_median_error():
    stack, depth, gt = render(make_fixture("sphere", 256, 10, 0), NoiseConfig(sigma=0.01, seed=0))
    normals, _ = estimate_normals(stack.images, true_lighting(stack, depth), mask=stack.mask)
    assert np.nanmedian(angular_error_map(normals, gt)) < 1.5


# -- global-lights ablation -------------------------------------------------------


def test_global_lights_exact_on_unit_plane(rendered):
    stack, depth, _ = rendered("plane", 64, 5, 0)
    a, aa = estimate_normals(stack.images, true_lighting(stack, depth), mask=stack.mask)
    b, ba = estimate_normals_global_lights(stack.images, stack.lights, stack.K, mask=stack.mask)
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(aa.data, ba.data)


def test_global_lights_worse_on_sphere(reconstructed):
    result, _, gt = reconstructed("sphere")
    stack, _, _ = render(make_fixture("sphere", 256, 10, 0))
    b, _ = estimate_normals_global_lights(stack.images, stack.lights, stack.K, mask=stack.mask)
    assert mean_angular_error(b, gt) > mean_angular_error(result.normals, gt)


def test_global_lights_gap_grows_with_relief():
    gaps = []
    for amp in (0.03, 0.06, 0.12):
        stack, depth, gt = render(make_fixture("bumps", 64, 10, 0, amplitude=amp))
        a, _ = estimate_normals(stack.images, true_lighting(stack, depth), mask=stack.mask)
        b, _ = estimate_normals_global_lights(stack.images, stack.lights, stack.K, mask=stack.mask)
        gaps.append(mean_angular_error(b, gt) - mean_angular_error(a, gt))
    assert gaps[0] > 0 and np.all(np.diff(gaps) > 0)


def test_plane_lighting_is_depth_one(rendered):
    stack, _, _ = rendered("sphere", 64, 3, 0)
    ppl = plane_lighting(stack.K, stack.lights, stack.mask)
    m = stack.mask
    X = stack.K.rays()[m]  # the depth-one plane
    for light, got in zip(stack.lights, ppl):
        diff = X - light.p
        dist2 = np.sum(diff * diff, axis=-1)
        cos = (diff / np.sqrt(dist2)[:, None]) @ light.d
        lobe = np.maximum(cos, 0.0) ** light.mu if light.mu else 1.0
        np.testing.assert_allclose(got.A[m], lobe / dist2, rtol=1e-12)
