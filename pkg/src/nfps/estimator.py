"""Per-pixel Lambertian normal and albedo estimation under near-field lighting.

For each pixel the scaled normal ``b = albedo * N`` minimises
``sum_j (A_j * (b . s_j) - I_j)^2`` where ``s_j = -L_j`` points from the
surface toward light ``j``. Attenuation stays in the design matrix rather
than being divided out of the intensities.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import CameraIntrinsics, DepthMap, NormalMap
from .lighting import LightSource, PerPixelLighting, per_pixel_lighting


@dataclass(frozen=True)
class EstimatorConfig:
    """Observation selection and conditioning rules.

    Attributes:
        min_valid_obs: Fewest observations a pixel may be solved from.
        trim_low: Darkest usable observations dropped per pixel.
        trim_high: Brightest usable observations dropped per pixel.
        condition_limit: Largest accepted condition number of the 3x3
            normal-equation matrix.
        shadow_threshold: Observations at or below this intensity are
            treated as shadowed and never used.

    Trimming never reduces a pixel below ``min_valid_obs`` observations.
    """

    min_valid_obs: int = 3
    trim_low: int = 0
    trim_high: int = 1
    condition_limit: float = 1e8
    shadow_threshold: float = 0.0

    def __post_init__(self):
        if self.min_valid_obs < 3:
            raise ValueError("min_valid_obs must be at least 3")
        if self.trim_low < 0 or self.trim_high < 0:
            raise ValueError("trim counts must be non-negative")


@dataclass(frozen=True)
class AlbedoMap:
    data: np.ndarray
    mask: np.ndarray


def _solve_pixels(I, A, S, cfg: EstimatorConfig):
    """Solve a block of pixels. I, A: (M, P); S: (M, P, 3)."""
    m, p = I.shape
    usable = (A > 0) & (I > cfg.shadow_threshold) & np.isfinite(I)
    key = np.where(usable, I, np.inf)
    # stable sort: ties keep original image order
    order = np.argsort(key, axis=0, kind="stable")
    I = np.take_along_axis(I, order, axis=0)
    A = np.take_along_axis(A, order, axis=0)
    S = np.take_along_axis(S, order[..., None], axis=0)
    n_use = usable.sum(axis=0)
    spare = np.maximum(n_use - cfg.min_valid_obs, 0)
    drop_high = np.minimum(cfg.trim_high, spare)
    drop_low = np.minimum(cfg.trim_low, spare - drop_high)
    k = np.arange(m)[:, None]
    keep = (k >= drop_low) & (k < n_use - drop_high)

    rows = np.where(keep[..., None], A[..., None] * S, 0.0)
    target = np.where(keep, I, 0.0)
    # accumulate in sorted order so the result does not depend on input order
    M = np.zeros((p, 3, 3))
    rhs = np.zeros((p, 3))
    for j in range(m):
        a = rows[j]
        M += a[:, :, None] * a[:, None, :]
        rhs += a * target[j][:, None]

    valid = keep.sum(axis=0) >= cfg.min_valid_obs
    b = np.zeros((p, 3))
    if valid.any():
        Mv = M[valid]
        cond = np.linalg.cond(Mv)
        ok = np.isfinite(cond) & (cond <= cfg.condition_limit)
        idx = np.flatnonzero(valid)
        valid[idx[~ok]] = False
        if ok.any():
            b[idx[ok]] = np.linalg.solve(Mv[ok], rhs[idx[ok]][..., None])[..., 0]
    albedo = np.linalg.norm(b, axis=-1)
    valid &= albedo > 0
    n = b / np.where(albedo > 0, albedo, 1.0)[:, None]
    valid &= n[:, 2] < 0
    return n, albedo, valid


def estimate_normals(
    images,
    ppl: Sequence[PerPixelLighting],
    cfg: EstimatorConfig | None = None,
    mask: np.ndarray | None = None,
    workers: int = 1,
) -> tuple[NormalMap, AlbedoMap]:
    """Estimate normals and albedo from images and their per-pixel lighting.

    Args:
        images: (M, H, W) intensities, already divided by light intensity.
        ppl: One :class:`PerPixelLighting` per image.
        cfg: Observation selection rules.
        mask: Pixels to solve; defaults to the intersection of lighting masks.
        workers: Threads used over pixel blocks. Output does not depend on it.

    Pixels with too few usable observations, ill-conditioned systems or a
    solution facing away from the camera come back invalid.
    """
    cfg = cfg or EstimatorConfig()
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ValueError("images must be an (M, H, W) stack")
    if len(ppl) != images.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {len(ppl)} lighting grids")
    if images.shape[0] < cfg.min_valid_obs:
        raise ValueError(f"need at least {cfg.min_valid_obs} images, got {images.shape[0]}")
    shape = images.shape[1:]
    if mask is None:
        mask = np.logical_and.reduce([l.mask for l in ppl])
    for l in ppl:
        if l.A.shape != shape:
            raise ValueError("lighting grid size does not match images")
    mask = mask & np.logical_and.reduce([l.mask for l in ppl])

    I = images[:, mask]
    A = np.stack([l.A[mask] for l in ppl])
    S = -np.stack([l.L[mask] for l in ppl])
    npix = I.shape[1]
    if workers > 1 and npix > 0:
        bounds = np.linspace(0, npix, workers + 1).astype(int)
        blocks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda s: _solve_pixels(I[:, s], A[:, s], S[:, s], cfg), blocks))
        n = np.concatenate([q[0] for q in parts])
        albedo = np.concatenate([q[1] for q in parts])
        valid = np.concatenate([q[2] for q in parts])
    else:
        n, albedo, valid = _solve_pixels(I, A, S, cfg)

    out_mask = np.zeros(shape, dtype=bool)
    out_mask[mask] = valid
    normals = np.zeros(shape + (3,))
    normals[mask] = np.where(valid[:, None], n, 0.0)
    alb = np.zeros(shape)
    alb[mask] = np.where(valid, albedo, 0.0)
    return NormalMap(normals, out_mask), AlbedoMap(alb, out_mask.copy())


def plane_lighting(K: CameraIntrinsics, lights: Sequence[LightSource], mask: np.ndarray) -> list[PerPixelLighting]:
    """Per-pixel lighting assuming the surface is the plane at depth one."""
    plane = DepthMap(np.where(mask, 1.0, 0.0), mask)
    return [per_pixel_lighting(K, plane, l) for l in lights]


def estimate_normals_global_lights(
    images,
    lights: Sequence[LightSource],
    K: CameraIntrinsics,
    cfg: EstimatorConfig | None = None,
    mask: np.ndarray | None = None,
    workers: int = 1,
) -> tuple[NormalMap, AlbedoMap]:
    """Ablation variant: lighting from the depth-one plane, never refined."""
    if mask is None:
        mask = np.ones(K.shape, dtype=bool)
    return estimate_normals(images, plane_lighting(K, lights, mask), cfg, mask, workers)
