"""Recursive multi-resolution reconstruction.

Scale 0 lights the depth-one plane at the base resolution, estimates
normals and integrates them. Every later scale doubles the resolution,
relights the upsampled previous depth, re-estimates normals from the
images at that scale and integrates them on top of the previous depth.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import NfpsError
from .estimator import AlbedoMap, EstimatorConfig, estimate_normals, plane_lighting
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    NormalMap,
    downsample2,
    downsample_mask2,
    fill_invalid,
    normalize_intensity,
    upsample2,
)
from .integrator import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    integrate,
    integrate_coarse_to_fine,
    integrate_from,
    perspective_pq,
)
from .lighting import LightSource, per_pixel_lighting
from .metrics import mean_angular_error, mean_depth_error

logger = logging.getLogger(__name__)

ABLATION_MODES = ("per_pixel", "global_lights")


@dataclass(frozen=True)
class PipelineConfig:
    """Reconstruction settings.

    ``iterations_per_scale`` above one repeats lighting, normal estimation
    and integration within each scale using the freshest depth.
    ``workers`` splits per-pixel work over threads; results do not depend
    on it.
    """

    r0: int = 64
    iterations_per_scale: int = 1
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    cg_tol: float = DEFAULT_TOL
    cg_max_iter: int = DEFAULT_MAX_ITER
    weight_cap: float | None = None
    ablation_mode: str = "per_pixel"
    normalize_intensity: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.r0 < 16 or self.r0 & (self.r0 - 1):
            raise ValueError(f"r0 must be a power of two >= 16, got {self.r0}")
        if self.iterations_per_scale < 1:
            raise ValueError("iterations_per_scale must be >= 1")
        if self.ablation_mode not in ABLATION_MODES:
            raise ValueError(f"ablation_mode must be one of {ABLATION_MODES}")


@dataclass
class ReconstructionResult:
    """Per-scale outputs on the padded square grid, coarsest first.

    ``crop`` is ``(top, left, height, width)`` of the caller's image inside
    the padded grid; :attr:`normals` and :attr:`depth` apply it.
    """

    normals_per_scale: list[NormalMap]
    depth_per_scale: list[DepthMap]
    albedo_padded: AlbedoMap
    cameras: list[CameraIntrinsics]
    crop: tuple[int, int, int, int]
    mean_depth: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    def _crop(self, a: np.ndarray) -> np.ndarray:
        t, l, h, w = self.crop
        return a[t : t + h, l : l + w]

    @property
    def normals(self) -> NormalMap:
        n = self.normals_per_scale[-1]
        return NormalMap(self._crop(n.data).copy(), self._crop(n.mask).copy())

    @property
    def depth(self) -> DepthMap:
        d = self.depth_per_scale[-1]
        return DepthMap(self._crop(d.data) * self.mean_depth, self._crop(d.mask).copy())

    @property
    def albedo(self) -> AlbedoMap:
        a = self.albedo_padded
        return AlbedoMap(self._crop(a.data).copy(), self._crop(a.mask).copy())

    @property
    def resolutions(self) -> list[int]:
        return [n.shape[0] for n in self.normals_per_scale]


def _padded_size(h: int, w: int, r0: int) -> int:
    size = r0
    while size < max(h, w):
        size *= 2
    return size


def _pyramid(images: np.ndarray, mask: np.ndarray, K: CameraIntrinsics, levels: int):
    """Image stacks, masks and cameras from coarsest to finest."""
    stacks, masks, cams = [images], [mask], [K]
    for _ in range(levels - 1):
        stacks.append(np.stack([downsample2(im) for im in stacks[-1]]))
        masks.append(downsample_mask2(masks[-1]))
        cams.append(cams[-1].downsampled())
    return stacks[::-1], masks[::-1], cams[::-1]


def _upsampled_depth(depth: DepthMap, mask: np.ndarray) -> DepthMap:
    filled = fill_invalid(np.where(depth.mask, depth.data, 1.0), depth.mask)
    up = np.maximum(upsample2(filled), 1e-3 * filled.min())
    return DepthMap(np.where(mask, up, 0.0), mask)


def reconstruct(
    images,
    lights: Sequence[LightSource],
    K: CameraIntrinsics,
    cfg: PipelineConfig | None = None,
    mask: np.ndarray | None = None,
    mean_depth: float = 1.0,
) -> ReconstructionResult:
    """Recover normals, depth and albedo from calibrated near-field images.

    Args:
        images: (M, H, W) array, sequence of images, or an
            :class:`~nfps.renderer.ImageStack` (whose mask is used when
            ``mask`` is omitted).
        lights: One light per image, positions in the same units as
            ``mean_depth``.
        K: Camera intrinsics of the input images.
        cfg: Pipeline settings.
        mask: Valid pixels; all pixels if omitted.
        mean_depth: Known mean distance to the object. Lights are divided
            by it internally and the returned :attr:`depth` is scaled back.

    Raises:
        ValueError: on inconsistent inputs.
        NfpsError: from the estimator or integrator, annotated with the scale.
    """
    cfg = cfg or PipelineConfig()
    if hasattr(images, "images") and hasattr(images, "mask"):
        if mask is None:
            mask = images.mask
        images = images.images
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ValueError("images must be an (M, H, W) stack")
    m, h, w = images.shape
    if m != len(lights):
        raise ValueError(f"{m} images but {len(lights)} lights")
    if m < cfg.estimator.min_valid_obs:
        raise ValueError(f"need at least {cfg.estimator.min_valid_obs} images, got {m}")
    if (h, w) != K.shape:
        raise ValueError(f"images are {h}x{w} but camera is {K.height}x{K.width}")
    mask = np.ones((h, w), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (h, w):
        raise ValueError("mask size does not match images")

    lights = [l.scaled(1.0 / mean_depth) for l in lights]
    images = images / np.array([l.intensity for l in lights])[:, None, None]
    if cfg.normalize_intensity:
        images, _ = normalize_intensity(images, mask)

    size = _padded_size(h, w, cfg.r0)
    top, left = (size - h) // 2, (size - w) // 2
    padded = np.zeros((m, size, size))
    padded[:, top : top + h, left : left + w] = images
    pmask = np.zeros((size, size), dtype=bool)
    pmask[top : top + h, left : left + w] = mask
    Kp = K.padded(top, left, size, size)
    levels = int(np.log2(size // cfg.r0)) + 1
    stacks, masks, cams = _pyramid(padded, pmask, Kp, levels)

    normals_out, depths_out, diag_scales = [], [], []
    albedo = None
    depth = None
    for i in range(levels):
        t0 = time.perf_counter()
        Ki, maski, imgs = cams[i], masks[i], stacks[i]
        scale_diag = {"scale": i, "resolution": Ki.width, "passes": []}
        if not maski.any():
            raise ValueError(f"scale {i}: mask is empty at resolution {Ki.width}")
        if i == 0:
            light_depth = DepthMap(np.where(maski, 1.0, 0.0), maski)
        else:
            light_depth = _upsampled_depth(depth, maski)
        coarse = depth
        for it in range(cfg.iterations_per_scale):
            try:
                if cfg.ablation_mode == "global_lights":
                    ppl = plane_lighting(Ki, lights, maski)
                else:
                    ppl = [per_pixel_lighting(Ki, light_depth, l) for l in lights]
                normals, albedo = estimate_normals(imgs, ppl, cfg.estimator, maski, cfg.workers)
                grad = perspective_pq(normals, Ki)
                opts = dict(tol=cfg.cg_tol, max_iter=cfg.cg_max_iter, weight_cap=cfg.weight_cap, return_info=True)
                if it > 0:
                    U0 = np.log(fill_invalid(np.where(depth.mask, depth.data, 1.0), depth.mask))
                    depth, info = integrate_from(grad, U0, 1.0, **opts)
                elif coarse is None:
                    depth, info = integrate(grad, 1.0, **opts)
                else:
                    depth, info = integrate_coarse_to_fine(grad, coarse, 1.0, **opts)
            except NfpsError as exc:
                exc.args = (f"scale {i} (resolution {Ki.width}): {exc.args[0] if exc.args else exc}",) + exc.args[1:]
                raise
            scale_diag["passes"].append(
                {
                    "invalid_normals": int((maski & ~normals.mask).sum()),
                    "cg_iterations": info.iterations,
                    "cg_residual": info.cg_residual,
                    "lsq_residual": info.lsq_residual,
                    "components": info.components,
                }
            )
            light_depth = DepthMap(
                np.where(maski, fill_invalid(np.where(depth.mask, depth.data, 1.0), depth.mask), 0.0), maski
            )
        scale_diag["seconds"] = time.perf_counter() - t0
        logger.debug("scale %d: %s", i, scale_diag)
        normals_out.append(normals)
        depths_out.append(depth)
        diag_scales.append(scale_diag)

    diagnostics = {
        "ablation_mode": cfg.ablation_mode,
        "iterations_per_scale": cfg.iterations_per_scale,
        "r0": cfg.r0,
        "padded_size": size,
        "scales": diag_scales,
    }
    return ReconstructionResult(
        normals_out, depths_out, albedo, cams, (top, left, h, w), mean_depth, diagnostics
    )


def _to_size(grid: np.ndarray, mask: np.ndarray, size: int):
    data = fill_invalid(grid, mask) if mask.any() else grid
    while data.shape[0] < size:
        data = upsample2(data)
    return data


def upsample_eval(
    result: ReconstructionResult,
    gt_normals: NormalMap,
    gt_depth: DepthMap | None = None,
    align: str = "none",
) -> list[dict]:
    """Score every scale after bilinear upsampling to the final resolution.

    All rows share one evaluation mask: the ground-truth mask intersected
    with the final-scale prediction mask, so the final row equals the
    directly computed final score.
    """
    size = result.resolutions[-1]
    final_n = result.normals
    eval_mask = gt_normals.mask & final_n.mask
    if gt_depth is not None:
        eval_mask &= gt_depth.mask & result.depth.mask
    t, l, h, w = result.crop
    rows = []
    for i, (n, d) in enumerate(zip(result.normals_per_scale, result.depth_per_scale)):
        nu = _to_size(n.data, n.mask, size)[t : t + h, l : l + w]
        norm = np.linalg.norm(nu, axis=-1, keepdims=True)
        if n.shape[0] != size:
            # interpolated normals leave the unit sphere; the final scale is used as is
            nu = nu / np.where(norm > 0, norm, 1.0)
        ok = eval_mask & (norm[..., 0] > 0) & (nu[..., 2] < 0)
        nu[~ok] = 0.0
        row = {
            "scale": i,
            "resolution": n.shape[0],
            "mae_deg": mean_angular_error(NormalMap(nu, ok), gt_normals),
        }
        if gt_depth is not None:
            du = _to_size(np.where(d.mask, d.data, 1.0), d.mask, size)[t : t + h, l : l + w]
            du = du * result.mean_depth
            okd = ok & (du > 0)
            row["mze"] = mean_depth_error(DepthMap(np.where(okd, du, 0.0), okd), gt_depth, align)
        rows.append(row)
    return rows
