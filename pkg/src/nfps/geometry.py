"""Pinhole camera, depth/point/normal conversions and pyramid resampling.

Pixel centres sit at integer ``(u, v)`` with the origin at the top-left
pixel; ``u`` runs along the image width (array column) and ``v`` along the
height (array row). The camera looks down +z, so visible surfaces have
camera-facing normals with a negative z component.

Pyramid levels use the half-pixel convention: low-resolution pixel ``i``
covers high-resolution pixels ``2i`` and ``2i + 1`` and its centre sits at
high-resolution coordinate ``2i + 0.5``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, SizeError


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics without skew, in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(u, v)`` pixel-centre coordinate grids of shape (H, W)."""
        v, u = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        return u, v

    def rays(self) -> np.ndarray:
        """Back-projected rays ``K^-1 (u, v, 1)^T`` as an (H, W, 3) array."""
        u, v = self.pixel_grid()
        return np.stack(
            [(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)],
            axis=-1,
        )

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project camera-space points (..., 3) to pixel coordinates (..., 2)."""
        points = np.asarray(points, dtype=np.float64)
        z = points[..., 2]
        u = self.fx * points[..., 0] / z + self.cx
        v = self.fy * points[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1)

    def downsampled(self) -> "CameraIntrinsics":
        """Intrinsics of the 2x area-averaged image."""
        if self.width % 2 or self.height % 2:
            raise SizeError(f"cannot halve odd size {self.width}x{self.height}")
        return CameraIntrinsics(
            self.fx / 2,
            self.fy / 2,
            (self.cx - 0.5) / 2,
            (self.cy - 0.5) / 2,
            self.width // 2,
            self.height // 2,
        )

    def upsampled(self) -> "CameraIntrinsics":
        """Inverse of :meth:`downsampled`."""
        return CameraIntrinsics(
            self.fx * 2,
            self.fy * 2,
            self.cx * 2 + 0.5,
            self.cy * 2 + 0.5,
            self.width * 2,
            self.height * 2,
        )

    def padded(self, top: int, left: int, height: int, width: int) -> "CameraIntrinsics":
        """Intrinsics after placing the image at offset (top, left) in a larger canvas."""
        return CameraIntrinsics(
            self.fx, self.fy, self.cx + left, self.cy + top, width, height
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }


def _check_grid(data: np.ndarray, mask: np.ndarray, trailing: tuple[int, ...]):
    if mask.dtype != bool:
        raise TypeError("mask must be boolean")
    if data.shape[:2] != mask.shape or data.shape[2:] != trailing or mask.ndim != 2:
        raise SizeError(f"data shape {data.shape} does not match mask {mask.shape}")


@dataclass(frozen=True)
class DepthMap:
    """Masked depth grid; depth is the camera-space z coordinate."""

    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        _check_grid(self.data, self.mask, ())
        if not np.all(self.data[self.mask] > 0):
            raise ValueError("depth must be positive on the mask")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def mean(self) -> float:
        if not self.mask.any():
            raise DegenerateInputError("depth map has no valid pixels")
        return float(self.data[self.mask].mean())


@dataclass(frozen=True)
class NormalMap:
    """Masked grid of unit, camera-facing normals."""

    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        _check_grid(self.data, self.mask, (3,))
        n = self.data[self.mask]
        if n.size:
            if np.abs(np.linalg.norm(n, axis=-1) - 1.0).max() > 1e-6:
                raise ValueError("normals must be unit length on the mask")
            if np.any(n[:, 2] >= 0):
                raise ValueError("normals must face the camera (z < 0) on the mask")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


@dataclass(frozen=True)
class PointMap:
    data: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True)
class TriangleMesh:
    """Vertices in camera space and triangle vertex indices.

    ``pixels`` holds the (row, col) of the pixel each vertex came from.
    """

    vertices: np.ndarray
    faces: np.ndarray
    pixels: np.ndarray


def _check_camera(shape: tuple[int, int], K: CameraIntrinsics):
    if tuple(shape) != K.shape:
        raise SizeError(f"grid of shape {tuple(shape)} does not match camera {K.shape}")


def depth_to_points(depth: DepthMap, K: CameraIntrinsics) -> PointMap:
    """Back-project a depth map: ``X(u, v) = D(u, v) K^-1 (u, v, 1)^T``."""
    _check_camera(depth.shape, K)
    d = np.where(depth.mask, depth.data, 0.0)
    return PointMap(K.rays() * d[..., None], depth.mask.copy())


def _derivative(X: np.ndarray, mask: np.ndarray, axis: int):
    """Masked finite difference of X along an image axis.

    Central where both neighbours are valid, one-sided where only one is,
    invalid where neither is.
    """
    fwd_ok = np.zeros_like(mask)
    bwd_ok = np.zeros_like(mask)
    fwd = np.zeros_like(X)
    bwd = np.zeros_like(X)
    if axis == 1:
        fwd_ok[:, :-1] = mask[:, :-1] & mask[:, 1:]
        bwd_ok[:, 1:] = mask[:, 1:] & mask[:, :-1]
        fwd[:, :-1] = X[:, 1:] - X[:, :-1]
        bwd[:, 1:] = X[:, 1:] - X[:, :-1]
    else:
        fwd_ok[:-1] = mask[:-1] & mask[1:]
        bwd_ok[1:] = mask[1:] & mask[:-1]
        fwd[:-1] = X[1:] - X[:-1]
        bwd[1:] = X[1:] - X[:-1]
    both = fwd_ok & bwd_ok
    out = np.where(both[..., None], 0.5 * (fwd + bwd), np.where(fwd_ok[..., None], fwd, bwd))
    return out, fwd_ok | bwd_ok


def normals_from_depth(depth: DepthMap, K: CameraIntrinsics) -> NormalMap:
    """Normals of the back-projected surface via finite differences.

    Pixels without a valid neighbour along either axis are marked invalid.

    Raises:
        DegenerateInputError: if fewer than nine pixels are valid.
    """
    _check_camera(depth.shape, K)
    if depth.mask.sum() < 9:
        raise DegenerateInputError("need at least 3x3 valid depth pixels")
    X = depth_to_points(depth, K).data
    Xu, ok_u = _derivative(X, depth.mask, axis=1)
    Xv, ok_v = _derivative(X, depth.mask, axis=0)
    n = np.cross(Xu, Xv)
    norm = np.linalg.norm(n, axis=-1)
    mask = depth.mask & ok_u & ok_v & (norm > 0)
    n = n / np.where(norm > 0, norm, 1.0)[..., None]
    n = np.where((n[..., 2:3] > 0), -n, n)
    mask &= n[..., 2] < 0
    n[~mask] = 0.0
    return NormalMap(n, mask)


def _pad_linear(g: np.ndarray, axis: int) -> np.ndarray:
    n = g.shape[axis]
    first = np.take(g, [0], axis=axis)
    last = np.take(g, [n - 1], axis=axis)
    if n > 1:
        first = 2 * first - np.take(g, [1], axis=axis)
        last = 2 * last - np.take(g, [n - 2], axis=axis)
    return np.concatenate([first, g, last], axis=axis)


def _interleave(even: np.ndarray, odd: np.ndarray, axis: int) -> np.ndarray:
    out = np.stack([even, odd], axis=axis + 1)
    shape = list(even.shape)
    shape[axis] *= 2
    return out.reshape(shape)


def _upsample_axis(g: np.ndarray, axis: int) -> np.ndarray:
    gp = _pad_linear(g, axis)
    n = g.shape[axis]
    mid = np.take(gp, range(1, n + 1), axis=axis)
    prev = np.take(gp, range(0, n), axis=axis)
    nxt = np.take(gp, range(2, n + 2), axis=axis)
    return _interleave(0.75 * mid + 0.25 * prev, 0.75 * mid + 0.25 * nxt, axis)


def upsample2(grid: np.ndarray) -> np.ndarray:
    """Bilinear 2x upsampling of an (H, W) or (H, W, C) grid.

    Border pixels are linearly extrapolated so affine grids are reproduced
    exactly everywhere.
    """
    grid = np.asarray(grid, dtype=np.float64)
    return _upsample_axis(_upsample_axis(grid, 0), 1)


def _upsample_mask_axis(m: np.ndarray, axis: int) -> np.ndarray:
    n = m.shape[axis]
    first = np.take(m, [0], axis=axis)
    last = np.take(m, [n - 1], axis=axis)
    if n > 1:
        first = first & np.take(m, [1], axis=axis)
        last = last & np.take(m, [n - 2], axis=axis)
    mp = np.concatenate([first, m, last], axis=axis)
    mid = np.take(mp, range(1, n + 1), axis=axis)
    prev = np.take(mp, range(0, n), axis=axis)
    nxt = np.take(mp, range(2, n + 2), axis=axis)
    return _interleave(mid & prev, mid & nxt, axis)


def upsample_mask2(mask: np.ndarray) -> np.ndarray:
    """Mask matching :func:`upsample2`: valid iff all interpolation sources are."""
    return _upsample_mask_axis(_upsample_mask_axis(np.asarray(mask, bool), 0), 1)


def downsample2(grid: np.ndarray) -> np.ndarray:
    """2x2 area-average downsampling of an (H, W) or (H, W, C) grid."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape[:2]
    if h % 2 or w % 2:
        raise SizeError(f"downsample2 needs even dimensions, got {h}x{w}")
    return grid.reshape(h // 2, 2, w // 2, 2, *grid.shape[2:]).mean(axis=(1, 3))


def downsample_mask2(mask: np.ndarray) -> np.ndarray:
    """Mask matching :func:`downsample2`: valid iff all four children are."""
    h, w = mask.shape
    if h % 2 or w % 2:
        raise SizeError(f"downsample2 needs even dimensions, got {h}x{w}")
    return np.asarray(mask, bool).reshape(h // 2, 2, w // 2, 2).all(axis=(1, 3))


def fill_invalid(grid: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Copy each invalid pixel's value from its nearest valid pixel."""
    if mask.all():
        return np.array(grid, dtype=np.float64)
    if not mask.any():
        raise DegenerateInputError("cannot fill a grid with no valid pixels")
    _, (rows, cols) = ndimage.distance_transform_edt(~mask, return_indices=True)
    return np.asarray(grid, dtype=np.float64)[rows, cols]


def normalize_scene_scale(depth: DepthMap, lights: Sequence) -> tuple[DepthMap, list, float]:
    """Rescale depth and light positions so the mean masked depth is one.

    Returns the rescaled depth, rescaled lights and the scale (the original
    mean depth) needed to restore absolute units.
    """
    if not depth.mask.any():
        raise DegenerateInputError("depth map has no valid pixels")
    scale = depth.mean()
    data = np.where(depth.mask, depth.data / scale, depth.data)
    return DepthMap(data, depth.mask.copy()), [l.scaled(1.0 / scale) for l in lights], scale


def normalize_intensity(images, mask: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Divide every image by the mean intensity of the first one.

    Args:
        images: Sequence of (H, W) images or an (M, H, W) array.
        mask: Pixels over which the mean is taken; all pixels if omitted.

    Returns:
        The normalised (M, H, W) stack and the divisor.
    """
    stack = np.asarray(images, dtype=np.float64)
    first = stack[0] if mask is None else stack[0][mask]
    if first.size == 0:
        raise DegenerateInputError("first image has no valid pixels")
    factor = float(first.mean())
    if not factor > 0:
        raise DegenerateInputError("first image has zero mean intensity")
    return stack / factor, factor


def depth_to_mesh(depth: DepthMap, K: CameraIntrinsics) -> TriangleMesh:
    """Triangulate the valid pixels of a depth map.

    Every valid pixel becomes a vertex; each 2x2 block of valid pixels gives
    two triangles wound so that their normals face the camera.
    """
    X = depth_to_points(depth, K).data
    m = depth.mask
    index = np.full(m.shape, -1, dtype=np.int64)
    index[m] = np.arange(int(m.sum()))
    cell = m[:-1, :-1] & m[:-1, 1:] & m[1:, :-1] & m[1:, 1:]
    a = index[:-1, :-1][cell]
    b = index[:-1, 1:][cell]
    c = index[1:, :-1][cell]
    d = index[1:, 1:][cell]
    faces = np.concatenate(
        [np.stack([a, c, b], axis=1), np.stack([b, c, d], axis=1)], axis=0
    )
    return TriangleMesh(X[m], faces, np.argwhere(m))


def rescaled(depth: DepthMap, factor: float) -> DepthMap:
    """Depth map multiplied by a positive factor on its mask."""
    return replace(depth, data=np.where(depth.mask, depth.data * factor, depth.data))
