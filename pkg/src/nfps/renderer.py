"""Forward renderer for analytic near-field scenes.

Images follow ``I = A * B(w_v, w_l) * max(0, N . -L) * intensity + eta``
where ``A`` and ``L`` come from :func:`nfps.lighting.per_pixel_lighting`.
Shadows cast by other parts of the surface are not traced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .geometry import CameraIntrinsics, DepthMap, NormalMap
from .lighting import LightSource, per_pixel_lighting, sample_admissible_lights

FRESNEL_F0 = 0.04


# -- surfaces -----------------------------------------------------------------


def _camera_facing(n: np.ndarray) -> np.ndarray:
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    return np.where(n[..., 2:3] > 0, -n, n)


@dataclass(frozen=True)
class Plane:
    """The plane ``z = a x + b y + c`` in camera coordinates."""

    a: float
    b: float
    c: float

    def evaluate(self, K: CameraIntrinsics):
        r = K.rays()
        denom = 1.0 - self.a * r[..., 0] - self.b * r[..., 1]
        mask = denom > 0
        depth = np.where(mask, self.c / np.where(mask, denom, 1.0), 0.0)
        mask &= depth > 0
        n = np.broadcast_to(_camera_facing(np.array([self.a, self.b, -1.0])), r.shape).copy()
        return depth, n, mask

    def scaled(self, s: float) -> "Plane":
        return Plane(self.a, self.b, self.c * s)


@dataclass(frozen=True)
class SphereCap:
    """Front cap of a sphere, limited to normals within ``max_angle_deg`` of the view ray."""

    center: tuple[float, float, float]
    radius: float
    max_angle_deg: float = 70.0

    def evaluate(self, K: CameraIntrinsics):
        r = K.rays()
        C = np.asarray(self.center, dtype=np.float64)
        rr = np.einsum("...i,...i->...", r, r)
        rc = r @ C
        disc = rc * rc - rr * (C @ C - self.radius**2)
        hit = disc > 0
        t = (rc - np.sqrt(np.where(hit, disc, 0.0))) / rr
        X = r * t[..., None]
        n = (X - C) / self.radius
        view = -X / np.linalg.norm(X, axis=-1, keepdims=True)
        cos_view = np.einsum("...i,...i->...", n, view)
        mask = hit & (t > 0) & (cos_view >= math.cos(math.radians(self.max_angle_deg)))
        depth = np.where(mask, t, 0.0)
        n = np.where(mask[..., None], n, 0.0)
        return depth, n, mask

    def scaled(self, s: float) -> "SphereCap":
        return SphereCap(tuple(s * c for c in self.center), self.radius * s, self.max_angle_deg)


@dataclass(frozen=True)
class Sinusoid:
    """Egg-crate relief defined directly over pixels.

    ``D = base * (1 + amplitude * sin(2 pi f x) * sin(2 pi f y))`` with
    ``x, y`` the pixel offsets from the principal point divided by the
    larger image side.
    """

    amplitude: float
    frequency: float
    base: float = 1.0

    def evaluate(self, K: CameraIntrinsics):
        u, v = K.pixel_grid()
        side = max(K.width, K.height)
        w = 2 * math.pi * self.frequency
        x = (u - K.cx) / side
        y = (v - K.cy) / side
        sx, cx_ = np.sin(w * x), np.cos(w * x)
        sy, cy_ = np.sin(w * y), np.cos(w * y)
        depth = self.base * (1 + self.amplitude * sx * sy)
        d_u = self.base * self.amplitude * w / side * cx_ * sy
        d_v = self.base * self.amplitude * w / side * sx * cy_
        r = K.rays()
        Xu = d_u[..., None] * r
        Xu[..., 0] += depth / K.fx
        Xv = d_v[..., None] * r
        Xv[..., 1] += depth / K.fy
        n = _camera_facing(np.cross(Xu, Xv))
        return depth, n, depth > 0

    def scaled(self, s: float) -> "Sinusoid":
        return Sinusoid(self.amplitude, self.frequency, self.base * s)


Surface = Plane | SphereCap | Sinusoid


# -- materials ----------------------------------------------------------------


@dataclass(frozen=True)
class Material:
    """Albedo and roughness (scalars or (H, W) grids) and a reflectance model.

    ``lambertian`` returns the albedo itself (no 1/pi); ``cook_torrance``
    adds a GGX specular lobe with Fresnel F0 = 0.04 on top of that diffuse
    term, using ``roughness`` directly as the GGX alpha.
    """

    albedo: float | np.ndarray = 1.0
    roughness: float | np.ndarray = 0.5
    model: str = "lambertian"

    def __post_init__(self):
        if self.model not in ("lambertian", "cook_torrance"):
            raise ValueError(f"unknown reflectance model {self.model!r}")
        a = np.asarray(self.albedo)
        r = np.asarray(self.roughness)
        if np.any(a <= 0) or np.any(a > 1):
            raise ValueError("albedo must lie in (0, 1]")
        if np.any(r <= 0) or np.any(r > 1):
            raise ValueError("roughness must lie in (0, 1]")


def _dot(a, b):
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def _brdf(model, albedo, roughness, wl, wv, n):
    albedo = np.asarray(albedo, dtype=np.float64)
    if model == "lambertian":
        return np.broadcast_to(albedo, np.broadcast_shapes(albedo.shape, np.shape(wl)[:-1])).copy()
    alpha2 = np.asarray(roughness, dtype=np.float64) ** 2
    h = np.asarray(wl) + np.asarray(wv)
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-300)
    nl = _dot(n, wl)
    nv = _dot(n, wv)
    nh = np.clip(_dot(n, h), 0.0, 1.0)
    vh = np.clip(_dot(wv, h), 0.0, 1.0)
    dist = alpha2 / (math.pi * (nh * nh * (alpha2 - 1) + 1) ** 2)
    fresnel = FRESNEL_F0 + (1 - FRESNEL_F0) * (1 - vh) ** 5

    def g1(c):
        c = np.maximum(c, 0.0)
        return 2 * c / np.maximum(c + np.sqrt(alpha2 + (1 - alpha2) * c * c), 1e-300)

    lit = (nl > 0) & (nv > 0)
    denom = 4 * np.where(lit, nl * nv, 1.0)
    spec = np.where(lit, dist * fresnel * g1(nl) * g1(nv) / denom, 0.0)
    return albedo + spec


def brdf_eval(material: Material, w_l, w_v, n, pixel: tuple[int, int] | None = None):
    """Evaluate the material BRDF for unit vectors toward light and viewer.

    ``pixel`` selects the (row, col) entry of grid-valued albedo/roughness.
    """
    albedo, roughness = material.albedo, material.roughness
    if pixel is not None:
        if np.ndim(albedo) == 2:
            albedo = albedo[pixel]
        if np.ndim(roughness) == 2:
            roughness = roughness[pixel]
    out = _brdf(material.model, albedo, roughness, np.asarray(w_l, float), np.asarray(w_v, float), np.asarray(n, float))
    return float(out) if np.ndim(out) == 0 else out


# -- scenes and rendering -----------------------------------------------------


@dataclass(frozen=True)
class Scene:
    """Analytic surface, material, lights and camera.

    ``mask`` optionally restricts the region of interest further than the
    surface's own support.
    """

    surface: Surface
    material: Material
    lights: tuple[LightSource, ...]
    K: CameraIntrinsics
    mask: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "lights", tuple(self.lights))

    def ground_truth(self) -> tuple[DepthMap, NormalMap]:
        depth, normals, mask = self.surface.evaluate(self.K)
        if self.mask is not None:
            mask = mask & self.mask
        depth = np.where(mask, depth, 0.0)
        normals = np.where(mask[..., None], normals, 0.0)
        return DepthMap(depth, mask), NormalMap(normals, mask)

    def mean_depth(self) -> float:
        return self.ground_truth()[0].mean()

    def scaled(self, s: float) -> "Scene":
        """Scene with geometry and light positions multiplied by ``s``."""
        return replace(
            self,
            surface=self.surface.scaled(s),
            lights=tuple(l.scaled(s) for l in self.lights),
        )

    def normalized(self) -> "Scene":
        """Scene rescaled so the mean masked depth is one."""
        return self.scaled(1.0 / self.mean_depth())


@dataclass(frozen=True)
class NoiseConfig:
    """Stand-in for the unmodelled indirect term.

    ``sigma`` is the standard deviation of additive Gaussian noise as a
    fraction of each image's maximum; ``zero_patches`` square patches of
    side ``patch_size`` are blanked per image.
    """

    sigma: float = 0.0
    zero_patches: int = 0
    patch_size: int = 16
    seed: int = 0


@dataclass(frozen=True)
class ImageStack:
    images: np.ndarray
    lights: tuple[LightSource, ...]
    K: CameraIntrinsics
    mask: np.ndarray

    def __post_init__(self):
        images = np.asarray(self.images)
        if images.ndim != 3 or images.shape[0] < 1:
            raise ValueError("images must be a non-empty (M, H, W) stack")
        if images.shape[0] != len(self.lights):
            raise ValueError(f"{images.shape[0]} images but {len(self.lights)} lights")
        if images.shape[1:] != self.K.shape or self.mask.shape != self.K.shape:
            raise ValueError("image, mask and camera sizes disagree")
        object.__setattr__(self, "lights", tuple(self.lights))

    def __len__(self) -> int:
        return len(self.lights)


def render(scene: Scene, noise: NoiseConfig | None = None) -> tuple[ImageStack, DepthMap, NormalMap]:
    """Render every light of the scene; returns the stack and ground truth."""
    noise = noise or NoiseConfig()
    depth, normals = scene.ground_truth()
    mask = depth.mask
    X = depth.data[..., None] * scene.K.rays()
    dist = np.linalg.norm(X, axis=-1, keepdims=True)
    w_v = -X / np.where(dist > 0, dist, 1.0)
    rng = np.random.default_rng(noise.seed)
    images = []
    for light in scene.lights:
        ppl = per_pixel_lighting(scene.K, depth, light)
        w_l = -ppl.L
        shading = np.maximum(0.0, np.einsum("...i,...i->...", normals.data, w_l))
        B = _brdf(scene.material.model, scene.material.albedo, scene.material.roughness, w_l, w_v, normals.data)
        img = ppl.A * B * shading * light.intensity
        img = np.where(mask, img, 0.0)
        if noise.sigma > 0:
            img = img + noise.sigma * img.max() * rng.standard_normal(img.shape)
        for _ in range(noise.zero_patches):
            s = noise.patch_size
            r0 = int(rng.integers(0, max(1, img.shape[0] - s + 1)))
            c0 = int(rng.integers(0, max(1, img.shape[1] - s + 1)))
            img[r0 : r0 + s, c0 : c0 + s] = 0.0
        images.append(np.where(mask, np.maximum(img, 0.0), 0.0))
    return ImageStack(np.stack(images), scene.lights, scene.K, mask.copy()), depth, normals


# -- fixtures -----------------------------------------------------------------

FIXTURES = ("plane", "sphere", "bumps")


def fixture_camera(size: int) -> CameraIntrinsics:
    f = 1.1 * size
    c = (size - 1) / 2
    return CameraIntrinsics(f, f, c, c, size, size)


def disk_mask(K: CameraIntrinsics, radius_fraction: float) -> np.ndarray:
    u, v = K.pixel_grid()
    r = radius_fraction * min(K.width, K.height)
    return (u - K.cx) ** 2 + (v - K.cy) ** 2 <= r * r


def make_fixture(
    name: str,
    size: int = 256,
    num_lights: int = 10,
    seed: int = 0,
    *,
    albedo: float | np.ndarray = 0.8,
    amplitude: float = 0.1,
    frequency: float = 2.0,
    mu_range: tuple[float, float] = (0.0, 2.0),
) -> Scene:
    """Deterministic synthetic scene with admissible lights and mean depth one.

    ``amplitude`` and ``frequency`` shape the ``bumps`` relief only.
    """
    if name not in FIXTURES:
        raise ValueError(f"unknown fixture {name!r}; expected one of {FIXTURES}")
    if size < 64:
        raise ValueError("fixture size must be at least 64")
    if num_lights < 3:
        raise ValueError("fixtures need at least 3 lights")
    K = fixture_camera(size)
    mask = None
    if name == "plane":
        surface: Surface = Plane(0.0, 0.0, 1.0)
    elif name == "sphere":
        surface = SphereCap((0.0, 0.0, 1.5), 0.6, 60.0)
    else:
        surface = Sinusoid(amplitude, frequency)
        mask = disk_mask(K, 0.45)
    lights = sample_admissible_lights(num_lights, seed, mu_range)
    scene = Scene(surface, Material(albedo), tuple(lights), K, mask)
    # rescale geometry only; lights are already in mean-depth-one units
    return replace(scene, surface=surface.scaled(1.0 / scene.mean_depth()))
