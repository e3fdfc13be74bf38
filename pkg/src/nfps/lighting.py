"""Anisotropic point lights and per-pixel lighting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularLightError
from .geometry import CameraIntrinsics, DepthMap, depth_to_points

ADMISSIBLE_RADIUS = 0.75
ADMISSIBLE_HALF_DEPTH = 0.15
ADMISSIBLE_MAX_ANGLE_DEG = 30.0


@dataclass(frozen=True)
class LightSource:
    """Point light at ``position`` with a spotlight lobe along ``direction``.

    ``mu`` is the angular falloff exponent; ``mu == 0`` is isotropic.
    """

    position: tuple[float, float, float]
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    mu: float = 0.0
    intensity: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(x) for x in self.position))
        object.__setattr__(self, "direction", tuple(float(x) for x in self.direction))
        if len(self.position) != 3 or len(self.direction) != 3:
            raise ValueError("position and direction must be 3-vectors")
        if not all(math.isfinite(x) for x in self.position + self.direction):
            raise ValueError("light parameters must be finite")
        if abs(math.sqrt(sum(x * x for x in self.direction)) - 1.0) > 1e-9:
            raise ValueError(f"direction {self.direction} is not a unit vector")
        if not self.mu >= 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if not self.intensity > 0:
            raise ValueError(f"intensity must be > 0, got {self.intensity}")

    @property
    def p(self) -> np.ndarray:
        return np.array(self.position)

    @property
    def d(self) -> np.ndarray:
        return np.array(self.direction)

    def scaled(self, s: float) -> "LightSource":
        """Same light with its position multiplied by ``s``."""
        return LightSource(tuple(s * x for x in self.position), self.direction, self.mu, self.intensity)

    def to_dict(self) -> dict:
        return {
            "position": list(self.position),
            "direction": list(self.direction),
            "mu": self.mu,
            "intensity": self.intensity,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "LightSource":
        unknown = set(obj) - {"position", "direction", "mu", "intensity"}
        if unknown:
            raise ValueError(f"unknown light fields: {sorted(unknown)}")
        d = np.asarray(obj.get("direction", (0.0, 0.0, 1.0)), dtype=np.float64)
        norm = np.linalg.norm(d)
        if not norm > 0:
            raise ValueError("light direction must be nonzero")
        if abs(norm - 1.0) > 1e-12:
            # unit directions are kept bit-exact so files round-trip
            d = d / norm
        return cls(
            tuple(obj["position"]),
            tuple(d),
            float(obj.get("mu", 0.0)),
            float(obj.get("intensity", 1.0)),
        )


@dataclass(frozen=True)
class PerPixelLighting:
    """Light travel direction ``L`` (H, W, 3) and attenuation ``A`` (H, W)."""

    L: np.ndarray
    A: np.ndarray
    mask: np.ndarray


def per_pixel_lighting(K: CameraIntrinsics, depth: DepthMap, light: LightSource) -> PerPixelLighting:
    """Direction and attenuation of one light at every surface point.

    ``L = normalize(X - p)`` and ``A = (L . d)^mu / |X - p|^2``, with ``A``
    clamped to zero behind the spotlight lobe when ``mu > 0``.

    Raises:
        SingularLightError: if a valid surface point lies within 1e-9 of the light.
    """
    X = depth_to_points(depth, K).data
    mask = depth.mask
    diff = X - light.p
    dist2 = np.einsum("...i,...i->...", diff, diff)
    if mask.any() and dist2[mask].min() < 1e-18:
        raise SingularLightError(f"light at {light.position} touches the surface")
    safe = np.where(mask, dist2, 1.0)
    L = diff / np.sqrt(safe)[..., None]
    cos = L @ light.d
    if light.mu == 0:
        lobe = np.ones_like(cos)
    else:
        lobe = np.where(cos > 0, np.maximum(cos, 0.0) ** light.mu, 0.0)
    A = lobe / safe
    L[~mask] = 0.0
    A[~mask] = 0.0
    return PerPixelLighting(L, A, mask.copy())


def in_admissible_region(light: LightSource) -> bool:
    """Whether a light sits in the admissible cylinder and cone.

    Positions must lie within radius 0.75 of the optical axis and within
    0.15 of the camera plane; directions within 30 degrees of +z. Units
    are mean-depth-one scene coordinates.
    """
    x, y, z = light.position
    if math.hypot(x, y) > ADMISSIBLE_RADIUS:
        return False
    if abs(z) > ADMISSIBLE_HALF_DEPTH:
        return False
    return light.direction[2] >= math.cos(math.radians(ADMISSIBLE_MAX_ANGLE_DEG)) - 1e-12


def sample_admissible_light(
    rng: int | np.random.Generator | None = None, mu_range: tuple[float, float] = (0.0, 2.0)
) -> LightSource:
    """Draw a light uniformly from the admissible region.

    Position is uniform in the cylinder, direction uniform over the 30 degree
    cone around +z and ``mu`` uniform in ``mu_range``.
    """
    rng = np.random.default_rng(rng)
    r = ADMISSIBLE_RADIUS * math.sqrt(rng.random())
    theta = 2 * math.pi * rng.random()
    z = rng.uniform(-ADMISSIBLE_HALF_DEPTH, ADMISSIBLE_HALF_DEPTH)
    cos_max = math.cos(math.radians(ADMISSIBLE_MAX_ANGLE_DEG))
    cos_t = rng.uniform(cos_max, 1.0)
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = 2 * math.pi * rng.random()
    direction = (sin_t * math.cos(phi), sin_t * math.sin(phi), cos_t)
    norm = math.sqrt(sum(c * c for c in direction))
    return LightSource(
        (r * math.cos(theta), r * math.sin(theta), z),
        tuple(c / norm for c in direction),
        rng.uniform(*mu_range),
    )


def sample_admissible_lights(
    n: int, seed: int | np.random.Generator | None = None, mu_range: tuple[float, float] = (0.0, 2.0)
) -> list[LightSource]:
    rng = np.random.default_rng(seed)
    return [sample_admissible_light(rng, mu_range) for _ in range(n)]
