"""Near-field photometric stereo with recursive multi-resolution lighting.

Typical use::

    from nfps import make_fixture, render, reconstruct
    stack, gt_depth, gt_normals = render(make_fixture("sphere", 256, 10, seed=7))
    result = reconstruct(stack, stack.lights, stack.K)
"""

from .errors import ConvergenceError, DegenerateInputError, NfpsError, SingularLightError, SizeError
from .estimator import AlbedoMap, EstimatorConfig, estimate_normals, estimate_normals_global_lights
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    NormalMap,
    PointMap,
    TriangleMesh,
    depth_to_mesh,
    depth_to_points,
    downsample2,
    normalize_intensity,
    normalize_scene_scale,
    normals_from_depth,
    upsample2,
)
from .integrator import GradientField, integrate, integrate_coarse_to_fine, perspective_pq
from .lighting import LightSource, PerPixelLighting, in_admissible_region, per_pixel_lighting, sample_admissible_light
from .metrics import gt_self_consistency, mean_angular_error, mean_depth_error, score
from .pipeline import PipelineConfig, ReconstructionResult, reconstruct, upsample_eval
from .renderer import ImageStack, Material, NoiseConfig, Scene, brdf_eval, make_fixture, render

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
