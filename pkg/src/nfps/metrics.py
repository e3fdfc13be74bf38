"""Normal and depth error metrics."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, SizeError
from .geometry import CameraIntrinsics, DepthMap, NormalMap, normals_from_depth


def _eval_mask(pred, gt) -> np.ndarray:
    if pred.shape != gt.shape:
        raise SizeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    mask = pred.mask & gt.mask
    if not mask.any():
        raise DegenerateInputError("prediction and ground truth share no valid pixels")
    return mask


def _angle_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # atan2 stays accurate for tiny angles, where arccos of a rounded dot is not
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    return np.degrees(np.arctan2(cross, np.sum(a * b, axis=-1)))


def angular_error_map(pred: NormalMap, gt: NormalMap) -> np.ndarray:
    """Per-pixel angle in degrees; NaN outside the shared mask."""
    mask = _eval_mask(pred, gt)
    return np.where(mask, _angle_deg(pred.data, gt.data), np.nan)


def mean_angular_error(pred: NormalMap, gt: NormalMap) -> float:
    """Mean angle between normals, in degrees, over the shared mask."""
    mask = _eval_mask(pred, gt)
    return float(_angle_deg(pred.data[mask], gt.data[mask]).mean())


def mean_depth_error(pred: DepthMap, gt: DepthMap, align: str = "none") -> float:
    """Mean absolute depth difference over the shared mask.

    With ``align="mean"`` the prediction is first scaled so its mean matches
    the ground-truth mean on that mask.
    """
    if align not in ("none", "mean"):
        raise ValueError(f"align must be 'none' or 'mean', got {align!r}")
    mask = _eval_mask(pred, gt)
    p = pred.data[mask]
    g = gt.data[mask]
    if align == "mean":
        p = p * (g.mean() / p.mean())
    return float(np.abs(p - g).mean())


def valid_fraction(pred, gt) -> float:
    """Share of ground-truth pixels that the prediction also covers."""
    total = int(gt.mask.sum())
    return float((pred.mask & gt.mask).sum() / total) if total else 0.0


def gt_self_consistency(gt_depth: DepthMap, gt_normals: NormalMap, K: CameraIntrinsics) -> tuple[float, float]:
    """Discretisation floor of the ground truth itself.

    Returns the angular error of normals differentiated from the true depth
    and the depth error of the true normals integrated back to depth.
    """
    from .integrator import integrate, perspective_pq

    diff_mae = mean_angular_error(normals_from_depth(gt_depth, K), gt_normals)
    integrated = integrate(perspective_pq(gt_normals, K), gt_depth.mean())
    return diff_mae, mean_depth_error(integrated, gt_depth)


def score(pred_normals: NormalMap, gt_normals: NormalMap, pred_depth: DepthMap | None = None,
          gt_depth: DepthMap | None = None, align: str = "none") -> dict:
    """Scores in the JSON layout written by ``evaluate``."""
    out = {
        "mae_deg": mean_angular_error(pred_normals, gt_normals),
        "valid_fraction": valid_fraction(pred_normals, gt_normals),
    }
    if pred_depth is not None and gt_depth is not None:
        out["mze"] = mean_depth_error(pred_depth, gt_depth, align)
        out["depth_valid_fraction"] = valid_fraction(pred_depth, gt_depth)
    return out
