"""Perspective normal integration over masked, irregular domains.

Depth is recovered through its logarithm ``U = ln D``. After perspective
correction the normals give ``grad U = (p, q)`` in normalised image units
(pixel offsets divided by the larger image side), so one pixel step
changes ``U`` by ``h * p`` with ``h = 1 / max(H, W)``.

Each pair of 4-adjacent valid pixels contributes one equation
``U[next] - U[cur] = h * (g[cur] + g[next]) / 2``; the least-squares
normal equations form a masked Poisson system solved by Jacobi-
preconditioned conjugate gradients, one connected component at a time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .errors import ConvergenceError, DegenerateInputError, SizeError
from .geometry import CameraIntrinsics, DepthMap, NormalMap, fill_invalid, upsample2, upsample_mask2

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
GRAZING_EPS = 1e-9


@dataclass(frozen=True)
class GradientField:
    """Log-depth gradient ``(p, q)`` per normalised image unit."""

    p: np.ndarray
    q: np.ndarray
    mask: np.ndarray
    h: float

    def __post_init__(self):
        if self.p.shape != self.mask.shape or self.q.shape != self.mask.shape:
            raise SizeError("p, q and mask shapes differ")
        if not self.h > 0:
            raise ValueError("grid step must be positive")
        if not (np.isfinite(self.p[self.mask]).all() and np.isfinite(self.q[self.mask]).all()):
            raise ValueError("gradient field must be finite on its mask")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


@dataclass
class IntegrationInfo:
    """Solver diagnostics.

    ``lsq_residual`` is the norm of the unexplained edge differences and
    ``rhs_norm`` the norm of the edge differences themselves.
    """

    iterations: int = 0
    cg_residual: float = 0.0
    lsq_residual: float = 0.0
    rhs_norm: float = 0.0
    components: int = 0
    dropped_pixels: int = 0
    component_iterations: list[int] = field(default_factory=list)


def perspective_pq(normals: NormalMap, K: CameraIntrinsics) -> GradientField:
    """Convert camera-facing normals to the log-depth gradient field.

    With coordinates re-centred at the principal point and expressed in
    normalised units, ``p = -N1 / (u N1 + v N2 + f N3)`` and likewise for
    ``q`` with ``N2`` (``f`` splits into ``fx``/``fy`` for non-square
    pixels). Pixels whose denominator falls below 1e-9 in magnitude are
    treated as grazing and dropped.
    """
    if normals.shape != K.shape:
        raise SizeError(f"normals of shape {normals.shape} do not match camera {K.shape}")
    side = max(K.width, K.height)
    h = 1.0 / side
    u, v = K.pixel_grid()
    n = normals.data
    n1, n2, n3 = n[..., 0], n[..., 1], n[..., 2]
    a = (u - K.cx) / K.fx
    b = (v - K.cy) / K.fy
    # denominators in normalised units: fx * h * (N . ray)
    dot = a * n1 + b * n2 + n3
    den_u = K.fx * h * dot
    den_v = K.fy * h * dot
    mask = normals.mask & (np.abs(den_u) >= GRAZING_EPS) & (np.abs(den_v) >= GRAZING_EPS)
    p = np.where(mask, -n1 / np.where(mask, den_u, 1.0), 0.0)
    q = np.where(mask, -n2 / np.where(mask, den_v, 1.0), 0.0)
    return GradientField(p, q, mask, h)


def _edges(grad: GradientField, mask: np.ndarray, weight_cap: float | None):
    """Build the edge-difference operator G and targets b for ``mask``."""
    index = np.full(mask.shape, -1, dtype=np.int64)
    n = int(mask.sum())
    index[mask] = np.arange(n)
    h_ok = mask[:, :-1] & mask[:, 1:]
    v_ok = mask[:-1, :] & mask[1:, :]
    i_h, j_h = index[:, :-1][h_ok], index[:, 1:][h_ok]
    i_v, j_v = index[:-1, :][v_ok], index[1:, :][v_ok]
    b_h = grad.h * 0.5 * (grad.p[:, :-1][h_ok] + grad.p[:, 1:][h_ok])
    b_v = grad.h * 0.5 * (grad.q[:-1, :][v_ok] + grad.q[1:, :][v_ok])
    src = np.concatenate([i_h, i_v])
    dst = np.concatenate([j_h, j_v])
    b = np.concatenate([b_h, b_v])
    e = len(b)
    rows = np.repeat(np.arange(e), 2)
    cols = np.stack([src, dst], axis=1).ravel()
    vals = np.tile([-1.0, 1.0], e)
    G = sp.csr_matrix((vals, (rows, cols)), shape=(e, n))
    w = np.ones(e)
    if weight_cap is not None:
        mag = np.abs(b)
        w = np.where(mag > weight_cap, weight_cap / np.maximum(mag, 1e-300), 1.0)
    return index, G, b, w


def pcg(A, b, x0, tol, max_iter, ref_norm):
    """Jacobi-preconditioned conjugate gradients.

    Stops when ``|b - A x| <= tol * ref_norm``. Returns ``(x, iterations,
    relative_residual)``.

    Raises:
        ConvergenceError: if the tolerance is not met within ``max_iter``.
    """
    inv_diag = 1.0 / A.diagonal()
    x = x0.copy()
    r = b - A @ x
    target = tol * ref_norm
    rnorm = np.linalg.norm(r)
    if rnorm <= target:
        return x, 0, rnorm / ref_norm
    z = inv_diag * r
    d = z.copy()
    rz = r @ z
    for k in range(1, max_iter + 1):
        Ad = A @ d
        alpha = rz / (d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            return x, k, rnorm / ref_norm
        z = inv_diag * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise ConvergenceError(
        f"CG did not converge: relative residual {rnorm / ref_norm:.3e} after {max_iter} iterations",
        rnorm / ref_norm,
        max_iter,
    )


def _solve(grad, U0, tol, max_iter, weight_cap):
    """Least-squares log-depth on every component, starting from ``U0``.

    The correction added to ``U0`` has zero mean on each component, so the
    per-component offsets of ``U0`` survive. Returns ``(U, mask, info)``.
    """
    labels, ncomp = ndimage.label(grad.mask)
    sizes = np.bincount(labels.ravel(), minlength=ncomp + 1)
    keep = sizes >= 2
    keep[0] = False
    mask = keep[labels]
    info = IntegrationInfo(dropped_pixels=int(grad.mask.sum() - mask.sum()))
    if not mask.any():
        raise DegenerateInputError("no connected component with at least two pixels")
    index, G, b, w = _edges(grad, mask, weight_cap)
    Gt_w = G.T.multiply(w).tocsr()
    lap = (Gt_w @ G).tocsr()
    u0 = U0[mask]
    full_rhs = Gt_w @ b
    rhs = full_rhs - lap @ u0
    comp_of = labels[mask]
    order = np.argsort(comp_of, kind="stable")
    bounds = np.searchsorted(comp_of[order], np.unique(comp_of))
    bounds = np.append(bounds, len(order))
    W = np.zeros(len(u0))
    worst = 0.0
    for start, stop in zip(bounds[:-1], bounds[1:]):
        ids = np.sort(order[start:stop])
        A = lap[ids][:, ids]
        r = rhs[ids]
        r = r - r.mean()
        # a poor warm start is judged against its own initial residual
        ref = max(np.linalg.norm(full_rhs[ids]), np.linalg.norm(r))
        if ref == 0:
            info.component_iterations.append(0)
            continue
        x, its, rel = pcg(A, r, np.zeros(len(ids)), tol, max_iter, ref)
        W[ids] = x - x.mean()
        info.component_iterations.append(its)
        worst = max(worst, rel)
    info.components = len(bounds) - 1
    info.iterations = int(sum(info.component_iterations))
    info.cg_residual = worst
    u = u0 + W
    info.lsq_residual = float(np.linalg.norm(G @ u - b))
    info.rhs_norm = float(np.linalg.norm(b))
    U = np.zeros(grad.shape)
    U[mask] = u
    return U, mask, info


def _gauge(U, mask, mean_depth):
    """Shift U so that ``mean(exp(U))`` over the mask equals ``mean_depth``."""
    if not mean_depth > 0:
        raise ValueError("mean depth must be positive")
    u = U[mask]
    top = u.max()
    shift = np.log(mean_depth) - (top + np.log(np.mean(np.exp(u - top))))
    D = np.zeros(U.shape)
    D[mask] = np.exp(u + shift)
    return DepthMap(D, mask)


def integrate(
    grad: GradientField,
    mean_depth: float = 1.0,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    weight_cap: float | None = None,
    return_info: bool = False,
):
    """Integrate a log-depth gradient field into a depth map.

    Each connected component is solved with zero-mean log-depth; one global
    multiplicative scale then sets the masked mean depth to ``mean_depth``.
    Isolated pixels carry no equation and are dropped from the output mask.

    Args:
        grad: Gradient field from :func:`perspective_pq`.
        mean_depth: Target mean depth over the output mask.
        tol: Relative residual tolerance of the CG solve.
        max_iter: CG iteration cap per component.
        weight_cap: If set, edges whose target difference exceeds this value
            are down-weighted proportionally (discontinuity damping).
        return_info: Also return an :class:`IntegrationInfo`.

    Raises:
        ConvergenceError: if CG misses the tolerance.
    """
    U, mask, info = _solve(grad, np.zeros(grad.shape), tol, max_iter, weight_cap)
    depth = _gauge(U, mask, mean_depth)
    return (depth, info) if return_info else depth


def integrate_coarse_to_fine(
    grad: GradientField,
    coarse_depth: DepthMap,
    mean_depth: float = 1.0,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    weight_cap: float | None = None,
    return_info: bool = False,
):
    """Integrate as a residual on top of an upsampled half-resolution depth.

    ``U0 = ln(upsample2(coarse_depth))`` provides the starting log-depth and
    the relative offsets between components; CG solves only for the
    correction. The tolerance is measured against the larger of the full
    right-hand side and the initial residual, so a good coarse depth means
    few iterations.
    """
    h, w = grad.shape
    if coarse_depth.shape != (h // 2, w // 2) or h % 2 or w % 2:
        raise SizeError(f"coarse depth {coarse_depth.shape} is not half of {grad.shape}")
    filled = fill_invalid(np.where(coarse_depth.mask, coarse_depth.data, 1.0), coarse_depth.mask)
    # border extrapolation can overshoot on steep coarse depth
    U0 = np.log(np.maximum(upsample2(filled), 1e-3 * filled.min()))
    U0 = _extend_start(grad, U0, upsample_mask2(coarse_depth.mask) & grad.mask)
    return integrate_from(grad, U0, mean_depth, tol=tol, max_iter=max_iter, weight_cap=weight_cap, return_info=return_info)


def _extend_start(grad: GradientField, U0: np.ndarray, covered: np.ndarray) -> np.ndarray:
    """Re-derive the start value on fine pixels the coarse depth does not cover.

    Those pixels (typically a rim one or two pixels wide) only have filled
    and extrapolated coarse values. They are set by least squares against
    the fine gradients with the covered pixels held fixed, which keeps the
    warm start's residual from being dominated by the rim.
    """
    free = grad.mask & ~covered
    if not free.any() or not covered.any():
        return U0
    # free pixels cut off from every covered pixel keep their filled value
    labels, _ = ndimage.label(free)
    touching = np.unique(labels[ndimage.binary_dilation(covered) & free])
    free &= np.isin(labels, touching[touching > 0])
    if not free.any():
        return U0
    index, G, b, _ = _edges(grad, grad.mask, None)
    lap = (G.T @ G).tocsr()
    rhs = G.T @ b
    f = index[free]
    c = index[grad.mask & ~free]
    u = U0[grad.mask]
    sol = spla.spsolve(lap[f][:, f].tocsc(), rhs[f] - lap[f][:, c] @ u[c])
    out = U0.copy()
    out[free] = sol
    return out


def integrate_from(
    grad: GradientField,
    U0: np.ndarray,
    mean_depth: float = 1.0,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    weight_cap: float | None = None,
    return_info: bool = False,
):
    """Integrate starting from an initial log-depth on the same grid."""
    U, mask, info = _solve(grad, U0, tol, max_iter, weight_cap)
    depth = _gauge(U, mask, mean_depth)
    return (depth, info) if return_info else depth
