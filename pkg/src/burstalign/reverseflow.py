"""Reverse flow, view-k disparity and occlusion masks by fixed-point iteration.

For a pixel ``u`` of view k the disparity ``g`` it sees must agree with
the reference disparity at the point it maps back to. Starting from the
reference disparity at the same pixel, iterate

    u0 = proj(R^T [u, 1] - g R^T t)          # back into the reference view
    G  = Gamma0(u0)                          # reference disparity there
    q  = R [u0, 1] + G t                     # forward again
    g  = G / q_z

The residual ``|u - proj(q)|`` is the composition error of the direct and
reverse flows. Pixels that never get below ``tol`` are treated as
occluded in the reference view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgproc import bilinear_sample
from .liegroup import RigidMotion
from .scene import MIN_DEPTH_DENOM, Intrinsics, disparity

FILL_POLICIES = ("source", "zero", "invalid_channel")


def reproject_disparity(u: np.ndarray, gamma: np.ndarray, pose: RigidMotion):
    """Map normalized points ``u`` (..., 2) with disparity ``gamma`` through ``pose``.

    Returns ``(u_bar, gamma_bar, valid)``: the projected point, the
    disparity of the transformed 3-D point, and whether it lies in front.
    """
    u = np.asarray(u, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    R, t = pose.R, pose.t
    q = (u[..., 0, None] * R[:, 0] + u[..., 1, None] * R[:, 1] + R[:, 2]
         + gamma[..., None] * t)
    z = q[..., 2]
    valid = z > MIN_DEPTH_DENOM
    zs = np.where(valid, z, 1.0)
    u_bar = q[..., :2] / zs[..., None]
    return u_bar, gamma / zs, valid


@dataclass
class ReverseFlow:
    flow: np.ndarray        # (H, W, 2), view-k pixel -> reference pixel displacement
    disparity: np.ndarray   # (H, W) disparity seen from view k
    occlusion: np.ndarray   # (H, W) bool, True where the iteration did not converge
    error: np.ndarray       # (H, W) final composition error in pixels
    iterations: np.ndarray  # (H, W) fixed-point evaluations used (max_iters + 1 if not converged)


def reverse_flow_from_disparity(gamma0: np.ndarray, pose: RigidMotion, K: Intrinsics,
                                max_iters: int = 30, tol: float = 1e-3) -> ReverseFlow:
    """Fixed-point reverse flow for reference disparity map ``gamma0`` (H, W)."""
    gamma0 = np.asarray(gamma0, dtype=float)
    h, w = gamma0.shape
    gy, gx = np.mgrid[0:h, 0:w].astype(float)
    uk = np.stack(K.to_normalized(gx, gy), axis=-1)
    inv = RigidMotion(pose.R.T, -pose.R.T @ pose.t)

    def back(g):
        ub, _, ok = reproject_disparity(uk, g, inv)
        return ub, ok

    gamma = gamma0.copy()
    ub0, _ = back(gamma)
    x0, y0 = K.to_pixel(ub0[..., 0], ub0[..., 1])
    init_flow = np.stack([x0 - gx, y0 - gy], axis=-1)

    done = np.zeros((h, w), dtype=bool)
    out_ub = np.zeros((h, w, 2))
    out_gamma = np.zeros((h, w))
    err = np.full((h, w), np.inf)
    iters = np.full((h, w), max_iters + 1, dtype=int)
    for m in range(max_iters + 1):
        ub, ok_back = back(gamma)
        xb, yb = K.to_pixel(ub[..., 0], ub[..., 1])
        G = bilinear_sample(gamma0, xb, yb)
        fwd, g_new, ok_fwd = reproject_disparity(ub, G, pose)
        xf, yf = K.to_pixel(fwd[..., 0], fwd[..., 1])
        e = np.hypot(xf - gx, yf - gy)
        ok = ok_back & ok_fwd & np.isfinite(e)
        e = np.where(ok, e, np.inf)
        newly = ~done & (e < tol)
        out_ub[newly] = ub[newly]
        out_gamma[newly] = gamma[newly]
        err = np.where(done, err, e)
        iters[newly] = m + 1
        done |= newly
        if done.all() or m == max_iters:
            break
        gamma = np.where(done | ~ok, gamma, g_new)

    xr, yr = K.to_pixel(out_ub[..., 0], out_ub[..., 1])
    flow = np.where(done[..., None], np.stack([xr - gx, yr - gy], axis=-1), init_flow)
    disp = np.where(done, out_gamma, gamma0)
    return ReverseFlow(flow, disp, ~done, err, iters)


def reverse_flow(result, k: int, max_iters: int = 30, tol: float = 1e-3) -> ReverseFlow:
    """Reverse flow of non-reference view ``k`` (0-based) of an alignment result."""
    pm = result.plane_map
    gamma0 = disparity(pm, result.K.for_shape(pm.shape))
    return reverse_flow_from_disparity(gamma0, result.poses[k], result.K, max_iters, tol)


def warp_backward(img: np.ndarray, flow: np.ndarray, mask: np.ndarray | None = None,
                  fill: str = "source") -> np.ndarray:
    """Sample ``img`` at ``u + flow(u)`` for every pixel ``u``.

    Pixels with ``mask`` True follow ``fill``: "source" keeps ``img(u)``,
    "zero" writes 0 and "invalid_channel" writes 0 and appends a validity
    channel (1 valid, 0 masked) to the output.
    """
    if fill not in FILL_POLICIES:
        raise ValueError(f"fill must be one of {FILL_POLICIES}")
    img = np.asarray(img, dtype=float)
    flow = np.asarray(flow, dtype=float)
    h, w = img.shape[:2]
    if flow.shape != (h, w, 2):
        raise ValueError(f"flow shape {flow.shape} does not match image {img.shape[:2]}")
    gy, gx = np.mgrid[0:h, 0:w].astype(float)
    out = bilinear_sample(img, gx + flow[..., 0], gy + flow[..., 1])
    if mask is None:
        mask = np.zeros((h, w), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    m = mask if img.ndim == 2 else mask[..., None]
    if fill == "source":
        out = np.where(m, img, out)
    else:
        out = np.where(m, 0.0, out)
    if fill == "invalid_channel":
        valid = (~mask).astype(float)
        out = np.concatenate([out if out.ndim == 3 else out[..., None], valid[..., None]], axis=-1)
    return out
