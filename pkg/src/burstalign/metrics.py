"""Flow, pose and depth error metrics."""

from __future__ import annotations

import numpy as np

from .liegroup import log_so3

NPE_THRESHOLDS = (1, 2, 3)


def flow_metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> dict:
    """EPE, RMSE and NPEn (fraction of pixels with endpoint error strictly below n px)."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.shape[-1] != 2:
        raise ValueError(f"flow shapes differ or are not (..., 2): {pred.shape} vs {gt.shape}")
    err = np.linalg.norm(pred - gt, axis=-1)
    if mask is not None:
        err = err[np.asarray(mask, dtype=bool)]
    err = err.ravel()
    if err.size == 0:
        raise ValueError("no pixels to evaluate")
    out = {"EPE": float(err.mean()), "RMSE": float(np.sqrt(np.mean(err ** 2)))}
    for n in NPE_THRESHOLDS:
        out[f"NPE{n}"] = float(np.mean(err < n))
    return out


def pose_scale(pred_t: np.ndarray, gt_t: np.ndarray) -> float:
    """Least-squares ``s`` minimizing ``|T - s T_hat|^2`` over stacked translations."""
    pred_t = np.asarray(pred_t, dtype=float).ravel()
    gt_t = np.asarray(gt_t, dtype=float).ravel()
    den = float(pred_t @ pred_t)
    if den == 0:
        raise ValueError("predicted translations are all zero; scale is undefined")
    return float(gt_t @ pred_t) / den


def nearest_rotation(R: np.ndarray) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense (handles linearized poses)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotation_angle(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle (radians) between two rotations."""
    return float(np.linalg.norm(log_so3(nearest_rotation(Ra).T @ nearest_rotation(Rb))))


def pose_metrics(pred, gt, lam: float) -> dict:
    """Pose errors; ``pred`` translations must already be rescaled.

    ``left_l2`` averages ``sqrt(|t' - t|^2 + lam |log(R^T R')|^2)``,
    ``ATE`` the translation error and ``rot_deg`` the rotation angle.
    """
    if len(pred) != len(gt):
        raise ValueError(f"pose count mismatch: {len(pred)} vs {len(gt)}")
    if len(pred) == 0:
        raise ValueError("no poses to evaluate")
    dt = np.array([np.linalg.norm(p.t - g.t) for p, g in zip(pred, gt)])
    rot = np.array([rotation_angle(g.R, p.R) for p, g in zip(pred, gt)])
    left = np.sqrt(dt ** 2 + lam * rot ** 2)
    return {"left_l2": float(left.mean()), "ATE": float(dt.mean()),
            "rot_deg": float(np.rad2deg(rot).mean())}


def align_depth(pred: np.ndarray, gt: np.ndarray, mode: str = "median"):
    """Return the aligned prediction and the alignment coefficients ``(a, b)``."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if mode == "median":
        a = float(np.median(gt) / np.median(pred))
        return a * pred, (a, 0.0)
    if mode == "affine":
        A = np.stack([pred.ravel(), np.ones(pred.size)], axis=1)
        (a, b), *_ = np.linalg.lstsq(A, gt.ravel(), rcond=None)
        return a * pred + b, (float(a), float(b))
    raise ValueError("mode must be 'median' or 'affine'")


def depth_metrics(pred: np.ndarray, gt: np.ndarray, mode: str = "median") -> dict:
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"depth shapes differ: {pred.shape} vs {gt.shape}")
    if not (np.all(pred > 0) and np.all(gt > 0)):
        raise ValueError("depths must be positive")
    p, (a, b) = align_depth(pred, gt, mode)
    ratio = np.maximum(p / gt, gt / p) if np.all(p > 0) else np.full(p.shape, np.inf)
    out = {
        "abs_rel": float(np.mean(np.abs(p - gt) / gt)),
        "sqr_rel": float(np.mean((p - gt) ** 2 / gt)),
        "RMSE": float(np.sqrt(np.mean((p - gt) ** 2))),
        "align_scale": a,
        "align_offset": b,
    }
    for i in (1, 2, 3):
        out[f"delta{i}"] = float(np.mean(ratio < 1.25 ** i))
    return out


def evaluate(pred_flows, gt_flows, pred_poses, gt_poses, pred_depth, gt_depth,
             depth_mode: str = "median") -> dict:
    """Full report: flows averaged over views, poses after scale alignment."""
    per_view = [flow_metrics(p, g) for p, g in zip(pred_flows, gt_flows)]
    flow = {k: float(np.mean([m[k] for m in per_view])) for k in per_view[0]}
    T_hat = np.array([p.t for p in pred_poses])
    T = np.array([g.t for g in gt_poses])
    s = pose_scale(T_hat, T)
    from .liegroup import RigidMotion
    scaled = [RigidMotion(p.R, s * p.t) for p in pred_poses]
    lam = float(np.median(gt_depth))
    pose = pose_metrics(scaled, gt_poses, lam)
    pose["scale"] = s
    pose["lambda"] = lam
    return {
        "flow": flow,
        "pose": pose,
        "depth": depth_metrics(pred_depth, gt_depth, depth_mode),
        "meta": {"npe": "fraction of pixels with endpoint error < n px",
                 "depth_alignment": depth_mode},
    }
