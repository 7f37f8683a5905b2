"""Multiscale block-coordinate alignment of a burst.

The plane map starts fronto-parallel from a coarse depth map on the
coarsest grid. At every scale the solver alternates a damped Gauss-Newton
step on all poses (full-resolution images, plane map interpolated to the
full grid) with a few Adam steps on the plane variables (images pooled to
the plane-map grid), then doubles the plane-map resolution.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .imgproc import build_pyramid, check_image, resize_bilinear, to_gray
from .liegroup import RigidMotion
from .objective import PhotometricObjective, RobustLoss
from .scene import (Intrinsics, PlaneMap, homography_flow, init_from_depth, plane_to_depth,
                    plane_to_normals)
from .solvers import (AdamState, PlaneParam, ProximalState, adam_plane_steps, pgn_pose_step,
                      plane_objective, pose_from_twist)

COARSEST = 16


@dataclass
class AlignmentConfig:
    levels: int | None = None        # None: coarsest plane grid is 16 pixels on its short side
    rounds: int = 3                  # M: each scale runs M + 1 pose/plane alternations
    adam_steps: int = 20
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    patch_radius: int = 1
    robust: str = "pseudo_huber"
    sigma: float = 0.05
    tv_weight: float = 0.0
    det_weight: float = 0.0
    exp_param: bool = True
    newton: bool = True
    plane_param: str = "centered"    # or "raw"
    beta_init: float | None = None   # None: 1e-2 * mean diagonal of J^T J at the first step
    armijo_c: float = 1e-4
    max_halvings: int = 10
    grad_mode: str = "sobel"
    rgb: bool = False
    final_pose_steps: int = 0        # extra pose steps after the last scale

    def __post_init__(self):
        if self.levels is not None and self.levels < 0:
            raise ValueError("levels must be >= 0")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.patch_radius < 0:
            raise ValueError("patch_radius must be >= 0")
        if self.plane_param not in ("centered", "raw"):
            raise ValueError("plane_param must be 'centered' or 'raw'")
        RobustLoss(self.robust, self.sigma)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AlignmentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class AlignmentResult:
    poses: list                 # RigidMotion per non-reference view
    twists: np.ndarray          # (K, 6)
    plane_map: PlaneMap         # finest level, on the image grid
    flows: list                 # direct flows (H, W, 2)
    depth: np.ndarray
    normals: np.ndarray
    view_losses: np.ndarray
    K: Intrinsics
    loss_trace: list = field(default_factory=list)
    config: AlignmentConfig | None = None


def auto_levels(shape, coarsest: int = COARSEST) -> int:
    """Largest L with the short side / 2^L >= ``coarsest`` and both sides divisible by 2^L."""
    h, w = shape[:2]
    L = 0
    while min(h, w) // 2 ** (L + 1) >= coarsest and h % 2 ** (L + 1) == 0 and w % 2 ** (L + 1) == 0:
        L += 1
    return L


def _prepare(images, rgb: bool):
    imgs = [check_image(im) for im in images]
    if len(imgs) < 2:
        raise ValueError("need a reference and at least one other frame")
    shape = imgs[0].shape
    for im in imgs:
        if im.shape != shape:
            raise ValueError("all frames must have the same shape")
    return imgs if rgb else [to_gray(im) for im in imgs]


def align(images, K: Intrinsics, init_depth: np.ndarray, cfg: AlignmentConfig | None = None) -> AlignmentResult:
    """Estimate poses of ``images[1:]`` relative to ``images[0]`` and a plane map."""
    cfg = cfg or AlignmentConfig()
    imgs = _prepare(images, cfg.rgb)
    h, w = imgs[0].shape[:2]
    K = K.for_shape((h, w)) if K.width is not None else K
    L = auto_levels((h, w)) if cfg.levels is None else cfg.levels
    if h % 2 ** L or w % 2 ** L:
        raise ValueError(f"image size {h}x{w} not divisible by 2^{L}")
    init_depth = np.asarray(init_depth, dtype=float)
    if init_depth.ndim != 2 or not np.all(init_depth > 0) or not np.all(np.isfinite(init_depth)):
        raise ValueError("initial depth must be a finite, positive 2-D map")

    robust = RobustLoss(cfg.robust, cfg.sigma)
    pyramids = [build_pyramid(im, L) for im in imgs]
    full = PhotometricObjective(imgs[0], imgs[1:], K, cfg.patch_radius, robust, cfg.grad_mode, cfg.rgb)
    nviews = len(imgs) - 1

    # scale normalization: disparities relative to the median initial disparity
    gamma_s = float(np.median(1.0 / init_depth))
    t_scale = 1.0 / gamma_s

    shape0 = (h // 2 ** L, w // 2 ** L)
    disp0 = resize_bilinear(1.0 / init_depth, shape0)
    pm = init_from_depth(1.0 / disp0)
    xis = np.zeros((nviews, 6))
    prox = ProximalState(beta=cfg.beta_init)
    trace = []
    x = param = None
    for level in range(L + 1):
        factor = 2 ** (L - level)
        K_l = K.scaled(factor) if factor > 1 else K
        grid = (h // factor, w // factor)
        if x is not None:
            normals = resize_bilinear(param.to_normals(x), grid)
        else:
            normals = pm.normals
        param = PlaneParam(K_l, grid, gamma_s, cfg.plane_param)
        x = param.project(param.to_vars(normals))
        obj_l = full if factor == 1 else PhotometricObjective(
            pyramids[0][level], [p[level] for p in pyramids[1:]], K_l, cfg.patch_radius, robust,
            cfg.grad_mode, cfg.rgb)
        adam = AdamState(x.shape, cfg.lr, cfg.adam_beta1, cfg.adam_beta2)
        for m in range(cfg.rounds + 1):
            xis, pinfo = _pose_block(full, param, x, xis, prox, t_scale, cfg)
            trace.append(dict(level=level, round=m, block="pose", loss=float(pinfo.loss_after.sum())))
            poses = [pose_from_twist(v, cfg.exp_param) for v in xis]
            x, loss = _plane_block(obj_l, param, x, poses, adam, cfg)
            trace.append(dict(level=level, round=m, block="plane", loss=loss))
    for m in range(cfg.final_pose_steps):
        xis, pinfo = _pose_block(full, param, x, xis, prox, t_scale, cfg)
        trace.append(dict(level=L, round=cfg.rounds + 1 + m, block="pose", loss=float(pinfo.loss_after.sum())))

    poses = [pose_from_twist(v, cfg.exp_param) for v in xis]
    pm = PlaneMap(param.to_normals(x), level=L)
    view_losses = np.array([full.evaluate(k, pm.normals, P).loss for k, P in enumerate(poses)])
    if not np.all(np.isfinite(view_losses)):
        raise FloatingPointError("alignment diverged (non-finite loss)")
    flows = [homography_flow(pm, P, K)[0] for P in poses]
    return AlignmentResult(poses, xis, pm, flows, plane_to_depth(pm, K), plane_to_normals(pm),
                           view_losses, K, trace, cfg)


def _pose_block(full, param, x, xis, prox, t_scale, cfg):
    normals_full = param.to_normals(x)
    if param.shape != full.shape:
        normals_full = resize_bilinear(normals_full, full.shape)
    new, info = pgn_pose_step(full, normals_full, xis, prox, t_scale, cfg.exp_param, cfg.newton,
                              cfg.armijo_c, cfg.max_halvings)
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("pose update produced non-finite twists")
    return new, info


def _plane_block(obj, param, x, poses, adam, cfg):
    """Adam steps; returns the best iterate seen (the start included) and its loss."""
    x_new, info = adam_plane_steps(obj, param, x, poses, adam, cfg.adam_steps, cfg.tv_weight, cfg.det_weight)
    final, _ = plane_objective(obj, param, x_new, poses, cfg.tv_weight, cfg.det_weight, with_grad=False)
    start = info.losses[0] if info.losses else final
    if not np.isfinite(final):
        raise FloatingPointError("plane update produced a non-finite loss")
    if final <= start:
        return x_new, float(final)
    return x, float(start)


def direct_flows(result: AlignmentResult) -> list:
    """Flows of every reference pixel into each view from the converged poses and planes."""
    return [homography_flow(result.plane_map, P, result.K)[0] for P in result.poses]


def identity_poses(n: int) -> list:
    return [RigidMotion.identity() for _ in range(n)]
