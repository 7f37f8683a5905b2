"""Robust photometric reprojection loss, residuals and their derivatives.

Residuals live on patches: every grid cell ``i`` owns the pixels within
``patch_radius`` of its center (clamped to the image) and warps them with
its own plane,

    r_{k,i,u'} = I_0(u') - I_k(psi(R_k [u',1] + (n_i . [u',1]) t_k)).

The loss is ``0.5 * sum rho(r^2)`` over views, cells, patch pixels and
channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgproc import bilinear_sample, bilinear_sample_with_grad, sobel_gradient, to_gray
from .liegroup import RigidMotion, left_jacobian_se3
from .scene import MIN_DEPTH_DENOM, Intrinsics, PlaneMap

GRAD_MODES = ("sobel", "bilinear")


@dataclass(frozen=True)
class RobustLoss:
    """``rho(s)`` applied to squared residuals ``s = r^2``."""

    kind: str = "pseudo_huber"
    sigma: float = 0.05

    def __post_init__(self):
        if self.kind not in ("pseudo_huber", "geman_mcclure", "square"):
            raise ValueError(f"unknown robust loss {self.kind!r}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def rho(self, s):
        s = np.asarray(s, dtype=float)
        s2 = self.sigma ** 2
        if self.kind == "pseudo_huber":
            return 2.0 * s2 * (np.sqrt(1.0 + s / s2) - 1.0)
        if self.kind == "geman_mcclure":
            return s / (1.0 + s / s2)
        return s

    def weight(self, s):
        """``rho'(s)``, the IRLS weight of a residual with ``r^2 = s``."""
        s = np.asarray(s, dtype=float)
        s2 = self.sigma ** 2
        if self.kind == "pseudo_huber":
            return 1.0 / np.sqrt(1.0 + s / s2)
        if self.kind == "geman_mcclure":
            return 1.0 / (1.0 + s / s2) ** 2
        return np.ones_like(s)

    def rho_and_weight(self, s):
        """``(rho(s), rho'(s))`` sharing intermediate work."""
        s2 = self.sigma ** 2
        if self.kind == "pseudo_huber":
            root = np.sqrt(1.0 + s / s2)
            return 2.0 * s2 * (root - 1.0), 1.0 / root
        return self.rho(s), self.weight(s)


@dataclass
class ResidualBlock:
    """Flat residuals of one view, ordered (patch offset, row, col, channel)."""

    r: np.ndarray
    weights: np.ndarray
    valid: np.ndarray

    def robust_loss(self, robust: RobustLoss) -> float:
        return 0.5 * float(np.sum(robust.rho(self.r ** 2) * self.valid))


def jacobian_projection(Q) -> np.ndarray:
    """``J_psi = (1/z) [I_2 | -psi(Q)]`` for ``psi(x, y, z) = (x/z, y/z)``."""
    Q = np.asarray(Q, dtype=float)
    z = Q[..., 2]
    out = np.zeros(Q.shape[:-1] + (2, 3))
    out[..., 0, 0] = 1.0 / z
    out[..., 1, 1] = 1.0 / z
    out[..., 0, 2] = -Q[..., 0] / z ** 2
    out[..., 1, 2] = -Q[..., 1] / z ** 2
    return out


def pose_matrices(xi, exp_param: bool = True) -> RigidMotion:
    from .liegroup import exp_se3, linear_pose
    return exp_se3(xi) if exp_param else linear_pose(xi)


def _channels_first(img: np.ndarray, rgb: bool) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if not rgb:
        return to_gray(img)[..., None]
    return img if img.ndim == 3 else img[..., None]


class PatchGrid:
    """Patch pixels of every cell of an ``(H, W)`` grid with intrinsics ``K``."""

    def __init__(self, shape, K: Intrinsics, radius: int = 1):
        h, w = shape[:2]
        self.shape = (h, w)
        self.K = K
        self.radius = int(radius)
        r = self.radius
        offs = [(dx, dy) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
        self.offsets = np.array(offs, dtype=np.intp)
        gy, gx = np.mgrid[0:h, 0:w]
        self.px = np.clip(gx[None] + self.offsets[:, 0, None, None], 0, w - 1)
        self.py = np.clip(gy[None] + self.offsets[:, 1, None, None], 0, h - 1)
        u, v = K.to_normalized(self.px.astype(float), self.py.astype(float))
        self.rays = np.stack([u, v, np.ones_like(u)], axis=-1)  # (P, H, W, 3)

    @property
    def npatch(self) -> int:
        return len(self.offsets)


class ViewSampler:
    """Bilinear access to an image and its spatial gradient."""

    def __init__(self, img: np.ndarray, grad_mode: str = "sobel"):
        if grad_mode not in GRAD_MODES:
            raise ValueError(f"grad_mode must be one of {GRAD_MODES}")
        self.img = img  # (H, W, C)
        self.grad_mode = grad_mode
        if grad_mode == "sobel":
            g = sobel_gradient(img)  # (H, W, C, 2)
            c = img.shape[2]
            self._stack = np.concatenate([img, g[..., 0], g[..., 1]], axis=-1)
            self._c = c

    def sample(self, x, y, with_grad: bool = True):
        if not with_grad:
            return bilinear_sample(self.img, x, y), None, None
        if self.grad_mode == "bilinear":
            return bilinear_sample_with_grad(self.img, x, y)
        s = bilinear_sample(self._stack, x, y)
        c = self._c
        return s[..., :c], s[..., c:2 * c], s[..., 2 * c:]


@dataclass
class ViewTerms:
    block: ResidualBlock
    loss: float
    jacobian: np.ndarray | None = None   # (N, 6) w.r.t. the twist
    grad_normals: np.ndarray | None = None  # (H, W, 3)
    weighted_sq: np.ndarray | None = None  # per-cell robust loss (H, W)


class PhotometricObjective:
    """Residuals of ``others`` against ``ref`` on the full pixel grid.

    Images may be ``(H, W)`` or ``(H, W, C)``; unless ``rgb`` is set they
    are converted to luma.
    """

    def __init__(self, ref, others, K: Intrinsics, patch_radius: int = 1,
                 robust: RobustLoss | None = None, grad_mode: str = "sobel", rgb: bool = False):
        ref = _channels_first(ref, rgb)
        self.shape = ref.shape[:2]
        self.K = K
        self.robust = robust or RobustLoss()
        self.grid = PatchGrid(self.shape, K, patch_radius)
        self.ref = ref
        self.ref_patches = ref[self.grid.py, self.grid.px]  # (P, H, W, C)
        self.views = [ViewSampler(_channels_first(o, rgb), grad_mode) for o in others]
        for v in self.views:
            if v.img.shape != ref.shape:
                raise ValueError("all images must share the reference shape")

    @property
    def nviews(self) -> int:
        return len(self.views)

    def evaluate(self, k: int, normals: np.ndarray, pose: RigidMotion, *,
                 pose_jac: bool = False, plane_grad: bool = False,
                 xi=None, exp_param: bool = True, cell_loss: bool = False) -> ViewTerms:
        """Residuals of view ``k`` (0-based among ``others``) and requested derivatives.

        ``normals`` is the ``(H, W, 3)`` plane map on the residual grid. The
        pose Jacobian is taken w.r.t. the twist ``xi`` with
        ``pose = Exp(xi)`` (or the linearized pose when ``exp_param`` is
        False); with ``xi=None`` it is the left-perturbation Jacobian at
        ``pose``.
        """
        g, K = self.grid, self.K
        p0, p1 = g.rays[..., 0], g.rays[..., 1]
        d = p0 * normals[None, ..., 0] + p1 * normals[None, ..., 1] + normals[None, ..., 2]
        R, t = pose.R, pose.t
        Qx = R[0, 0] * p0 + R[0, 1] * p1 + R[0, 2] + d * t[0]
        Qy = R[1, 0] * p0 + R[1, 1] * p1 + R[1, 2] + d * t[1]
        qz = R[2, 0] * p0 + R[2, 1] * p1 + R[2, 2] + d * t[2]
        valid = qz > MIN_DEPTH_DENOM
        inv_z = 1.0 / np.where(valid, qz, 1.0)
        w0 = Qx * inv_z
        w1 = Qy * inv_z
        need_grad = pose_jac or plane_grad
        val, gx, gy = self.views[k].sample(K.fx * w0 + K.cx, K.fy * w1 + K.cy, with_grad=need_grad)
        vmask = valid[..., None]
        r = (self.ref_patches - val) * vmask
        s = r * r
        if need_grad:
            rho, wts = self.robust.rho_and_weight(s)
            wts = wts * vmask
        else:
            rho, wts = self.robust.rho(s), None
        loss = 0.5 * float((rho * vmask).sum())
        block = ResidualBlock(r.reshape(-1), None if wts is None else wts.reshape(-1),
                              np.broadcast_to(vmask, r.shape).reshape(-1))
        out = ViewTerms(block, loss)
        if cell_loss:
            out.weighted_sq = 0.5 * (rho * vmask).sum(axis=(0, 3))
        if not need_grad:
            return out
        # a = dr/dQ, each component shaped (P, H, W, C)
        inv = (inv_z * valid)[..., None]
        ax = -gx * (K.fx * inv)
        ay = -gy * (K.fy * inv)
        az = -(ax * w0[..., None] + ay * w1[..., None])
        if pose_jac:
            if exp_param:
                X, Y, Z = Qx[..., None], Qy[..., None], qz[..., None]
            else:
                X, Y, Z = p0[..., None], p1[..., None], 1.0
            dd = d[..., None]
            cols = [Y * az - Z * ay, Z * ax - X * az, X * ay - Y * ax, ax * dd, ay * dd, az * dd]
            J = np.empty((r.size, 6))
            for j, c in enumerate(cols):
                J[:, j] = np.broadcast_to(c, r.shape).reshape(-1)
            if xi is not None and exp_param:
                J = J @ left_jacobian_se3(xi)
            out.jacobian = J
        if plane_grad:
            at = ax * t[0] + ay * t[1] + az * t[2]
            coef = (wts * r * at).sum(axis=-1)  # (P, H, W)
            out.grad_normals = np.stack([(coef * p0).sum(axis=0), (coef * p1).sum(axis=0),
                                         coef.sum(axis=0)], axis=-1)
        return out


def residuals(I0, Ik, pm: PlaneMap, pose: RigidMotion, K: Intrinsics, patch_radius: int = 1,
              robust: RobustLoss | None = None, grad_mode: str = "sobel") -> ResidualBlock:
    """Residual block of one view; ``pm`` must be on the image grid."""
    obj = PhotometricObjective(I0, [Ik], K, patch_radius, robust, grad_mode)
    blk = obj.evaluate(0, _normals_on_grid(pm, obj.shape), pose).block
    blk.weights = obj.robust.weight(blk.r ** 2) * blk.valid
    return blk


def loss(blocks, robust: RobustLoss | None = None, regularizers=()) -> float:
    """``0.5 * sum rho(r^2)`` over all blocks plus regularizer values."""
    robust = robust or RobustLoss()
    total = sum(b.robust_loss(robust) for b in blocks)
    return float(total + sum(float(v) for v in regularizers))


def pose_jacobian(I0, Ik, pm: PlaneMap, pose: RigidMotion, K: Intrinsics, patch_radius: int = 1,
                  xi=None, exp_param: bool = True, grad_mode: str = "sobel") -> np.ndarray:
    """Jacobian of the flat residual vector of one view w.r.t. its twist."""
    obj = PhotometricObjective(I0, [Ik], K, patch_radius, None, grad_mode)
    return obj.evaluate(0, _normals_on_grid(pm, obj.shape), pose, pose_jac=True,
                        xi=xi, exp_param=exp_param).jacobian


def plane_gradient_normals(obj: PhotometricObjective, normals: np.ndarray, poses) -> np.ndarray:
    """Gradient of the summed view losses w.r.t. grid normals (order-invariant sum)."""
    parts = [obj.evaluate(k, normals, P, plane_grad=True).grad_normals for k, P in enumerate(poses)]
    return view_sum(parts)


def view_sum(parts) -> np.ndarray:
    """Sum per-view arrays independently of view order (sorted before summing)."""
    arr = np.stack([np.asarray(p, dtype=float) for p in parts])
    return np.sort(arr, axis=0).sum(axis=0)


def _normals_on_grid(pm: PlaneMap, shape) -> np.ndarray:
    from .scene import resample
    return resample(pm, shape).normals
