"""Pose and plane-map update blocks plus the spatial regularizers.

Poses are optimized as absolute twists, one per non-reference view, with
a damped Gauss-Newton step anchored at the twist the step started from.
The plane map is optimized with Adam in centered variables

    n = gamma_s * gamma * (alpha, beta, 1 - alpha u_c - beta v_c)

where ``(u_c, v_c)`` is the normalized center of the cell, ``gamma`` its
disparity at the center relative to ``gamma_s`` and ``(alpha, beta)`` the
plane slope. Both blocks work in scale-normalized units (translations
divided by a reference depth, disparities multiplied by it) so that a
global rescaling of the initial depth rescales the solution exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imgproc import resize_bilinear, resize_bilinear_adjoint
from .liegroup import exp_se3, linear_pose
from .objective import PhotometricObjective, jacobian_projection, view_sum
from .scene import Intrinsics

MIN_DISPARITY = 1e-4


# -- plane variables ---------------------------------------------------------

@dataclass(frozen=True)
class PlaneParam:
    """Maps between normals on a grid and the optimized plane variables.

    ``mode`` is "centered" (alpha, beta, gamma) or "raw" (n / gamma_s).
    """

    K: Intrinsics
    shape: tuple
    gamma_s: float
    mode: str = "centered"

    def __post_init__(self):
        if self.mode not in ("centered", "raw"):
            raise ValueError("mode must be 'centered' or 'raw'")
        if not self.gamma_s > 0:
            raise ValueError("gamma_s must be positive")

    @property
    def rays(self) -> np.ndarray:
        return self.K.rays(self.shape)

    def to_vars(self, normals: np.ndarray) -> np.ndarray:
        n = np.asarray(normals, dtype=float) / self.gamma_s
        if self.mode == "raw":
            return n
        g = np.einsum("hwc,hwc->hw", n, self.rays)
        if not np.all(g > 0):
            raise ValueError("plane map has non-positive disparity at a cell center")
        return np.stack([n[..., 0] / g, n[..., 1] / g, g], axis=-1)

    def to_normals(self, x: np.ndarray) -> np.ndarray:
        if self.mode == "raw":
            return x * self.gamma_s
        p = self.rays
        a, b, g = x[..., 0], x[..., 1], x[..., 2]
        gs = g * self.gamma_s
        return np.stack([gs * a, gs * b, gs * (1.0 - a * p[..., 0] - b * p[..., 1])], axis=-1)

    def grad_to_vars(self, x: np.ndarray, grad_n: np.ndarray) -> np.ndarray:
        """Chain a gradient w.r.t. normals to one w.r.t. the variables."""
        if self.mode == "raw":
            return grad_n * self.gamma_s
        p = self.rays
        gs = x[..., 2] * self.gamma_s
        n = self.to_normals(x)
        da = gs * (grad_n[..., 0] - p[..., 0] * grad_n[..., 2])
        db = gs * (grad_n[..., 1] - p[..., 1] * grad_n[..., 2])
        dg = np.einsum("hwc,hwc->hw", n, grad_n) / x[..., 2]
        return np.stack([da, db, dg], axis=-1)

    def project(self, x: np.ndarray) -> np.ndarray:
        """Keep the center disparity at least ``MIN_DISPARITY`` (scale-normalized)."""
        if self.mode == "centered":
            out = x.copy()
            out[..., 2] = np.maximum(out[..., 2], MIN_DISPARITY)
            return out
        p = self.rays
        d = np.einsum("hwc,hwc->hw", x, p)
        lack = np.maximum(MIN_DISPARITY - d, 0.0)
        return x + (lack / np.einsum("hwc,hwc->hw", p, p))[..., None] * p


# -- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    shape: tuple
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.shape)
        if self.v is None:
            self.v = np.zeros(self.shape)

    def update(self, grad: np.ndarray) -> np.ndarray:
        """Advance the moments and return the increment to add to the variables."""
        self.step += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mh = self.m / (1.0 - self.beta1 ** self.step)
        vh = self.v / (1.0 - self.beta2 ** self.step)
        return -self.lr * mh / (np.sqrt(vh) + self.eps)


# -- regularizers ------------------------------------------------------------

def tv_regularizer(x: np.ndarray, weight: float = 1.0):
    """Anisotropic total variation of a ``(rows, cols, C)`` variable grid.

    Returns ``(value, gradient)``; the subgradient of ``|0|`` is taken as 0.
    """
    x = np.asarray(x, dtype=float)
    dy = x[1:] - x[:-1]
    dx = x[:, 1:] - x[:, :-1]
    value = weight * (np.abs(dy).sum() + np.abs(dx).sum())
    g = np.zeros_like(x)
    sy, sx = np.sign(dy), np.sign(dx)
    g[1:] += sy
    g[:-1] -= sy
    g[:, 1:] += sx
    g[:, :-1] -= sx
    return float(value), weight * g


def _flowed_unit_coords(normals, pose, K: Intrinsics):
    """Flowed cell centers in [-1, 1] coordinates and the pieces of their derivative."""
    h, w = normals.shape[:2]
    p = K.rays((h, w))
    d = np.einsum("hwc,hwc->hw", normals, p)
    Q = p @ pose.R.T + d[..., None] * pose.t
    z = np.where(np.abs(Q[..., 2]) < 1e-6, 1e-6, Q[..., 2])
    X = 2.0 * (K.fx * Q[..., 0] / z + K.cx + 0.5) / w - 1.0
    Y = 2.0 * (K.fy * Q[..., 1] / z + K.cy + 0.5) / h - 1.0
    return X, Y, Q, p


def cell_areas(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Twice the area of each quad of neighboring points (two triangle determinants)."""
    ax, ay = X[:-1, :-1], Y[:-1, :-1]
    bx, by = X[:-1, 1:], Y[:-1, 1:]
    cx, cy = X[1:, 1:], Y[1:, 1:]
    dx, dy = X[1:, :-1], Y[1:, :-1]
    t1 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    t2 = (cx - ax) * (dy - ay) - (cy - ay) * (dx - ax)
    return t1 + t2


def determinant_regularizer(normals: np.ndarray, poses, K: Intrinsics, weight: float = 1.0):
    """Penalty ``sum_k sum_cells |(A/2) / (4/(H W)) - 1|`` on the flowed grid.

    ``K`` describes the plane-map grid. Returns ``(value, gradient w.r.t.
    normals)`` with an L1 subgradient.
    """
    normals = np.asarray(normals, dtype=float)
    h, w = normals.shape[:2]
    area0 = 4.0 / (h * w)
    values, grads = [], []
    for pose in poses:
        X, Y, Q, p = _flowed_unit_coords(normals, pose, K)
        ratio = 0.5 * cell_areas(X, Y) / area0
        values.append(np.abs(ratio - 1.0).sum())
        s = np.sign(ratio - 1.0) * (0.5 / area0)
        # shoelace over a->b->c->d: dS/dx_i = y_next - y_prev, dS/dy_i = x_prev - x_next
        gX = np.zeros_like(X)
        gY = np.zeros_like(Y)
        corners = [(slice(None, -1), slice(None, -1)), (slice(None, -1), slice(1, None)),
                   (slice(1, None), slice(1, None)), (slice(1, None), slice(None, -1))]
        for i, ci in enumerate(corners):
            nxt = corners[(i + 1) % 4]
            prv = corners[(i - 1) % 4]
            gX[ci] += s * (Y[nxt] - Y[prv])
            gY[ci] += s * (X[prv] - X[nxt])
        # d(X, Y)/dQ then dQ/dn = t p^T
        Jp = jacobian_projection(Q)
        dQ = (gX * 2.0 * K.fx / w)[..., None] * Jp[..., 0, :] + (gY * 2.0 * K.fy / h)[..., None] * Jp[..., 1, :]
        grads.append((dQ @ pose.t)[..., None] * p)
    if not values:
        return 0.0, np.zeros_like(normals)
    return float(weight * sum(sorted(values))), weight * view_sum(grads)


# -- pose block --------------------------------------------------------------

@dataclass
class ProximalState:
    """Proximal weight and the anchor twists (scale-normalized) of each view."""

    beta: float | None = None
    anchors: np.ndarray | None = None

    def __post_init__(self):
        if self.beta is not None and not self.beta > 0:
            raise ValueError("beta must be positive")


def pose_from_twist(xi, exp_param: bool = True):
    return exp_se3(xi) if exp_param else linear_pose(xi)


@dataclass
class PoseStepInfo:
    loss_before: np.ndarray
    loss_after: np.ndarray
    accepted: np.ndarray


def pgn_pose_step(obj: PhotometricObjective, normals: np.ndarray, xis: np.ndarray,
                  prox: ProximalState, t_scale: float = 1.0, exp_param: bool = True,
                  newton: bool = True, armijo_c: float = 1e-4, max_halvings: int = 10):
    """One damped Gauss-Newton step on every view's twist.

    ``xis`` is ``(K, 6)``; translations are optimized divided by
    ``t_scale``. Each view runs a halving Armijo search on its own robust
    loss and keeps its twist if no trial decreases it. Returns
    ``(new_xis, PoseStepInfo)``; ``prox.beta`` is halved afterwards.
    """
    xis = np.asarray(xis, dtype=float)
    scale = np.array([1.0, 1.0, 1.0, t_scale, t_scale, t_scale])
    if prox.anchors is None:
        prox.anchors = xis / scale
    terms = []
    for k in range(len(xis)):
        tk = obj.evaluate(k, normals, pose_from_twist(xis[k], exp_param), pose_jac=True,
                          xi=xis[k], exp_param=exp_param)
        tk.jacobian = tk.jacobian * scale
        terms.append(tk)
    if prox.beta is None:
        diag_means = sorted(float(np.mean(np.einsum("ij,ij->j", t.jacobian, t.jacobian))) for t in terms)
        prox.beta = max(1e-2 * sum(diag_means) / len(diag_means), 1e-12)
    beta = prox.beta
    out = xis.copy()
    before = np.zeros(len(xis))
    after = np.zeros(len(xis))
    accepted = np.zeros(len(xis), dtype=bool)
    for k, tk in enumerate(terms):
        J, blk = tk.jacobian, tk.block
        xh = xis[k] / scale
        grad = J.T @ (blk.weights * blk.r)  # gradient of the robust loss
        H = J.T @ (blk.weights[:, None] * J) + beta * np.eye(6)
        g = -grad + beta * (prox.anchors[k] - xh)
        step = _solve_step(H, g, newton)
        before[k] = after[k] = tk.loss
        slope = float(grad @ step)
        if not np.any(step) or not slope < 0:
            continue
        s = 1.0
        for _ in range(max_halvings + 1):
            cand = (xh + s * step) * scale
            trial = obj.evaluate(k, normals, pose_from_twist(cand, exp_param)).loss
            if np.isfinite(trial) and trial <= tk.loss + armijo_c * s * slope:
                out[k] = cand
                after[k] = trial
                accepted[k] = True
                break
            s *= 0.5
    prox.anchors = out / scale
    prox.beta = beta * 0.5
    return out, PoseStepInfo(before, after, accepted)


def _solve_step(H: np.ndarray, g: np.ndarray, newton: bool) -> np.ndarray:
    if not np.all(np.isfinite(H)) or not np.all(np.isfinite(g)):
        return np.zeros_like(g)
    if newton:
        try:
            if np.linalg.cond(H) < 1e12:
                return np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            pass
    # exact minimizer of the quadratic model along the gradient direction
    curv = float(g @ H @ g)
    if curv <= 0:
        return np.zeros_like(g)
    return g * (float(g @ g) / curv)


# -- plane block -------------------------------------------------------------

@dataclass
class PlaneStepInfo:
    losses: list


def plane_objective(obj: PhotometricObjective, param: PlaneParam, x: np.ndarray, poses,
                    tv_weight: float = 0.0, det_weight: float = 0.0, with_grad: bool = True):
    """Total level loss (data + regularizers) and its gradient w.r.t. ``x``."""
    normals = param.to_normals(x)
    fine = normals if param.shape == obj.shape else resize_bilinear(normals, obj.shape)
    parts = [obj.evaluate(k, fine, P, plane_grad=with_grad) for k, P in enumerate(poses)]
    value = float(sum(sorted(t.loss for t in parts)))
    grad = None
    if with_grad:
        gn = view_sum([t.grad_normals for t in parts]) if parts else np.zeros_like(fine)
        if param.shape != obj.shape:
            gn = resize_bilinear_adjoint(gn, param.shape)
    if det_weight > 0:
        dv, dg = determinant_regularizer(normals, poses, param.K, det_weight)
        value += dv
        if with_grad:
            gn = gn + dg
    if with_grad:
        grad = param.grad_to_vars(x, gn)
    if tv_weight > 0:
        tv, tg = tv_regularizer(x, tv_weight)
        value += tv
        if with_grad:
            grad = grad + tg
    return value, grad


def adam_plane_steps(obj: PhotometricObjective, param: PlaneParam, x: np.ndarray, poses,
                     state: AdamState, n_steps: int, tv_weight: float = 0.0, det_weight: float = 0.0):
    """``n_steps`` Adam updates of the plane variables; returns ``(x, PlaneStepInfo)``.

    ``losses`` holds the objective before each update.
    """
    losses = []
    for _ in range(n_steps):
        value, grad = plane_objective(obj, param, x, poses, tv_weight, det_weight)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite plane objective")
        losses.append(value)
        x = param.project(x + state.update(grad))
    return x, PlaneStepInfo(losses)
