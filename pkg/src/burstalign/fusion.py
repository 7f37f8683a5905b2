"""Burst fusion: average denoising, multi-frame super-resolution, overlays.

Super-resolution solves ``min_x 0.5 sum_i |M_i (D W_i x - y_i)|^2`` by
gradient descent, where ``W_i`` warps the high-resolution reference image
into view i (bilinear, from the reverse flow), ``D`` averages
``factor x factor`` blocks and ``M_i`` drops occluded pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .imgproc import resize_bilinear, to_gray
from .reverseflow import warp_backward


def fuse_average(images, flows, masks=None) -> np.ndarray:
    """Mean of the reference and every view warped onto it.

    ``flows[k]`` is the direct flow of view ``k + 1``; ``masks[k]`` (True =
    invalid) removes contributions pixel by pixel.
    """
    ref = np.asarray(images[0], dtype=float)
    total = ref.copy()
    count = np.ones(ref.shape[:2])
    for k, (img, flow) in enumerate(zip(images[1:], flows)):
        warped = warp_backward(img, flow)
        valid = np.ones(ref.shape[:2], dtype=bool)
        if masks is not None and masks[k] is not None:
            valid = ~np.asarray(masks[k], dtype=bool)
        v = valid if ref.ndim == 2 else valid[..., None]
        total += np.where(v, warped, 0.0)
        count += valid
    return total / (count if ref.ndim == 2 else count[..., None])


def make_overlay(target: np.ndarray, warped: np.ndarray) -> np.ndarray:
    """RGB image with the target luma in red and the warped source luma in green and blue."""
    a = to_gray(np.asarray(target, dtype=float))
    b = to_gray(np.asarray(warped, dtype=float))
    if a.shape != b.shape:
        raise ValueError("overlay inputs must have the same size")
    return np.stack([a, b, b], axis=-1)


# -- operators -----------------------------------------------------------------

def decimate(x: np.ndarray, factor: int) -> np.ndarray:
    """Average pooling over ``factor x factor`` blocks."""
    h, w = x.shape[:2]
    if h % factor or w % factor:
        raise ValueError(f"{h}x{w} not divisible by {factor}")
    return x.reshape(h // factor, factor, w // factor, factor, *x.shape[2:]).mean(axis=(1, 3))


def decimate_adjoint(y: np.ndarray, factor: int) -> np.ndarray:
    """Adjoint of :func:`decimate`: replicate each sample and divide by ``factor**2``."""
    up = np.repeat(np.repeat(y, factor, axis=0), factor, axis=1)
    return up / factor ** 2


def warp_matrix(flow: np.ndarray) -> sparse.csr_matrix:
    """Sparse bilinear backward warp: ``(W x)(u) = x(u + flow(u))`` with clamping."""
    h, w = flow.shape[:2]
    gy, gx = np.mgrid[0:h, 0:w].astype(float)
    x = np.clip(gx + flow[..., 0], 0.0, w - 1).ravel()
    y = np.clip(gy + flow[..., 1], 0.0, h - 1).ravel()
    x0 = np.minimum(np.floor(x).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    rows = np.tile(np.arange(h * w), 4)
    cols = np.concatenate([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1])
    vals = np.concatenate([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(h * w, h * w))


def upscale_flow(flow: np.ndarray, factor: int) -> np.ndarray:
    """Low-resolution flow resampled to the ``factor``-times grid, in high-res pixels."""
    h, w = flow.shape[:2]
    return factor * resize_bilinear(flow, (h * factor, w * factor))


@dataclass
class SRConfig:
    factor: int = 2
    iterations: int = 100
    step: float | None = None       # None: inverse of a Lipschitz bound of the gradient
    patience: int = 3               # consecutive loss increases before aborting

    def __post_init__(self):
        if self.factor < 1:
            raise ValueError("factor must be >= 1")
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")


@dataclass
class SRResult:
    image: np.ndarray
    losses: list = field(default_factory=list)
    step: float = 0.0


class SRProblem:
    """Data term of multi-frame super-resolution for flattened channels."""

    def __init__(self, images, reverse_flows, factor: int, masks=None):
        self.factor = int(factor)
        y0 = np.asarray(images[0], dtype=float)
        self.lr_shape = y0.shape[:2]
        self.hr_shape = (self.lr_shape[0] * factor, self.lr_shape[1] * factor)
        self.channels = y0.shape[2:]
        self.ys = [np.asarray(im, dtype=float) for im in images]
        n = self.hr_shape[0] * self.hr_shape[1]
        self.W = [sparse.identity(n, format="csr")]
        for fl in reverse_flows:
            self.W.append(warp_matrix(upscale_flow(np.asarray(fl, dtype=float), factor)))
        if len(self.W) != len(self.ys):
            raise ValueError("need one reverse flow per non-reference image")
        self.masks = [np.ones(self.lr_shape)] + [
            np.ones(self.lr_shape) if masks is None or masks[k] is None
            else (~np.asarray(masks[k], dtype=bool)).astype(float)
            for k in range(len(self.ys) - 1)]

    def _flat(self, x):
        return x.reshape(self.hr_shape[0] * self.hr_shape[1], -1)

    def _unflat(self, v):
        return v.reshape(self.hr_shape + self.channels)

    def forward(self, x, i):
        """``D W_i x`` for view ``i``."""
        return decimate(self._unflat(self.W[i] @ self._flat(x)), self.factor)

    def adjoint(self, r, i):
        """``W_i^T D^T r``."""
        return self._unflat(self.W[i].T @ self._flat(decimate_adjoint(r, self.factor)))

    def _mask(self, i):
        m = self.masks[i]
        return m if not self.channels else m[..., None]

    def loss_and_grad(self, x):
        loss = 0.0
        grad = np.zeros_like(x)
        for i, y in enumerate(self.ys):
            r = (self.forward(x, i) - y) * self._mask(i)
            loss += 0.5 * float(np.sum(r * r))
            grad += self.adjoint(r, i)
        return loss, grad

    def lipschitz_bound(self) -> float:
        """``sum_i |D|^2 |W_i|_1 |W_i|_inf`` with ``|D|^2 = 1/factor^2`` and unit row sums."""
        col = sum(float(np.max(np.asarray(W.sum(axis=0)))) for W in self.W)
        return col / self.factor ** 2


def super_resolve(images, reverse_flows, cfg: SRConfig | None = None, masks=None) -> SRResult:
    """Gradient-descent super-resolution of ``images[0]``.

    ``reverse_flows[k]`` maps view ``k + 1`` pixels to the reference (low
    resolution); ``masks[k]`` marks its occluded pixels.
    """
    cfg = cfg or SRConfig()
    prob = SRProblem(images, reverse_flows, cfg.factor, masks)
    step = cfg.step if cfg.step is not None else 1.0 / prob.lipschitz_bound()
    x = resize_bilinear(prob.ys[0], prob.hr_shape)
    losses = []
    rises = 0
    for _ in range(cfg.iterations):
        loss, grad = prob.loss_and_grad(x)
        if not np.isfinite(loss):
            raise FloatingPointError("super-resolution loss is not finite")
        if losses and loss > losses[-1]:
            rises += 1
            if rises >= cfg.patience:
                raise FloatingPointError(
                    f"super-resolution diverging: loss rose {rises} times in a row (step={step:g})")
        else:
            rises = 0
        losses.append(loss)
        x = x - step * grad
    losses.append(prob.loss_and_grad(x)[0])
    return SRResult(x, losses, step)

