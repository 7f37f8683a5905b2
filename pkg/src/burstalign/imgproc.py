"""Image containers, pyramids, bilinear sampling and Sobel gradients.

Images are plain float arrays shaped ``(H, W)`` or ``(H, W, C)`` with
linear intensities in [0, 1]. Integer coordinate ``(x, y)`` is the center
of pixel ``(x, y)``; ``x`` indexes columns. Everything clamps to the
border.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

LUMA = np.array([0.2126, 0.7152, 0.0722])

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] not in (1, 3)):
        raise ValueError(f"expected (H, W) or (H, W, 1|3) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite samples")
    return img


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[..., 0]
    return img @ LUMA


def _corners(shape, x, y):
    h, w = shape
    # np.minimum/np.maximum is much faster than np.clip on large arrays
    x = np.minimum(np.maximum(np.asarray(x, dtype=float), 0.0), w - 1)
    y = np.minimum(np.maximum(np.asarray(y, dtype=float), 0.0), h - 1)
    x0 = np.minimum(x.astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(y.astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return x0, y0, x1, y1, x - x0, y - y0


def bilinear_sample(img: np.ndarray, x, y) -> np.ndarray:
    """Sample ``img`` at continuous pixel coordinates.

    The output has the broadcast shape of ``x``/``y`` followed by the
    channel axis of ``img`` (if any).
    """
    img = np.asarray(img, dtype=float)
    h, w = img.shape[:2]
    x0, y0, x1, y1, fx, fy = _corners((h, w), x, y)
    i00 = y0 * w + x0
    i01 = i00 + (x1 - x0)
    i10 = i00 + (y1 - y0) * w
    i11 = i10 + (x1 - x0)
    planes = [img] if img.ndim == 2 else [img[..., c] for c in range(img.shape[2])]
    out = []
    for plane in planes:
        flat = np.ascontiguousarray(plane).reshape(-1)
        a, b = flat.take(i00), flat.take(i01)
        c, d = flat.take(i10), flat.take(i11)
        top = a + (b - a) * fx
        out.append(top + (c + (d - c) * fx - top) * fy)
    return out[0] if img.ndim == 2 else np.stack(out, axis=-1)


def bilinear_sample_with_grad(img: np.ndarray, x, y):
    """Values and exact partial derivatives of the bilinear interpolant.

    Derivatives are zero where the coordinate is clamped (outside the
    image). Returns ``(value, d/dx, d/dy)``.
    """
    img = np.asarray(img, dtype=float)
    h, w = img.shape[:2]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x0, y0, x1, y1, fx, fy = _corners((h, w), x, y)
    inside_x = (x >= 0) & (x <= w - 1)
    inside_y = (y >= 0) & (y <= h - 1)
    if img.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
        inside_x, inside_y = inside_x[..., None], inside_y[..., None]
    a, b, c, d = img[y0, x0], img[y0, x1], img[y1, x0], img[y1, x1]
    top = a + (b - a) * fx
    bot = c + (d - c) * fx
    val = top + (bot - top) * fy
    gx = ((b - a) * (1.0 - fy) + (d - c) * fy) * inside_x
    gy = (bot - top) * inside_y
    return val, gx, gy


def sobel_gradient(img: np.ndarray) -> np.ndarray:
    """3x3 Sobel derivatives scaled by 1/8 (unit ramp -> 1), replicate border.

    Returns ``img.shape + (2,)`` with the last axis holding (d/dx, d/dy).
    """
    img = np.asarray(img, dtype=float)
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"Sobel needs at least 3x3 pixels, got {img.shape[:2]}")
    kx = _SOBEL_X
    ky = _SOBEL_X.T
    if img.ndim == 3:
        kx, ky = kx[..., None], ky[..., None]
    gx = ndimage.correlate(img, kx, mode="nearest")
    gy = ndimage.correlate(img, ky, mode="nearest")
    return np.stack([gx, gy], axis=-1)


def _halve(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"dimensions {h}x{w} not divisible by 2")
    r = img.reshape(h // 2, 2, w // 2, 2, *img.shape[2:])
    return 0.25 * (r[:, 0, :, 0] + r[:, 0, :, 1] + r[:, 1, :, 0] + r[:, 1, :, 1])


def downsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Block-average pooling by a power-of-two factor (repeated 2x2 means)."""
    factor = int(factor)
    if factor < 1 or factor & (factor - 1):
        raise ValueError(f"factor must be a power of two, got {factor}")
    img = np.asarray(img, dtype=float)
    h, w = img.shape[:2]
    if h % factor or w % factor:
        raise ValueError(f"dimensions {h}x{w} not divisible by {factor}")
    while factor > 1:
        img = _halve(img)
        factor //= 2
    return img


def build_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    """Return ``levels + 1`` images, coarsest first; the last is ``img``."""
    if levels < 0:
        raise ValueError("levels must be >= 0")
    out = [np.asarray(img, dtype=float)]
    for _ in range(levels):
        out.append(downsample(out[-1], 2))
    return out[::-1]


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """1-D linear interpolation matrix between pixel-center grids.

    Output sample ``j`` sits at input coordinate ``(j + 0.5) * n_in / n_out - 0.5``,
    clamped to ``[0, n_in - 1]``.
    """
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.minimum(np.floor(pos).astype(np.intp), max(n_in - 2, 0))
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = pos - i0
    A = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(A, (rows, i0), 1.0 - f)
    np.add.at(A, (rows, i1), f)
    return A


def resize_bilinear(arr: np.ndarray, shape) -> np.ndarray:
    """Separable bilinear resize of ``(H, W, ...)`` data to ``shape[:2]``."""
    arr = np.asarray(arr, dtype=float)
    Ay = interp_matrix(arr.shape[0], shape[0])
    Ax = interp_matrix(arr.shape[1], shape[1])
    tmp = np.tensordot(Ay, arr, axes=(1, 0))
    return np.moveaxis(np.tensordot(Ax, tmp, axes=(1, 1)), 0, 1)


def resize_bilinear_adjoint(grad: np.ndarray, shape) -> np.ndarray:
    """Adjoint of :func:`resize_bilinear` (maps output-shaped data back)."""
    grad = np.asarray(grad, dtype=float)
    Ay = interp_matrix(shape[0], grad.shape[0])
    Ax = interp_matrix(shape[1], grad.shape[1])
    tmp = np.tensordot(Ay, grad, axes=(0, 0))
    return np.moveaxis(np.tensordot(Ax, tmp, axes=(0, 1)), 0, 1)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)
