import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from burstalign.imgproc import (bilinear_sample, bilinear_sample_with_grad, build_pyramid, check_image,
                                downsample, psnr, resize_bilinear, resize_bilinear_adjoint, sobel_gradient,
                                to_gray)

images = st.tuples(st.integers(3, 12), st.integers(3, 12)).flatmap(
    lambda s: arrays(np.float64, s, elements=st.floats(0, 1)))


def naive_bilinear(img, x, y):
    h, w = img.shape
    x = min(max(x, 0.0), w - 1)
    y = min(max(y, 0.0), h - 1)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    return ((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x1]
            + (1 - fx) * fy * img[y1, x0] + fx * fy * img[y1, x1])


def test_check_image_rejects_bad_input():
    with pytest.raises(ValueError):
        check_image(np.zeros((4, 4, 2)))
    with pytest.raises(ValueError):
        check_image(np.full((4, 4), np.nan))


def test_to_gray_weights_sum_to_one():
    assert to_gray(np.ones((2, 2, 3)))[0, 0] == pytest.approx(1.0)


# -- bilinear sampling -----------------------------------------------------------

def test_sample_at_integer_nodes_is_exact(rng):
    img = rng.random((7, 9))
    y, x = np.mgrid[0:7, 0:9]
    assert np.array_equal(bilinear_sample(img, x.astype(float), y.astype(float)), img)


def test_sample_midpoint():
    img = np.array([[0.0, 1.0], [0.0, 1.0]])
    assert bilinear_sample(img, 0.5, 0.0) == pytest.approx(0.5)


def test_sample_ramp_exact(rng):
    y, x = np.mgrid[0:10, 0:12].astype(float)
    img = 0.3 * x - 0.2 * y + 0.7
    px, py = rng.uniform(0, 11, 500), rng.uniform(0, 9, 500)
    np.testing.assert_allclose(bilinear_sample(img, px, py), 0.3 * px - 0.2 * py + 0.7, atol=1e-12)


def test_sample_clamps_outside(rng):
    img = rng.random((5, 6))
    assert bilinear_sample(img, -3.0, -1.0) == img[0, 0]
    assert bilinear_sample(img, 40.0, 2.0) == img[2, 5]


@given(images, st.floats(-2, 14), st.floats(-2, 14))
def test_sample_matches_naive_oracle(img, x, y):
    assert bilinear_sample(img, x, y) == pytest.approx(naive_bilinear(img, x, y), abs=1e-12)


def test_sample_rgb_channels(rng):
    img = rng.random((6, 6, 3))
    x, y = rng.uniform(0, 5, 20), rng.uniform(0, 5, 20)
    out = bilinear_sample(img, x, y)
    for c in range(3):
        np.testing.assert_allclose(out[:, c], bilinear_sample(img[..., c], x, y), atol=1e-15)


def test_sample_gradient_matches_finite_differences(rng):
    img = rng.random((8, 8))
    x, y = rng.uniform(0.1, 6.9, 200), rng.uniform(0.1, 6.9, 200)
    # keep away from cell boundaries where the interpolant has kinks
    x = np.floor(x) + np.clip(x - np.floor(x), 0.05, 0.95)
    y = np.floor(y) + np.clip(y - np.floor(y), 0.05, 0.95)
    v, gx, gy = bilinear_sample_with_grad(img, x, y)
    h = 1e-6
    np.testing.assert_allclose(v, bilinear_sample(img, x, y), atol=1e-15)
    np.testing.assert_allclose(gx, (bilinear_sample(img, x + h, y) - bilinear_sample(img, x - h, y)) / (2 * h), atol=1e-7)
    np.testing.assert_allclose(gy, (bilinear_sample(img, x, y + h) - bilinear_sample(img, x, y - h)) / (2 * h), atol=1e-7)


# -- Sobel ---------------------------------------------------------------------

def test_sobel_constant_is_zero():
    np.testing.assert_allclose(sobel_gradient(np.full((5, 5), 0.3)), 0.0, atol=1e-15)


def test_sobel_unit_ramp():
    y, x = np.mgrid[0:6, 0:7].astype(float)
    g = sobel_gradient(x)
    np.testing.assert_allclose(g[1:-1, 1:-1, 0], 1.0)
    np.testing.assert_allclose(g[1:-1, 1:-1, 1], 0.0)


def test_sobel_rejects_tiny():
    with pytest.raises(ValueError):
        sobel_gradient(np.zeros((2, 5)))


@given(images)
def test_sobel_matches_naive_convolution(img):
    h, w = img.shape
    pad = np.pad(img, 1, mode="edge")
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]) / 8.0
    for i in range(h):
        for j in range(w):
            win = pad[i:i + 3, j:j + 3]
            gx[i, j] = np.sum(win * kx)
            gy[i, j] = np.sum(win * kx.T)
    g = sobel_gradient(img)
    np.testing.assert_allclose(g[..., 0], gx, atol=1e-12)
    np.testing.assert_allclose(g[..., 1], gy, atol=1e-12)


# -- pyramids ------------------------------------------------------------------

def test_downsample_constant():
    np.testing.assert_array_equal(downsample(np.full((8, 8), 0.25), 4), np.full((2, 2), 0.25))


def test_downsample_block_mean():
    assert downsample(np.array([[0.0, 0.0], [1.0, 1.0]]), 2)[0, 0] == 0.5


def test_downsample_rejects_non_divisible():
    with pytest.raises(ValueError):
        downsample(np.zeros((6, 6)), 4)
    with pytest.raises(ValueError):
        downsample(np.zeros((6, 6)), 3)


@given(st.integers(1, 4), st.integers(1, 4))
def test_downsample_preserves_mean_and_composes(a, b):
    rng = np.random.default_rng(a * 10 + b)
    img = rng.random((4 * a, 4 * b))
    assert downsample(img, 4).mean() == pytest.approx(img.mean(), abs=1e-14)
    np.testing.assert_allclose(downsample(downsample(img, 2), 2), downsample(img, 4), atol=1e-15)


def test_pyramid_shapes():
    assert len(build_pyramid(np.zeros((5, 5)), 0)) == 1
    pyr = build_pyramid(np.zeros((512, 512)), 5)
    assert pyr[0].shape == (16, 16) and pyr[-1].shape == (512, 512)


def test_pyramid_levels_equal_direct_downsample(rng):
    img = rng.random((32, 48))
    pyr = build_pyramid(img, 3)
    for l, lev in enumerate(pyr):
        np.testing.assert_allclose(lev, downsample(img, 2 ** (3 - l)), atol=1e-15)


# -- resize and adjoint ----------------------------------------------------------

def test_resize_constant_and_identity(rng):
    np.testing.assert_allclose(resize_bilinear(np.full((4, 5), 2.0), (16, 20)), 2.0)
    img = rng.random((6, 7, 3))
    np.testing.assert_allclose(resize_bilinear(img, (6, 7)), img)


@given(st.integers(2, 9), st.integers(2, 9), st.integers(2, 20), st.integers(2, 20))
def test_resize_adjoint_dot_product(h, w, H, W):
    rng = np.random.default_rng(h * 1000 + w * 100 + H * 10 + W)
    x = rng.standard_normal((h, w, 2))
    y = rng.standard_normal((H, W, 2))
    lhs = np.sum(resize_bilinear(x, (H, W)) * y)
    rhs = np.sum(x * resize_bilinear_adjoint(y, (h, w)))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_psnr():
    a = np.zeros((4, 4))
    assert psnr(a, a) == float("inf")
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
