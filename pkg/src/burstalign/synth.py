"""Synthetic bursts of textured planes with analytic ground truth.

Cameras follow ``y_k = R_k y_0 + t_k`` (reference-camera coordinates to
view-k coordinates). Every view is rendered by casting each pixel ray
against all planes, keeping the nearest hit, and sampling a smooth
periodic noise texture at the hit point. Depth, flow and occlusion come
from the same geometry, so they are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .imgproc import bilinear_sample
from .liegroup import RigidMotion, exp_se3, log_so3
from .scene import Intrinsics

# ---------------------------------------------------------------------------


def pink_noise(size: int, rng: np.random.Generator, cutoff: float = 0.2, exponent: float = 1.0) -> np.ndarray:
    """Periodic ``1/f**exponent`` noise, low-passed at ``cutoff`` cycles/texel, scaled to [0.1, 0.9]."""
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    f = np.hypot(fx, fy)
    amp = np.where(f > 0, 1.0 / np.maximum(f, 1.0 / size) ** exponent, 0.0)
    amp *= np.exp(-0.5 * (f / cutoff) ** 2)
    phase = rng.uniform(0.0, 2 * np.pi, size=amp.shape)
    tex = np.fft.irfft2(amp * np.exp(1j * phase), s=(size, size))
    tex -= tex.min()
    tex /= max(tex.max(), 1e-12)
    return 0.1 + 0.8 * tex


@dataclass
class TexturedPlane:
    """Plane ``n . y = 1`` in reference coordinates with a periodic texture.

    The texture is laid in the plane frame spanned by ``axes`` (two
    orthonormal in-plane vectors) around ``origin``; ``texel`` is the size
    of one texel in meters. ``extent`` bounds the plane to
    ``|s| <= extent[0], |r| <= extent[1]`` in that frame (None: unbounded).
    """

    normal: np.ndarray
    texture: np.ndarray
    texel: float
    extent: tuple | None = None
    origin: np.ndarray = field(default=None)
    axes: np.ndarray = field(default=None)

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=float)
        nn = float(self.normal @ self.normal)
        if nn == 0:
            raise ValueError("plane normal must be non-zero")
        if self.origin is None:
            self.origin = self.normal / nn  # closest point to the reference center
        self.origin = np.asarray(self.origin, dtype=float)
        if self.axes is None:
            unit = self.normal / np.sqrt(nn)
            helper = np.array([1.0, 0.0, 0.0]) if abs(unit[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
            a1 = helper - (helper @ unit) * unit
            a1 /= np.linalg.norm(a1)
            self.axes = np.stack([a1, np.cross(unit, a1)])

    def intersect(self, center: np.ndarray, dirs: np.ndarray):
        """Ray parameter ``lam`` with ``center + lam * dirs`` on the plane (inf if missed)."""
        denom = dirs @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (1.0 - self.normal @ center) / denom
        lam = np.where(np.isfinite(lam) & (lam > 0), lam, np.inf)
        if self.extent is not None:
            pts = center + lam[..., None] * dirs
            s, r = self._local(np.where(np.isfinite(lam)[..., None], pts, 0.0))
            inside = (np.abs(s) <= self.extent[0]) & (np.abs(r) <= self.extent[1])
            lam = np.where(inside, lam, np.inf)
        return lam

    def _local(self, pts):
        rel = pts - self.origin
        return rel @ self.axes[0], rel @ self.axes[1]

    def shade(self, pts: np.ndarray) -> np.ndarray:
        s, r = self._local(pts)
        n = self.texture.shape[0]
        x = np.mod(s / self.texel, n)
        y = np.mod(r / self.texel, n)
        # periodic bilinear lookup: pad one texel so wrap-around interpolates
        tex = np.pad(self.texture, ((0, 1), (0, 1)), mode="wrap")
        return bilinear_sample(tex, x, y)


@dataclass
class SceneSpec:
    planes: list
    K: Intrinsics
    shape: tuple
    frames: int = 5
    trans_std: float = 0.02
    rot_std_deg: float = 0.1
    noise_std: float = 0.0
    poses: list | None = None  # explicit per-frame RigidMotion, frame 0 included
    background: float = 0.5

    def __post_init__(self):
        if self.frames < 2:
            raise ValueError("a burst needs at least 2 frames")


@dataclass
class GroundTruthBurst:
    images: list
    poses: list          # RigidMotion per frame, poses[0] is identity
    depth: np.ndarray    # reference-view depth (H, W)
    flows: list          # direct flows of views 1..K, (H, W, 2)
    occlusions: list     # per view 1..K, on the view-k pixel grid
    K: Intrinsics
    depths_view: list = field(default_factory=list)  # depth seen from each view 1..K

    @property
    def init_depth16(self) -> np.ndarray:
        return coarse_depth(self.depth, (16, 16))


def coarse_depth(depth: np.ndarray, shape) -> np.ndarray:
    """Area-averaged low-resolution depth map."""
    return cv2.resize(np.asarray(depth, dtype=np.float64), (shape[1], shape[0]), interpolation=cv2.INTER_AREA)


# -- trajectories --------------------------------------------------------------

def _bezier(ctrl: np.ndarray, s: np.ndarray) -> np.ndarray:
    n = len(ctrl) - 1
    from math import comb
    basis = np.stack([comb(n, i) * s ** i * (1 - s) ** (n - i) for i in range(n + 1)], axis=1)
    return basis @ ctrl


def smooth_trajectory(frames: int, trans_std: float, rot_std_deg: float, rng: np.random.Generator,
                      n_ctrl: int = 4):
    """Bezier-smoothed random path starting at the identity.

    Translations and rotation vectors are rescaled so that their standard
    deviation over all frames and axes equals the requested values.
    """
    s = np.linspace(0.0, 1.0, frames)
    out = []
    for std in (trans_std, np.deg2rad(rot_std_deg)):
        ctrl = rng.standard_normal((n_ctrl, 3))
        path = _bezier(ctrl, s)
        path -= path[0]
        cur = path.std()
        path = path * (std / cur) if cur > 0 and std > 0 else np.zeros_like(path)
        out.append(path)
    trans, rots = out
    return [RigidMotion(exp_se3(np.r_[w, 0, 0, 0]).R, t) for w, t in zip(rots, trans)]


# -- rendering -----------------------------------------------------------------

def _cast(planes, center, dirs):
    """Nearest hit parameter and plane index per ray."""
    lams = np.stack([p.intersect(center, dirs) for p in planes])
    idx = np.argmin(lams, axis=0)
    lam = np.take_along_axis(lams, idx[None], 0)[0]
    return lam, idx


def render_view(spec: SceneSpec, pose: RigidMotion):
    """Image and depth of the view at ``pose``; returns ``(img, depth, points_ref)``."""
    rays = spec.K.rays(spec.shape)
    center = -pose.R.T @ pose.t
    dirs = rays @ pose.R  # R^T applied to each ray
    lam, idx = _cast(spec.planes, center, dirs)
    pts = center + np.where(np.isfinite(lam), lam, 0.0)[..., None] * dirs
    img = np.full(spec.shape, spec.background)
    for i, p in enumerate(spec.planes):
        sel = (idx == i) & np.isfinite(lam)
        if np.any(sel):
            img[sel] = p.shade(pts[sel])
    return img, lam, pts


def generate(spec: SceneSpec, seed: int = 0) -> GroundTruthBurst:
    rng = np.random.default_rng(seed)
    if spec.poses is not None:
        poses = list(spec.poses)
        if len(poses) != spec.frames:
            raise ValueError("explicit poses must match the frame count")
    else:
        poses = smooth_trajectory(spec.frames, spec.trans_std, spec.rot_std_deg, rng)
    images, depths = [], []
    for pose in poses:
        img, lam, _ = render_view(spec, pose)
        if not np.all(np.isfinite(lam)):
            raise ValueError("some pixels see no plane; every view must be covered")
        images.append(img)
        depths.append(lam)
    for k, pose in enumerate(poses):
        for p in spec.planes:
            c = -pose.R.T @ pose.t
            if p.normal @ c >= 1.0:
                raise ValueError(f"a plane passes behind or through camera {k}")
    depth = depths[0]
    rays = spec.K.rays(spec.shape)
    pts0 = rays * depth[..., None]
    gy, gx = np.mgrid[0:spec.shape[0], 0:spec.shape[1]].astype(float)
    flows, occs = [], []
    for pose, lam_k in zip(poses[1:], depths[1:]):
        q = pts0 @ pose.R.T + pose.t
        x, y = spec.K.to_pixel(q[..., 0] / q[..., 2], q[..., 1] / q[..., 2])
        flows.append(np.stack([x - gx, y - gy], axis=-1))
        occs.append(occlusion_in_view(spec, pose, lam_k, depth))
    if spec.noise_std > 0:
        images = [im + rng.normal(0.0, spec.noise_std, im.shape) for im in images]
    return GroundTruthBurst(images, poses, depth, flows, occs, spec.K, depths[1:])


def occlusion_in_view(spec: SceneSpec, pose: RigidMotion, depth_k: np.ndarray, depth0: np.ndarray,
                      rel_tol: float = 1e-6) -> np.ndarray:
    """Pixels of view k whose surface point is hidden in the reference view.

    Points that project outside the reference frame are not marked.
    """
    rays = spec.K.rays(spec.shape)
    pk = rays * depth_k[..., None]
    p0 = (pk - pose.t) @ pose.R  # R^T (p - t)
    z0 = p0[..., 2]
    x, y = spec.K.to_pixel(p0[..., 0] / z0, p0[..., 1] / z0)
    h, w = spec.shape
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1) & (z0 > 0)
    # depth of the first surface along the reference ray through the point
    dirs = p0 / z0[..., None]
    lam, _ = _cast(spec.planes, np.zeros(3), dirs)
    return inside & (lam < z0 * (1.0 - rel_tol))


def perturb_depth(depth: np.ndarray, std: float, seed: int = 0, floor: float = 1e-3) -> np.ndarray:
    """Add i.i.d. Gaussian noise (meters) and clamp to ``floor``."""
    depth = np.asarray(depth, dtype=float)
    if std == 0:
        return depth.copy()
    rng = np.random.default_rng(seed)
    return np.maximum(depth + rng.normal(0.0, std, depth.shape), floor)


# -- presets -------------------------------------------------------------------

def default_intrinsics(shape, fov_deg: float = 60.0) -> Intrinsics:
    h, w = shape
    f = 0.5 * w / np.tan(np.deg2rad(fov_deg) / 2)
    return Intrinsics(f, f, (w - 1) / 2.0, (h - 1) / 2.0, w, h)


def _texel_for(depth: float, K: Intrinsics, px_per_texel: float = 1.0) -> float:
    return px_per_texel * depth / K.fx


def plane_through(point, normal_dir) -> np.ndarray:
    """Normal ``n`` (with ``n . y = 1``) of the plane through ``point`` facing ``normal_dir``."""
    d = np.asarray(normal_dir, dtype=float)
    return d / float(d @ np.asarray(point, dtype=float))


def single_plane(shape=(256, 256), frames=5, depth=2.0, tilt_deg=(10.0, -6.0), seed=0,
                 trans_std=None, rot_std_deg=0.1, noise_std=0.0, texture_size=512) -> SceneSpec:
    rng = np.random.default_rng(seed)
    K = default_intrinsics(shape)
    ax, ay = np.deg2rad(tilt_deg)
    d = np.array([np.sin(ax), np.sin(ay), 1.0])
    n = plane_through([0, 0, depth], d)
    tex = pink_noise(texture_size, rng)
    planes = [TexturedPlane(n, tex, _texel_for(depth, K))]
    return SceneSpec(planes, K, tuple(shape), frames,
                     depth / 100.0 if trans_std is None else trans_std, rot_std_deg, noise_std)


def constant_depth(shape=(128, 128), frames=5, depth=3.0, **kw) -> SceneSpec:
    return single_plane(shape, frames, depth, tilt_deg=(0.0, 0.0), **kw)


def lateral_poses(offsets, rot_deg=0.05, seed=0):
    """Identity followed by translations ``offsets`` with small random rotations."""
    rng = np.random.default_rng(seed)
    poses = [RigidMotion.identity()]
    for t in offsets:
        w = np.deg2rad(rot_deg) * rng.standard_normal(3)
        poses.append(RigidMotion(exp_se3(np.r_[w, 0, 0, 0]).R, np.asarray(t, dtype=float)))
    return poses


TWO_PLANE_OFFSETS = [(0.09, 0.06, 0.005), (-0.07, 0.09, -0.01)]


def two_plane(shape=(128, 128), frames=3, near=2.0, far=4.0, seed=0, trans_std=0.03,
              rot_std_deg=0.05, noise_std=0.0, poses=None) -> SceneSpec:
    """Fronto background plus a bounded fronto occluder covering the central third.

    ``poses="lateral"`` uses fixed sideways offsets that give a few pixels
    of parallax across the occluding edges (3 frames).
    """
    rng = np.random.default_rng(seed)
    K = default_intrinsics(shape)
    half_w = near * (shape[1] / 6.0) / K.fx
    half_h = near * (shape[0] / 4.0) / K.fy
    back = TexturedPlane(np.array([0.0, 0.0, 1.0 / far]), pink_noise(512, rng), _texel_for(far, K))
    front = TexturedPlane(np.array([0.0, 0.0, 1.0 / near]), pink_noise(512, rng), _texel_for(near, K),
                          extent=(half_w, half_h), axes=np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    if isinstance(poses, str) and poses == "lateral":
        poses = lateral_poses(TWO_PLANE_OFFSETS, rot_std_deg, seed)
        frames = len(poses)
    return SceneSpec([front, back], K, tuple(shape), frames, trans_std, rot_std_deg, noise_std, poses)


def slanted(shape=(128, 128), frames=5, near=3.0, far=6.0, seed=0, trans_std=0.045,
            rot_std_deg=0.1, noise_std=0.0) -> SceneSpec:
    """One plane receding from ``near`` (bottom rows) to ``far`` (top rows)."""
    rng = np.random.default_rng(seed)
    K = default_intrinsics(shape)
    h = shape[0]
    v_top = (0 - K.cy) / K.fy
    v_bot = (h - 1 - K.cy) / K.fy
    # disparity linear in v: 1/z = b v + c
    b = (1.0 / near - 1.0 / far) / (v_bot - v_top)
    c = 1.0 / far - b * v_top
    n = np.array([0.0, b, c])
    mid = 0.5 * (near + far)
    planes = [TexturedPlane(n, pink_noise(512, rng), _texel_for(mid, K))]
    return SceneSpec(planes, K, tuple(shape), frames, trans_std, rot_std_deg, noise_std)


DATASET_STATS = {
    # frames, translation std (m), rotation std (deg), min depth, max depth, mean depth
    "blender1": dict(frames=20, trans_std=0.116, rot_std_deg=0.20, min_depth=0.316, max_depth=11.234, mean_depth=3.73),
    "blender2": dict(frames=20, trans_std=0.010, rot_std_deg=0.29, min_depth=1.92, max_depth=19.453, mean_depth=6.21),
}


def dataset_like(name: str, shape=(128, 128), seed=0, frames=None) -> SceneSpec:
    """Slanted-plane scene with the trajectory statistics of a named dataset."""
    st = DATASET_STATS[name]
    rng = np.random.default_rng(seed)
    K = default_intrinsics(shape)
    depth = st["mean_depth"]
    n = plane_through([0, 0, depth], [0.0, 0.15, 1.0])
    planes = [TexturedPlane(n, pink_noise(512, rng), _texel_for(depth, K))]
    return SceneSpec(planes, K, tuple(shape), frames or st["frames"], st["trans_std"], st["rot_std_deg"])


PRESETS = {
    "single_plane": single_plane,
    "constant_depth": constant_depth,
    "two_plane": two_plane,
    "slanted": slanted,
    "blender1": lambda **kw: dataset_like("blender1", **kw),
    "blender2": lambda **kw: dataset_like("blender2", **kw),
}


def preset(name: str, **kw) -> SceneSpec:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**kw)


def pose_rows(poses):
    """Rotation logs and translations of a pose list."""
    return np.array([log_so3(p.R) for p in poses]), np.array([p.t for p in poses])
