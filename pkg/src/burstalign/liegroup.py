"""SO(3)/SE(3) exponential and logarithm maps with their Jacobians.

Twists are stored with the rotational part first: ``xi = (omega, v)``.
Perturbations are applied on the left throughout, i.e. for a small
increment ``d``::

    Exp(xi + d) ~= Exp(J_l(xi) @ d) o Exp(xi)

where ``J_l`` is :func:`left_jacobian_se3`.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

# Below this angle the closed-form coefficients are replaced by their
# power series (the closed forms cancel catastrophically near zero).
SERIES_THRESHOLD = 0.25
_NTERMS = 8


class BranchError(ValueError):
    """Raised when a rotation is too close to the angle-pi cut of the log."""


@dataclass(frozen=True)
class Twist:
    omega: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))

    @classmethod
    def from_vector(cls, xi) -> "Twist":
        xi = np.asarray(xi, dtype=float).reshape(6)
        return cls(xi[:3], xi[3:])

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.v])


@dataclass(frozen=True)
class RigidMotion:
    """``x -> R @ x + t``. Maps reference-camera points into another camera."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "RigidMotion":
        return cls(np.eye(3), np.zeros(3))

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.R
        return bool(
            np.all(np.isfinite(R))
            and np.all(np.isfinite(self.t))
            and np.abs(R.T @ R - np.eye(3)).max() <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol
        )

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Transform points stored along the last axis."""
        return np.asarray(x) @ self.R.T + self.t

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def __matmul__(self, other: "RigidMotion") -> "RigidMotion":
        return compose(self, other)


def _vec6(xi) -> np.ndarray:
    if isinstance(xi, Twist):
        return xi.as_vector()
    return np.asarray(xi, dtype=float).reshape(6)


def hat(w) -> np.ndarray:
    """Skew-symmetric matrix such that ``hat(w) @ x == cross(w, x)``."""
    w = np.asarray(w, dtype=float)
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def vee(W: np.ndarray) -> np.ndarray:
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def _series(theta2: float, coeff) -> float:
    return sum(coeff(k) * theta2 ** k for k in range(_NTERMS))


def _coefficients(theta: float):
    """sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3 and the two higher-order
    coefficients of the SE(3) Q block."""
    t2 = theta * theta
    if theta < SERIES_THRESHOLD:
        a = _series(t2, lambda k: (-1) ** k / factorial(2 * k + 1))
        b = _series(t2, lambda k: (-1) ** k / factorial(2 * k + 2))
        c = _series(t2, lambda k: (-1) ** k / factorial(2 * k + 3))
        d = _series(t2, lambda k: (-1) ** k / factorial(2 * k + 4))
        e = _series(t2, lambda k: (-1) ** k * (k + 1) / factorial(2 * k + 5))
        return a, b, c, d, e
    s, co = np.sin(theta), np.cos(theta)
    a = s / theta
    b = (1.0 - co) / t2
    c = (theta - s) / (t2 * theta)
    d = (t2 + 2.0 * co - 2.0) / (2.0 * t2 * t2)
    e = (2.0 * theta - 3.0 * s + theta * co) / (2.0 * t2 * t2 * theta)
    return a, b, c, d, e


def exp_so3(w) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(3)
    theta = float(np.linalg.norm(w))
    a, b, _, _, _ = _coefficients(theta)
    W = hat(w)
    return np.eye(3) + a * W + b * (W @ W)


def left_jacobian_so3(w) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(3)
    theta = float(np.linalg.norm(w))
    _, b, c, _, _ = _coefficients(theta)
    W = hat(w)
    return np.eye(3) + b * W + c * (W @ W)


def exp_se3(xi) -> RigidMotion:
    """Group exponential: ``R = Rodrigues(omega)``, ``t = J_l(omega) @ v``."""
    xi = _vec6(xi)
    w, v = xi[:3], xi[3:]
    return RigidMotion(exp_so3(w), left_jacobian_so3(w) @ v)


def linear_pose(xi) -> RigidMotion:
    """First-order pose ``[I + hat(omega), v]``; R is not orthonormal."""
    xi = _vec6(xi)
    return RigidMotion(np.eye(3) + hat(xi[:3]), xi[3:].copy())


def log_so3(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    tr = float(np.trace(R))
    if tr <= -1.0 + 1e-9:
        raise BranchError(f"rotation angle too close to pi (trace={tr:.12g})")
    s_vec = 0.5 * vee(R - R.T)
    sin_t = float(np.linalg.norm(s_vec))
    theta = float(np.arctan2(sin_t, 0.5 * (tr - 1.0)))
    if theta < SERIES_THRESHOLD:
        a = _series(theta * theta, lambda k: (-1) ** k / factorial(2 * k + 1))
        return s_vec / a
    return s_vec * (theta / sin_t)


def log_se3(m: RigidMotion) -> Twist:
    w = log_so3(m.R)
    v = np.linalg.solve(left_jacobian_so3(w), m.t)
    return Twist(w, v)


def inverse(m: RigidMotion) -> RigidMotion:
    return RigidMotion(m.R.T, -m.R.T @ m.t)


def compose(a: RigidMotion, b: RigidMotion) -> RigidMotion:
    """``a o b``: apply ``b`` first."""
    return RigidMotion(a.R @ b.R, a.R @ b.t + a.t)


def left_jacobian_se3(xi) -> np.ndarray:
    """6x6 left Jacobian in (omega, v) ordering: ``[[J, 0], [Q, J]]``."""
    xi = _vec6(xi)
    w, v = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    _, b, c, d, e = _coefficients(theta)
    W, V = hat(w), hat(v)
    WW = W @ W
    J = np.eye(3) + b * W + c * WW
    Q = (
        0.5 * V
        + c * (W @ V + V @ W + W @ V @ W)
        + d * (WW @ V + V @ WW - 3.0 * W @ V @ W)
        + e * (W @ V @ WW + WW @ V @ W)
    )
    out = np.zeros((6, 6))
    out[:3, :3] = J
    out[3:, 3:] = J
    out[3:, :3] = Q
    return out
