"""Rigid transforms on SE(3), their se(3) twists, and pinhole projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-8
MIN_DEPTH = 1e-6


def skew(w):
    w = np.asarray(w, dtype=np.float64)
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.array(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> RigidTransform:
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self * other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def is_valid(self, tol=1e-9) -> bool:
        r = self.rotation
        return bool(
            np.all(np.abs(r.T @ r - np.eye(3)) <= tol)
            and abs(np.linalg.det(r) - 1.0) <= tol
            and np.all(np.isfinite(self.translation))
        )

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class Twist:
    """se(3) coordinates: axis-angle rotation and the translational part.

    ``exp_map`` sends ``trans_vec`` through the left Jacobian, so for a
    non-zero rotation ``trans_vec`` is not the translation of the transform.
    """

    rot_vec: np.ndarray
    trans_vec: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rot_vec", np.array(self.rot_vec, dtype=np.float64).reshape(3))
        object.__setattr__(self, "trans_vec", np.array(self.trans_vec, dtype=np.float64).reshape(3))

    @classmethod
    def zero(cls) -> Twist:
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, v) -> Twist:
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return cls(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        """``(rx, ry, rz, tx, ty, tz)``, the ordering used by every Jacobian here."""
        return np.concatenate([self.rot_vec, self.trans_vec])

    def __repr__(self):
        return f"Twist(rot_vec={self.rot_vec.tolist()}, trans_vec={self.trans_vec.tolist()})"


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def project_camera_points(self, pts):
        """Project camera-frame points. Returns ``(uv, in_front)``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        z = pts[:, 2]
        in_front = z > MIN_DEPTH
        zs = np.where(in_front, z, 1.0)
        uv = np.empty((pts.shape[0], 2))
        uv[:, 0] = self.fx * pts[:, 0] / zs + self.cx
        uv[:, 1] = self.fy * pts[:, 1] / zs + self.cy
        return uv, in_front

    def in_image(self, uv) -> np.ndarray:
        """Pixel-area test: pixel ``(u, v)`` covers ``[u - 0.5, u + 0.5)``."""
        uv = np.atleast_2d(uv)
        return (
            (uv[:, 0] >= -0.5)
            & (uv[:, 0] < self.width - 0.5)
            & (uv[:, 1] >= -0.5)
            & (uv[:, 1] < self.height - 0.5)
        )

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame rays with unit z through every pixel centre, row-major."""
        u, v = np.meshgrid(np.arange(self.width, dtype=np.float64), np.arange(self.height, dtype=np.float64))
        rays = np.empty((self.height * self.width, 3))
        rays[:, 0] = ((u - self.cx) / self.fx).ravel()
        rays[:, 1] = ((v - self.cy) / self.fy).ravel()
        rays[:, 2] = 1.0
        return rays


def _so3_coeffs(theta):
    """``sin(t)/t``, ``(1-cos t)/t^2``, ``(t-sin t)/t^3`` without cancellation."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    a = np.sin(theta) / theta
    half = np.sin(0.5 * theta) / theta
    b = 2.0 * half * half
    if theta < 1e-3:
        t2 = theta * theta
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        c = (theta - np.sin(theta)) / theta**3
    return a, b, c


def so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    a, b, _ = _so3_coeffs(theta)
    k = skew(w)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r) -> np.ndarray:
    """Axis-angle vector with angle in ``[0, pi]``."""
    r = np.asarray(r, dtype=np.float64)
    v = 0.5 * vee(r - r.T)
    s = float(np.linalg.norm(v))
    c = 0.5 * (np.trace(r) - 1.0)
    theta = float(np.arctan2(s, c))
    if theta < SMALL_ANGLE:
        return v * (1.0 + theta * theta / 6.0)
    if np.pi - theta < 1e-6:
        # sin(theta) ~ 0: recover the axis from the symmetric part, R + I = 2 a a^T near pi.
        b = 0.25 * (r + r.T) + 0.5 * np.eye(3)
        i = int(np.argmax(np.diag(b)))
        axis = b[:, i] / np.sqrt(max(b[i, i], 0.0))
        axis /= np.linalg.norm(axis)
        if s > 0.0 and float(axis @ v) < 0.0:
            axis = -axis
        return theta * axis
    return v * (theta / s)


def left_jacobian(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    _, b, c = _so3_coeffs(theta)
    k = skew(w)
    return np.eye(3) + b * k + c * (k @ k)


def left_jacobian_inv(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    k = skew(w)
    if theta < SMALL_ANGLE:
        d = 1.0 / 12.0 + theta * theta / 720.0
    elif theta < 1e-3:
        t2 = theta * theta
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        half = 0.5 * theta
        d = (1.0 - half / np.tan(half)) / (theta * theta)
    return np.eye(3) - 0.5 * k + d * (k @ k)


def exp_map(xi: Twist) -> RigidTransform:
    return RigidTransform(so3_exp(xi.rot_vec), left_jacobian(xi.rot_vec) @ xi.trans_vec)


def log_map(t: RigidTransform) -> Twist:
    """Inverse of :func:`exp_map`.

    A rotation of exactly pi is handled by reading the axis off ``R + I``;
    the sign of the axis is then arbitrary (both represent the same rotation).
    """
    w = so3_log(t.rotation)
    return Twist(w, left_jacobian_inv(w) @ t.translation)


def project(cam: PinholeCamera, xi: Twist, point):
    """Pixel of a LiDAR-frame point under extrinsic ``exp_map(xi)``.

    Returns ``None`` when the point is behind the camera (``Z <= 1e-6``).
    Out-of-image pixels are returned as is.
    """
    pc = exp_map(xi).apply(np.asarray(point, dtype=np.float64).reshape(1, 3))
    uv, front = cam.project_camera_points(pc)
    if not front[0]:
        return None
    return uv[0]


def project_points(cam: PinholeCamera, transform: RigidTransform, points):
    """Vectorised projection: ``(uv, camera_points, in_front)``."""
    pc = transform.apply(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    uv, front = cam.project_camera_points(pc)
    return uv, pc, front


def rotation_angle(r) -> float:
    """Geodesic angle of a rotation matrix, radians."""
    return float(np.linalg.norm(so3_log(r)))
