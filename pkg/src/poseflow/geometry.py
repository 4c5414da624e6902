"""Rigid poses, the 6-D rotation representation and pinhole projection.

Poses map model-frame points (meters) into the camera frame. Pixel
coordinates follow the continuous convention where the center of pixel
``(u, v)`` sits at ``(u + 0.5, v + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCamera, DegenerateInput

_EPS = 1e-9


def _frozen(a, shape):
    a = np.array(a, dtype=np.float64).reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DegenerateInput(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x_cam = R @ x_model + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", _frozen(self.R, (3, 3)))
        object.__setattr__(self, "t", _frozen(self.t, (3,)))

    @classmethod
    def identity(cls, t=(0.0, 0.0, 1.0)):
        return cls(np.eye(3), t)

    def transform(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return points @ self.R.T + self.t

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def allclose(self, other: "Pose", atol=1e-9):
        return np.allclose(self.R, other.R, atol=atol) and np.allclose(self.t, other.t, atol=atol)

    def to_dict(self):
        return {"R": self.R.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["R"], dtype=np.float64), np.asarray(d["t"], dtype=np.float64))

    def __repr__(self):
        return f"Pose(R={self.R.tolist()}, t={self.t.tolist()})"


@dataclass(frozen=True, eq=False)
class RelativePose:
    """Decoupled pose update: 6-D relative rotation plus untangled translation.

    ``v[:2]`` is the image-plane shift of the object origin in pixels and
    ``v[2]`` the log ratio ``log(z_prev / z_new)``.
    """

    rot6: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rot6", _frozen(self.rot6, (6,)))
        object.__setattr__(self, "v", _frozen(self.v, (3,)))
        if not (np.all(np.isfinite(self.rot6)) and np.all(np.isfinite(self.v))):
            raise DegenerateInput("relative pose must be finite")

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0, 0, 0, 1, 0]), np.zeros(3))

    @property
    def rotation(self):
        return rot6d_to_matrix(self.rot6)


def rot6d_to_matrix(r):
    """Map a 6-vector (two stacked columns) to a rotation via Gram-Schmidt."""
    r = np.asarray(r, dtype=np.float64).reshape(6)
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    if not n1 > _EPS:
        raise DegenerateInput("first column of the 6-D rotation has zero norm")
    b1 = a1 / n1
    a2 = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(a2)
    if not n2 > _EPS * max(1.0, np.linalg.norm(r[3:])):
        raise DegenerateInput("columns of the 6-D rotation are parallel")
    b2 = a2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def matrix_to_rot6d(R):
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    return np.concatenate([R[:, 0], R[:, 1]])


def axis_angle_to_matrix(rotvec):
    return Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix()


def matrix_to_axis_angle(R):
    return Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_rotvec()


def orthonormalize(R):
    """Nearest proper rotation in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def apply_relative_pose(prev: Pose, delta: RelativePose, K: CameraIntrinsics) -> Pose:
    R_new = delta.rotation @ prev.R
    vx, vy, vz = delta.v
    tx, ty, tz = prev.t
    z_new = tz / np.exp(vz)
    if not z_new > 0:
        raise DegenerateInput(f"updated depth {z_new} is not positive")
    x_new = (vx / K.fx + tx / tz) * z_new
    y_new = (vy / K.fy + ty / tz) * z_new
    return Pose(R_new, np.array([x_new, y_new, z_new]))


def relative_pose_between(prev: Pose, target: Pose, K: CameraIntrinsics) -> RelativePose:
    """Inverse of :func:`apply_relative_pose`: the update that maps ``prev`` onto ``target``."""
    R_delta = target.R @ prev.R.T
    tx, ty, tz = prev.t
    gx, gy, gz = target.t
    if not (tz > 0 and gz > 0):
        raise DegenerateInput("both poses need positive depth")
    v = np.array([K.fx * (gx / gz - tx / tz), K.fy * (gy / gz - ty / tz), np.log(tz / gz)])
    return RelativePose(matrix_to_rot6d(R_delta), v)


def scale_relative_pose(delta: RelativePose, gain: float) -> RelativePose:
    """Scale an update along its geodesic: rotation angle and translation terms by ``gain``."""
    rotvec = matrix_to_axis_angle(delta.rotation)
    return RelativePose(matrix_to_rot6d(axis_angle_to_matrix(gain * rotvec)), gain * delta.v)


def project_points(points, pose: Pose, K: CameraIntrinsics, strict=True):
    """Project model-frame points; returns ``(uv[N, 2], depth[N])``.

    With ``strict=False`` points at non-positive depth get NaN pixels
    instead of raising.
    """
    cam = pose.transform(points)
    z = cam[:, 2]
    bad = ~(z > _EPS)
    if strict and bad.any():
        raise BehindCamera(np.flatnonzero(bad))
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * cam[:, 0] / z + K.cx
        v = K.fy * cam[:, 1] / z + K.cy
    uv = np.stack([u, v], axis=1)
    uv[bad] = np.nan
    return uv, z


def rotation_error_deg(Ra, Rb):
    cos = (np.trace(np.asarray(Ra) @ np.asarray(Rb).T) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def translation_error(ta, tb):
    return float(np.linalg.norm(np.asarray(ta, dtype=np.float64) - np.asarray(tb, dtype=np.float64)))


def perturb_pose(pose: Pose, rng, max_rot_deg=15.0, max_trans_frac=0.05) -> Pose:
    """Random pose around ``pose``.

    Rotation: uniform random axis, angle uniform in ``[0, max_rot_deg]``,
    applied in the camera frame about the object origin. Translation: uniform
    random direction, length uniform in ``[0, max_trans_frac * |t|]``.
    """
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0.0, max_rot_deg))
    dR = axis_angle_to_matrix(axis * angle)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    dt = direction * rng.uniform(0.0, max_trans_frac * np.linalg.norm(pose.t))
    return Pose(dR @ pose.R, pose.t + dt)
