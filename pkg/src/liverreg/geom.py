"""Camera model, rigid transforms and pose error metrics.

Conventions: right-handed camera frame with +z forward, image origin at the
top-left corner, u to the right and v downward. Poses map world (model)
coordinates into the camera frame: p_cam = R @ p + t. No lens distortion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from liverreg.errors import InvariantViolation, NonPositiveDepth

MIN_DEPTH = 1e-9
ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvariantViolation("CameraModel", "focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise InvariantViolation("CameraModel", "image size must be at least 1x1")
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise InvariantViolation("CameraModel", "intrinsics must be finite")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class RigidPose:
    """World-to-camera rotation ``R`` and translation ``t`` (millimeters)."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvariantViolation("RigidPose", "non-finite entries")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL:
            raise InvariantViolation("RigidPose", "R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise InvariantViolation("RigidPose", "det(R) != 1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidPose":
        return RigidPose(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Return the pose applying ``other`` first, then ``self``."""
        return RigidPose(self.R @ other.R, self.R @ other.t + self.t)


def as_points(points) -> np.ndarray:
    """Validate and return an (N, 3) float array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvariantViolation("PointCloud", f"expected (N, 3) array, got {arr.shape}")
    if arr.shape[0] < 1:
        raise InvariantViolation("PointCloud", "empty point cloud")
    bad = np.flatnonzero(~np.all(np.isfinite(arr), axis=1))
    if bad.size:
        raise InvariantViolation("PointCloud", f"non-finite coordinate at index {bad[0]}")
    return arr


def apply_pose(points, pose: RigidPose) -> np.ndarray:
    pts = as_points(points)
    return pts @ pose.R.T + pose.t


def project_camera_frame(points_cam, cam: CameraModel) -> np.ndarray:
    """Pinhole projection of points already expressed in the camera frame."""
    pts = np.asarray(points_cam, dtype=float).reshape(-1, 3)
    z = pts[:, 2]
    bad = np.flatnonzero(~(z > MIN_DEPTH))
    if bad.size:
        raise NonPositiveDepth(int(bad[0]), f"depth {z[bad[0]]!r}")
    u = cam.fx * pts[:, 0] / z + cam.cx
    v = cam.fy * pts[:, 1] / z + cam.cy
    return np.stack([u, v], axis=1)


def project(points, pose: RigidPose, cam: CameraModel) -> np.ndarray:
    """Project world points to pixels, returning an (N, 2) array of (u, v).

    Pixels outside the image are returned unclipped.
    """
    return project_camera_frame(apply_pose(points, pose), cam)


def projection_jacobian(points_cam, cam: CameraModel) -> np.ndarray:
    """d(u, v)/d(x, y, z) for camera-frame points, shape (N, 2, 3)."""
    pts = np.asarray(points_cam, dtype=float).reshape(-1, 3)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    inv_z = 1.0 / z
    J = np.zeros((pts.shape[0], 2, 3))
    J[:, 0, 0] = cam.fx * inv_z
    J[:, 0, 2] = -cam.fx * x * inv_z**2
    J[:, 1, 1] = cam.fy * inv_z
    J[:, 1, 2] = -cam.fy * y * inv_z**2
    return J


def rotation_error_deg(Ra, Rb) -> float:
    Ra = np.asarray(Ra, dtype=float)
    Rb = np.asarray(Rb, dtype=float)
    # ||Ra - Rb||_F = 2*sqrt(2)*sin(theta/2); unlike arccos of the trace this
    # keeps full precision for tiny angles.
    chord = np.linalg.norm(Ra - Rb) / (2.0 * np.sqrt(2.0))
    return float(np.degrees(2.0 * np.arcsin(min(chord, 1.0))))


def translation_error_mm(ta, tb) -> float:
    return float(np.linalg.norm(np.asarray(ta, dtype=float) - np.asarray(tb, dtype=float)))


def rot_x(deg: float) -> np.ndarray:
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def nearest_rotation(M) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) via SVD."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ D @ Vt


def rodrigues(w) -> np.ndarray:
    """Rotation matrix for the axis-angle vector ``w`` (radians)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    Wx = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
    if theta < 1e-12:
        return np.eye(3) + Wx
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * Wx + b * (Wx @ Wx)


def rigid_fit(src, dst) -> RigidPose:
    """Least-squares rigid alignment dst ~ R @ src + t (Kabsch/Umeyama, no scale)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    if np.linalg.det(Vt.T @ U.T) < 0:
        D[2, 2] = -1.0
    R = Vt.T @ D @ U.T
    R = nearest_rotation(R)
    return RigidPose(R, mu_d - R @ mu_s)
