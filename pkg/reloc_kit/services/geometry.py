"""SE(3) algebra, pinhole projection and back-projection.

All functions are pure; inputs are never mutated.
"""

from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from reloc_kit.core.errors import AngleNearPi, NonPositiveDepth
from reloc_kit.models.geometry import CameraIntrinsics, PixelProjection, Pose, Twist

Z_MIN = 1e-4
ANGLE_NEAR_PI_TOL = 1e-6
ORTHONORMAL_DRIFT_TOL = 1e-12
_SMALL_ANGLE = 1e-4


def hat(vector: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that hat(a) @ b == cross(a, b)."""
    x, y, z = np.asarray(vector, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(matrix: np.ndarray) -> np.ndarray:
    return np.array([matrix[2, 1], matrix[0, 2], matrix[1, 0]])


def orthonormal_drift(rotation: np.ndarray) -> float:
    return float(np.max(np.abs(rotation.T @ rotation - np.eye(3))))


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(rotation)
    result = u @ vt
    if np.linalg.det(result) < 0:
        u[:, -1] *= -1
        result = u @ vt
    return result


def compose(a: Pose, b: Pose) -> Pose:
    """a ∘ b: applies b first, then a."""
    rotation = a.rotation @ b.rotation
    if orthonormal_drift(rotation) > ORTHONORMAL_DRIFT_TOL:
        rotation = orthonormalize(rotation)
    return Pose(rotation, a.rotation @ b.translation + a.translation)


def inverse(pose: Pose) -> Pose:
    rotation_t = pose.rotation.T
    return Pose(rotation_t, -rotation_t @ pose.translation)


def relative(pose_i: Pose, pose_j: Pose) -> Pose:
    """pose_i⁻¹ ∘ pose_j: maps frame j coordinates into frame i."""
    return compose(inverse(pose_i), pose_j)


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _exp_coefficients(theta: float) -> tuple[float, float, float]:
    """sin θ/θ, (1 − cos θ)/θ², (θ − sin θ)/θ³ with series near zero."""
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        return (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    return (
        np.sin(theta) / theta,
        (1.0 - np.cos(theta)) / (theta * theta),
        (theta - np.sin(theta)) / (theta**3),
    )


def so3_exp(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    a, b, _ = _exp_coefficients(float(np.linalg.norm(phi)))
    k = hat(phi)
    return np.eye(3) + a * k + b * (k @ k)


def se3_exp(twist: Twist) -> Pose:
    theta = float(np.linalg.norm(twist.phi))
    a, b, c = _exp_coefficients(theta)
    k = hat(twist.phi)
    k2 = k @ k
    rotation = np.eye(3) + a * k + b * k2
    v = np.eye(3) + b * k + c * k2
    return Pose(rotation, v @ twist.rho)


def rotation_angle(rotation: np.ndarray) -> float:
    axis_sin = 0.5 * vee(rotation - rotation.T)
    cos_theta = 0.5 * (np.trace(rotation) - 1.0)
    return float(np.arctan2(np.linalg.norm(axis_sin), cos_theta))


def so3_log(rotation: np.ndarray) -> np.ndarray:
    """Principal-branch axis-angle vector; raises AngleNearPi near θ = π."""
    axis_sin = 0.5 * vee(rotation - rotation.T)
    sin_theta = float(np.linalg.norm(axis_sin))
    cos_theta = 0.5 * (float(np.trace(rotation)) - 1.0)
    theta = float(np.arctan2(sin_theta, cos_theta))
    if np.pi - theta < ANGLE_NEAR_PI_TOL:
        raise AngleNearPi(f"rotation angle {theta!r} is within 1e-6 of pi")
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        return axis_sin * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
    return axis_sin * (theta / sin_theta)


def se3_log(pose: Pose) -> Twist:
    phi = so3_log(pose.rotation)
    theta = float(np.linalg.norm(phi))
    k = hat(phi)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        half = 0.5 * theta
        d = (1.0 - half / np.tan(half)) / (theta * theta)
    v_inv = np.eye(3) - 0.5 * k + d * (k @ k)
    return Twist(v_inv @ pose.translation, phi)


def project(k: CameraIntrinsics, point_cam: np.ndarray) -> Optional[PixelProjection]:
    """Pixel coordinates and depth of a camera-frame point, or None when out of view.

    A point is in view iff z > Z_MIN, floor(u) ∈ [0, width−1] and
    floor(v) ∈ [0, height−1].
    """
    x, y, z = (float(c) for c in point_cam)
    if not z > Z_MIN:
        return None
    u = k.fx * x / z + k.cx
    v = k.fy * y / z + k.cy
    if not (0.0 <= u < k.width and 0.0 <= v < k.height):
        return None
    return PixelProjection(u, v, z)


def project_points(
    k: CameraIntrinsics, points_cam: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised project(): returns (u, v, z, in_view) over an (N, 3) array."""
    points_cam = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
    z = points_cam[:, 2]
    in_front = z > Z_MIN
    safe_z = np.where(in_front, z, 1.0)
    u = k.fx * points_cam[:, 0] / safe_z + k.cx
    v = k.fy * points_cam[:, 1] / safe_z + k.cy
    in_view = in_front & (u >= 0.0) & (u < k.width) & (v >= 0.0) & (v < k.height)
    return u, v, z, in_view


def backproject(k: CameraIntrinsics, u: float, v: float, z: float) -> np.ndarray:
    if not z > 0:
        raise NonPositiveDepth(f"depth must be positive, got {z!r}")
    return np.array([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z])


def backproject_depth(k: CameraIntrinsics, depth: np.ndarray) -> np.ndarray:
    """Camera-frame points for every valid pixel, sampled at pixel centres.

    Rows follow row-major pixel order; invalid (0) depth pixels are skipped.
    """
    rows, cols = np.nonzero(depth > 0)
    z = depth[rows, cols]
    u = cols + 0.5
    v = rows + 0.5
    return np.column_stack([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z])


def quaternion_from_rotation(rotation: np.ndarray) -> np.ndarray:
    """Unit quaternion in (x, y, z, w) order with w ≥ 0."""
    quat = Rotation.from_matrix(rotation).as_quat()
    if quat[3] < 0:
        quat = -quat
    return quat


def rotation_from_quaternion(quat: np.ndarray) -> np.ndarray:
    rotation = Rotation.from_quat(np.asarray(quat, dtype=np.float64)).as_matrix()
    if orthonormal_drift(rotation) > ORTHONORMAL_DRIFT_TOL:
        rotation = orthonormalize(rotation)
    return rotation
