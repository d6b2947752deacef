"""Pose, twist and camera model value types.

Frame convention: ``T_a^b`` maps points from frame ``a`` into frame ``b``.
A stored keyframe ``Pose`` is camera-to-world (``T_cam^world``), the TUM
trajectory convention, so ``pose.apply(p_cam)`` yields world coordinates.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


def _frozen_array(values: object, shape: tuple[int, ...], name: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {array.shape}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: x' = rotation @ x + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "rotation", _frozen_array(self.rotation, (3, 3), "rotation")
        )
        object.__setattr__(
            self, "translation", _frozen_array(self.translation, (3,), "translation")
        )

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Pose":
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix[:3, :3], matrix[:3, 3])

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform a 3-vector or an (N, 3) array of points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        from reloc_kit.services.geometry import inverse

        return inverse(self)

    def __matmul__(self, other: "Pose") -> "Pose":
        from reloc_kit.services.geometry import compose

        return compose(self, other)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __repr__(self) -> str:
        return f"Pose(t={np.round(self.translation, 6).tolist()})"


@dataclass(frozen=True, eq=False)
class Twist:
    """se(3) coordinates: rho (translational, meters), phi (axis-angle, radians)."""

    rho: np.ndarray = field(default_factory=lambda: np.zeros(3))
    phi: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "rho", _frozen_array(self.rho, (3,), "rho"))
        object.__setattr__(self, "phi", _frozen_array(self.phi, (3,), "phi"))

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> "Twist":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (6,):
            raise ValueError(f"twist vector must have shape (6,), got {vector.shape}")
        return cls(vector[:3], vector[3:])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])

    @property
    def angle(self) -> float:
        return float(np.linalg.norm(self.phi))


class CameraIntrinsics(BaseModel):
    """Pinhole camera model."""

    model_config = ConfigDict(frozen=True)

    fx: float = Field(..., gt=0, description="Focal length along u (pixels)")
    fy: float = Field(..., gt=0, description="Focal length along v (pixels)")
    cx: float = Field(..., ge=0, description="Principal point u (pixels)")
    cy: float = Field(..., ge=0, description="Principal point v (pixels)")
    width: int = Field(..., gt=0, description="Image width (pixels)")
    height: int = Field(..., gt=0, description="Image height (pixels)")

    @model_validator(mode="after")
    def principal_point_inside(self) -> "CameraIntrinsics":
        if not self.cx < self.width:
            raise ValueError("cx must lie in [0, width)")
        if not self.cy < self.height:
            raise ValueError("cy must lie in [0, height)")
        return self

    @property
    def resolution(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape (rows, cols) of images taken with this camera."""
        return (self.height, self.width)

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


class PixelProjection(NamedTuple):
    """In-view projection result; ``None`` stands for out-of-view."""

    u: float
    v: float
    z: float
