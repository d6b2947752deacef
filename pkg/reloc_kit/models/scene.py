from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from reloc_kit.models.geometry import CameraIntrinsics, Pose

FEATURE_BUDGET = 128
PATCH_SCALES = (16, 32, 64)

PixelCoord = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Row-major depth in meters; 0 marks an invalid pixel."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"depth map must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("depth map contains non-finite values")
        if np.any(values < 0):
            raise ValueError("depth map contains negative values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def empty(cls, width: int, height: int) -> "DepthMap":
        return cls(np.zeros((height, width)))

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.values > 0))


@dataclass(frozen=True, eq=False)
class Patch:
    """Axis-aligned scale×scale RGB crop whose centre pixel is (u, v)."""

    u: int
    v: int
    scale: int
    data: np.ndarray

    @property
    def coords(self) -> PixelCoord:
        return (self.u, self.v)

    def sort_key(self) -> tuple[int, int, int, bytes]:
        return (self.v, self.u, self.scale, self.data.tobytes())


@dataclass(frozen=True, eq=False)
class Keyframe:
    id: int
    rgb: np.ndarray
    depth: DepthMap
    timestamp: float = 0.0
    features: Tuple[PixelCoord, ...] = ()
    patches: Tuple[Patch, ...] = ()

    def __post_init__(self) -> None:
        rgb = np.asarray(self.rgb)
        if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
            raise ValueError("rgb must be an (H, W, 3) uint8 array")
        if rgb.shape[:2] != self.depth.values.shape:
            raise ValueError("rgb and depth resolutions differ")
        rgb = rgb.copy()
        rgb.setflags(write=False)
        object.__setattr__(self, "rgb", rgb)

    @property
    def width(self) -> int:
        return self.depth.width

    @property
    def height(self) -> int:
        return self.depth.height

    def with_features(self, features: List[PixelCoord]) -> "Keyframe":
        return replace(self, features=tuple((int(u), int(v)) for u, v in features))

    def with_patches(self, patches: List[Patch]) -> "Keyframe":
        return replace(self, patches=tuple(patches))


class TrajectoryKind(str, Enum):
    """Camera path families the synthetic generator supports."""

    CORRIDOR = "corridor"
    CIRCLE = "circle"


class TextureKind(str, Enum):
    CHECKER = "checker"
    NOISE = "noise"


class SceneSpec(BaseModel):
    """Parameters of a synthetic room scene and its keyframe trajectory."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    trajectory: TrajectoryKind = Field(
        default=TrajectoryKind.CORRIDOR, description="Camera path family"
    )
    room_length: float = Field(default=10.0, description="Room extent along x (m)")
    room_width: float = Field(default=4.0, description="Room extent along y (m)")
    room_height: float = Field(default=2.5, description="Room extent along z (m)")
    loops: int = Field(default=2, ge=1, description="Number of passes/loops")
    keyframes_per_loop: int = Field(default=20, ge=1, description="Keyframes per loop")
    image_width: int = Field(default=64, gt=0, description="Image width (pixels)")
    image_height: int = Field(default=48, gt=0, description="Image height (pixels)")
    horizontal_fov_deg: float = Field(
        default=60.0, gt=0, lt=170, description="Horizontal field of view (degrees)"
    )
    camera_height: float = Field(default=1.25, description="Camera height (m)")
    wall_clearance: float = Field(
        default=1.0, description="Distance kept from the end walls (m)"
    )
    jitter_translation: float = Field(
        default=0.02, ge=0, description="Per-keyframe position jitter (m)"
    )
    jitter_rotation: float = Field(
        default=0.01, ge=0, description="Per-keyframe yaw jitter (rad)"
    )
    texture: TextureKind = Field(default=TextureKind.NOISE, description="Wall texture")
    checker_size: float = Field(default=0.25, gt=0, description="Texture cell size (m)")
    depth_hole_probability: float = Field(
        default=0.0, ge=0, lt=1, description="Probability a depth pixel is invalid"
    )
    frame_interval: float = Field(
        default=0.1, gt=0, description="Seconds between keyframe timestamps"
    )

    @model_validator(mode="after")
    def positive_dimensions(self) -> "SceneSpec":
        for name in ("room_length", "room_width", "room_height"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.camera_height < self.room_height:
            raise ValueError("camera_height must lie inside the room")
        return self

    @property
    def keyframe_count(self) -> int:
        return self.loops * self.keyframes_per_loop

    def intrinsics(self) -> CameraIntrinsics:
        fx = 0.5 * self.image_width / np.tan(np.deg2rad(self.horizontal_fov_deg) / 2)
        return CameraIntrinsics(
            fx=float(fx),
            fy=float(fx),
            cx=self.image_width / 2,
            cy=self.image_height / 2,
            width=self.image_width,
            height=self.image_height,
        )


@dataclass(frozen=True, eq=False)
class Quad:
    """Planar rectangle: origin + s·edge_u + t·edge_v for s, t ∈ [0, 1]."""

    origin: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    base_color: Tuple[int, int, int]
    shade: float = 1.0

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    spec: SceneSpec
    seed: int
    intrinsics: CameraIntrinsics
    geometry: Tuple[Quad, ...]
    trajectory: Tuple[Pose, ...]
    keyframes: Tuple[Keyframe, ...] = field(default_factory=tuple)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([kf.timestamp for kf in self.keyframes])
