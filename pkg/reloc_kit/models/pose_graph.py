"""Pose-graph problem, optimizer settings and report types.

Edge convention: an edge (i, j) carries the measured relative transform
``Z_ij = T_i⁻¹ ∘ T_j`` (frame j expressed in frame i) where ``T_k`` is the
camera-to-world pose of keyframe k. Its information matrix is
``info_scale · I₆``.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from reloc_kit.core.errors import DanglingEdge, InvalidProblem, LengthMismatch
from reloc_kit.models.geometry import Pose


class EdgeKind(str, Enum):
    ODOMETRY = "odometry"
    LOOP = "loop"


@dataclass(frozen=True, eq=False)
class PoseGraphEdge:
    i: int
    j: int
    measured: Pose
    info_scale: float = 1.0
    kind: EdgeKind = EdgeKind.ODOMETRY


@dataclass(frozen=True, eq=False)
class PoseGraphProblem:
    poses: Tuple[Pose, ...]
    edges: Tuple[PoseGraphEdge, ...]
    anchor: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "edges", tuple(self.edges))

    def validate(self) -> None:
        """Raise when edges dangle, the anchor is out of range or weights are invalid."""
        n = len(self.poses)
        if n == 0:
            raise InvalidProblem("problem has no poses")
        if not self.edges:
            raise InvalidProblem("problem needs at least one edge")
        if not 0 <= self.anchor < n:
            raise InvalidProblem(f"anchor {self.anchor} outside [0, {n})")
        for edge in self.edges:
            if not (0 <= edge.i < n and 0 <= edge.j < n):
                raise DanglingEdge(f"edge ({edge.i}, {edge.j}) references a missing pose")
            if edge.i == edge.j:
                raise InvalidProblem(f"self-loop edge on pose {edge.i}")
            if not np.isfinite(edge.info_scale) or edge.info_scale < 0:
                raise InvalidProblem(
                    f"edge ({edge.i}, {edge.j}) has info_scale {edge.info_scale!r}"
                )

    def with_poses(self, poses: Sequence[Pose]) -> "PoseGraphProblem":
        return PoseGraphProblem(tuple(poses), self.edges, self.anchor)

    def loop_edges(self) -> List[PoseGraphEdge]:
        return [edge for edge in self.edges if edge.kind is EdgeKind.LOOP]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped camera-to-world poses."""

    timestamps: np.ndarray
    poses: Tuple[Pose, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        timestamps = np.array(self.timestamps, dtype=np.float64).reshape(-1)
        if timestamps.shape[0] != len(self.poses):
            raise LengthMismatch(
                f"{timestamps.shape[0]} timestamps but {len(self.poses)} poses"
            )
        timestamps.setflags(write=False)
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "poses", tuple(self.poses))

    @classmethod
    def from_poses(cls, poses: Sequence[Pose], interval: float = 0.1) -> "Trajectory":
        return cls(np.round(np.arange(len(poses)) * interval, 6), tuple(poses))

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.stack([pose.translation for pose in self.poses])


class TerminationReason(str, Enum):
    COST_CHANGE = "cost_change"
    GRADIENT = "gradient"
    MAX_ITERATIONS = "max_iterations"
    DAMPING_LIMIT = "damping_limit"


class OptimizerConfig(BaseModel):
    """Levenberg-Marquardt settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    max_iters: int = Field(default=100, ge=0, description="Iteration cap")
    damping: float = Field(default=1e-4, gt=0, description="Initial damping λ")
    tol: float = Field(default=1e-10, gt=0, description="Cost-change and gradient tolerance")
    damping_factor: float = Field(
        default=10.0, gt=1, description="λ multiplier on rejection, divisor on acceptance"
    )
    max_damping: float = Field(default=1e16, gt=0, description="Give up above this λ")
    jacobian_eps: float = Field(
        default=1e-6, gt=0, description="Central-difference twist step"
    )


class OptReport(BaseModel):
    iterations: int = Field(..., ge=0)
    accepted_steps: int = Field(default=0, ge=0)
    initial_cost: float
    final_cost: float
    costs: List[float] = Field(
        default_factory=list, description="Cost after every iteration, initial first"
    )
    termination: TerminationReason
    final_damping: float
