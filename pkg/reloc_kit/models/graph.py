from dataclasses import dataclass
from enum import Enum
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

GNN_MAGIC = b"S3EG"
GNN_LAYERS = 3


def _readonly(values: object) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    array.setflags(write=False)
    return array


class Activation(str, Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


# relu, relu, then sigmoid on the output layer
LAYER_ACTIVATIONS = (Activation.RELU, Activation.RELU, Activation.SIGMOID)


@dataclass(frozen=True, eq=False)
class SageLayerParams:
    """out = act(h·W_self + mean_nbr(h)·W_nbr + bias)."""

    w_self: np.ndarray
    w_nbr: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        for name in ("w_self", "w_nbr", "bias"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        if self.w_self.ndim != 2 or self.w_self.shape != self.w_nbr.shape:
            raise ValueError("W_self and W_nbr must share a D_in×D_out shape")
        if self.bias.shape != (self.w_self.shape[1],):
            raise ValueError("bias length must equal D_out")

    @property
    def dim_in(self) -> int:
        return int(self.w_self.shape[0])

    @property
    def dim_out(self) -> int:
        return int(self.w_self.shape[1])

    @classmethod
    def zeros(cls, dim_in: int, dim_out: int) -> "SageLayerParams":
        return cls(np.zeros((dim_in, dim_out)), np.zeros((dim_in, dim_out)), np.zeros(dim_out))


@dataclass(frozen=True, eq=False)
class GnnParams:
    layers: Tuple[SageLayerParams, ...]

    def __post_init__(self) -> None:
        layers = tuple(self.layers)
        if len(layers) != GNN_LAYERS:
            raise ValueError(f"expected {GNN_LAYERS} layers, got {len(layers)}")
        for first, second in zip(layers, layers[1:]):
            if first.dim_out != second.dim_in:
                raise ValueError("layer dimensions do not chain")
        object.__setattr__(self, "layers", layers)

    @property
    def dims(self) -> List[int]:
        return [self.layers[0].dim_in] + [layer.dim_out for layer in self.layers]

    def arrays(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for layer in self.layers:
            out.extend([layer.w_self, layer.w_nbr, layer.bias])
        return out

    @staticmethod
    def shapes(dims: Sequence[int]) -> List[Tuple[int, ...]]:
        out: List[Tuple[int, ...]] = []
        for d_in, d_out in zip(dims, dims[1:]):
            out.extend([(d_in, d_out), (d_in, d_out), (d_out,)])
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "GnnParams":
        return cls(
            tuple(
                SageLayerParams(*arrays[index : index + 3])
                for index in range(0, len(arrays), 3)
            )
        )

    @classmethod
    def zeros(cls, dims: Sequence[int] = (16, 16, 16, 16)) -> "GnnParams":
        return cls(tuple(SageLayerParams.zeros(a, b) for a, b in zip(dims, dims[1:])))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass(frozen=True, eq=False)
class ReferenceGraph:
    """Node features after the sigmoid output layer, N×D_out."""

    node_features: np.ndarray

    def __post_init__(self) -> None:
        features = _readonly(self.node_features)
        if features.ndim != 2:
            raise ValueError(f"node features must be N×D, got {features.shape}")
        object.__setattr__(self, "node_features", features)

    @property
    def n(self) -> int:
        return int(self.node_features.shape[0])


class QueryMatch(NamedTuple):
    query_index: int
    reference_index: int
    score: float


@dataclass(frozen=True, eq=False)
class QueryResult:
    """U (Q×N) plus the thresholded per-row argmax matches, best first."""

    similarity: np.ndarray
    matches: Tuple[QueryMatch, ...]
    threshold: float
    query_offset: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "similarity", _readonly(self.similarity))
        object.__setattr__(self, "matches", tuple(self.matches))

    @property
    def best_reference(self) -> np.ndarray:
        """argmax over reference nodes for every query row, unthresholded."""
        return np.argmax(self.similarity, axis=1)


class GnnTrainingConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    steps: int = Field(default=500, ge=1, description="Full-batch gradient steps")
    learning_rate: float = Field(default=1e-3, gt=0, description="SGD step size")
    momentum: float = Field(default=0.9, ge=0, lt=1, description="SGD momentum")
    weight_decay: float = Field(default=0.0, ge=0, description="L2 weight decay")
    eta: float = Field(default=1e-3, gt=0, description="Inverse cross-entropy offset")
    window: int = Field(default=5, ge=1, description="Query sub-graph length W")
    hidden: int = Field(default=32, ge=1, description="Width of the hidden and output layers")
    warm_start: bool = Field(
        default=True, description="Sign-split identity init when hidden is twice the input width"
    )
    seed: int = Field(default=0, description="Initialisation seed")
    log_every: int = Field(default=100, ge=1, description="Steps between progress logs")


class GnnTrainingHistory(BaseModel):
    initial_loss: float
    losses: List[float] = Field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else self.initial_loss
