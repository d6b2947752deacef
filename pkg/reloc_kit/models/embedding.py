from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

ENCODER_MAGIC = b"S3EP"


def _readonly(values: object) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class EmbeddingCode:
    """D-dimensional keyframe descriptor."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = _readonly(self.values)
        if values.ndim != 1 or values.size == 0:
            raise ValueError(f"embedding code must be a non-empty vector, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding code contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True, eq=False)
class EncoderParams:
    """Per-patch MLP: input → hidden (ReLU) → hidden (ReLU) → embedding.

    The input row of a patch is its bytes scaled to [-0.5, 0.5] followed by the
    patch centre normalised by the image size and shifted by -0.5, so
    ``input_dim = scale²·3 + 2``.
    """

    scale: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self) -> None:
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        hidden = self.b1.size
        if self.w1.shape != (input_dim(self.scale), hidden):
            raise ValueError(f"w1 must be {(input_dim(self.scale), hidden)}, got {self.w1.shape}")
        if self.w2.shape != (hidden, hidden) or self.b2.shape != (hidden,):
            raise ValueError("hidden layer shapes do not chain")
        if self.w3.shape != (hidden, self.b3.size):
            raise ValueError("output layer shapes do not chain")

    @property
    def hidden(self) -> int:
        return int(self.b1.size)

    @property
    def dim(self) -> int:
        return int(self.b3.size)

    def arrays(self) -> List[np.ndarray]:
        """Parameter arrays in file/declared order."""
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    @classmethod
    def from_arrays(cls, scale: int, arrays: Sequence[np.ndarray]) -> "EncoderParams":
        w1, b1, w2, b2, w3, b3 = arrays
        return cls(scale, w1, b1, w2, b2, w3, b3)

    @staticmethod
    def shapes(scale: int, hidden: int, dim: int) -> List[Tuple[int, ...]]:
        return [
            (input_dim(scale), hidden),
            (hidden,),
            (hidden, hidden),
            (hidden,),
            (hidden, dim),
            (dim,),
        ]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def input_dim(scale: int) -> int:
    return scale * scale * 3 + 2


@dataclass(frozen=True, eq=False)
class EmbeddingGraph:
    """Embedding pose graph: node codes plus (source, target) edges."""

    node_embeddings: np.ndarray
    edges: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        nodes = _readonly(self.node_embeddings)
        if nodes.ndim != 2:
            raise ValueError(f"node embeddings must be N×D, got {nodes.shape}")
        object.__setattr__(self, "node_embeddings", nodes)
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))

    @property
    def n(self) -> int:
        return int(self.node_embeddings.shape[0])

    @property
    def dim(self) -> int:
        return int(self.node_embeddings.shape[1])

    @property
    def edge_embeddings(self) -> np.ndarray:
        """E×2D, row k = [node_i ‖ node_j] for edge k = (i, j)."""
        if not self.edges:
            return np.zeros((0, 2 * self.dim))
        sources = [i for i, _ in self.edges]
        targets = [j for _, j in self.edges]
        return np.hstack([self.node_embeddings[sources], self.node_embeddings[targets]])

    def adjacency(self) -> np.ndarray:
        """Symmetric 0/1 matrix of the undirected edges, no self-loops."""
        adj = np.zeros((self.n, self.n))
        for i, j in self.edges:
            if i != j:
                adj[i, j] = adj[j, i] = 1.0
        return adj


class EncoderTrainingConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(default=200, ge=1, description="Passes over the pair set")
    learning_rate: float = Field(default=1e-3, gt=0, description="SGD step size")
    momentum: float = Field(default=0.95, ge=0, lt=1, description="SGD momentum")
    weight_decay: float = Field(default=1e-5, ge=0, description="L2 weight decay")
    batch_size: int = Field(default=512, ge=1, description="Pairs per step")
    hidden: int = Field(default=32, ge=1, description="Hidden width H")
    dim: int = Field(default=16, ge=1, description="Embedding dimension D")
    steepness: float = Field(default=10.0, gt=0, description="Shrinkage loss a")
    threshold: float = Field(default=0.2, description="Shrinkage loss c")
    full_pairs_limit: int = Field(
        default=64, ge=1, description="Use all n² pairs up to this many keyframes"
    )
    max_pairs: int = Field(default=4096, ge=1, description="Sampled pairs per epoch cap")
    seed: int = Field(default=0, description="Initialisation and shuffling seed")
    log_every: int = Field(default=50, ge=1, description="Epochs between progress logs")


class TrainingHistory(BaseModel):
    initial_loss: float = Field(..., description="Mean loss over all pairs before training")
    epoch_losses: List[float] = Field(default_factory=list)
    steps: int = Field(default=0, ge=0)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss
