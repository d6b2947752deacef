from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """N×N keyframe similarity scores in [0, 1]; row i is the source keyframe.

    Not required to be symmetric; see ``symmetry_error``.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"similarity matrix must be square, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("similarity matrix contains non-finite values")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("similarity entries must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.values)

    @property
    def symmetry_error(self) -> float:
        """max |s(i, j) − s(j, i)|."""
        if self.n == 0:
            return 0.0
        return float(np.max(np.abs(self.values - self.values.T)))

    def row(self, index: int) -> np.ndarray:
        return self.values[index]
