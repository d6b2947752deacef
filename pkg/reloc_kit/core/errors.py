"""Exception hierarchy.

Each family carries the process exit code the CLI reports for it:
1 for IO/parse failures, 2 for validation failures, 3 for numeric failures.
"""

from pathlib import Path
from typing import Optional, Tuple, Union


class RelocError(Exception):
    """Root of every error raised by reloc_kit."""

    exit_code: int = 1

    def __init__(self, message: str, *, stage: Optional[str] = None) -> None:
        super().__init__(message)
        self.message = message
        self.stage = stage


# IO / parse family -----------------------------------------------------------


class DatasetError(RelocError):
    exit_code = 1


class ParseError(DatasetError):
    def __init__(self, path: Union[str, Path], line: int, reason: str) -> None:
        super().__init__(f"{path}:{line}: {reason}")
        self.path = Path(path)
        self.line = line
        self.reason = reason


class MissingDepth(DatasetError):
    pass


class IntrinsicsMismatch(DatasetError):
    pass


class ArtifactMissing(DatasetError):
    def __init__(self, path: Union[str, Path], what: str = "artifact") -> None:
        super().__init__(f"{what} not found: {path}")
        self.path = Path(path)


class ParamsFormatError(DatasetError):
    pass


# Validation family -------------------------------------------------------------


class ValidationFailure(RelocError):
    exit_code = 2


class InvalidSettings(ValidationFailure):
    pass


class InvalidSpec(ValidationFailure):
    pass


class ResolutionMismatch(ValidationFailure):
    def __init__(self, message: str, pair: Optional[Tuple[int, int]] = None) -> None:
        if pair is not None:
            message = f"{message} (pair {pair[0]} -> {pair[1]})"
        super().__init__(message)
        self.pair = pair


class MarginViolation(ValidationFailure):
    pass


class NoSeedFeatures(ValidationFailure):
    pass


class EmptyPatchSet(ValidationFailure):
    pass


class DanglingEdge(ValidationFailure):
    pass


class DimMismatch(ValidationFailure):
    pass


class EmptyWindow(ValidationFailure):
    pass


class NonPositiveEta(ValidationFailure):
    pass


class NonPositiveDepth(ValidationFailure):
    pass


class IndexOutOfRange(ValidationFailure):
    pass


class LengthMismatch(ValidationFailure):
    pass


class TimestampMismatch(ValidationFailure):
    pass


class InvalidProblem(ValidationFailure):
    pass


# Numeric family ----------------------------------------------------------------


class NumericFailure(RelocError):
    exit_code = 3


class AngleNearPi(NumericFailure):
    pass


class ZeroNormEmbedding(NumericFailure):
    pass


class NonFiniteLoss(NumericFailure):
    def __init__(self, step: int, loss: float) -> None:
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class NonFiniteCost(NumericFailure):
    pass


class SingularNormalEquations(NumericFailure):
    pass
