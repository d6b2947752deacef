"""Binary parameter files.

Layout: 4-byte magic, 1 version byte, uint32 LE dimension count, that many
uint32 LE dimensions, then the parameters as float32 LE in declared order.
"""

from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from reloc_kit.core.errors import ParamsFormatError

PathLike = Union[str, Path]

FORMAT_VERSION = 1
_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")


def write_params(
    path: PathLike, magic: bytes, dims: Sequence[int], arrays: Sequence[np.ndarray]
) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    header = (
        magic
        + bytes([FORMAT_VERSION])
        + np.array([len(dims), *dims], dtype=_U32).tobytes()
    )
    body = b"".join(np.asarray(a, dtype=np.float64).astype(_F32).tobytes() for a in arrays)
    Path(path).write_bytes(header + body)


def read_params(path: PathLike, magic: bytes) -> Tuple[List[int], np.ndarray]:
    """Return (dims, flat float64 parameter vector)."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != magic:
        raise ParamsFormatError(f"{path}: bad magic {data[:4]!r}, expected {magic!r}")
    if len(data) < 9 or data[4] != FORMAT_VERSION:
        raise ParamsFormatError(f"{path}: unsupported version")
    count = int(np.frombuffer(data, dtype=_U32, count=1, offset=5)[0])
    offset = 9 + 4 * count
    if len(data) < offset:
        raise ParamsFormatError(f"{path}: truncated header")
    dims = np.frombuffer(data, dtype=_U32, count=count, offset=9).astype(int).tolist()
    body = data[offset:]
    if len(body) % 4:
        raise ParamsFormatError(f"{path}: body is not a whole number of float32 values")
    values = np.frombuffer(body, dtype=_F32).astype(np.float64)
    return dims, values


def split_flat(values: np.ndarray, shapes: Sequence[Tuple[int, ...]], path: PathLike) -> List[np.ndarray]:
    """Cut a flat vector into arrays of the given shapes, in order."""
    expected = sum(int(np.prod(shape)) for shape in shapes)
    if values.size != expected:
        raise ParamsFormatError(
            f"{path}: expected {expected} parameters, found {values.size}"
        )
    arrays, offset = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(values[offset : offset + size].reshape(shape).copy())
        offset += size
    return arrays
