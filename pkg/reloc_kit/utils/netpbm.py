"""PGM/PPM image IO through OpenCV.

OpenCV keeps colour images in BGR order; the arrays handed in and out of
this module are RGB.
"""

from pathlib import Path
from typing import Union

import cv2
import numpy as np

from reloc_kit.core.errors import ParseError

PathLike = Union[str, Path]


def _imread(path: PathLike) -> np.ndarray:
    try:
        image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    except cv2.error as exc:
        raise ParseError(path, 1, f"unreadable image: {exc}") from exc
    if image is None:
        raise ParseError(path, 1, "unreadable or truncated image")
    return image


def _imwrite(path: PathLike, image: np.ndarray) -> None:
    if not cv2.imwrite(str(path), image):
        raise OSError(f"could not write image {path}")


def read_pgm(path: PathLike) -> np.ndarray:
    """(H, W) uint8 or uint16 array."""
    image = _imread(path)
    if image.ndim != 2 or image.dtype not in (np.uint8, np.uint16):
        raise ParseError(path, 1, f"expected a single-channel 8/16-bit image, got {image.dtype} {image.shape}")
    return image


def read_ppm(path: PathLike) -> np.ndarray:
    """(H, W, 3) uint8 RGB array."""
    image = _imread(path)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ParseError(path, 1, "expected an 8-bit three-channel image")
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {image.shape}")
    if image.dtype not in (np.uint8, np.uint16):
        raise ValueError(f"unsupported PGM dtype {image.dtype}")
    _imwrite(path, np.ascontiguousarray(image))


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("PPM needs an (H, W, 3) uint8 array")
    _imwrite(path, cv2.cvtColor(np.ascontiguousarray(image), cv2.COLOR_RGB2BGR))


def heatmap_image(values: np.ndarray) -> np.ndarray:
    """Scores in [0, 1] as 8-bit grey levels, round(255·s)."""
    return np.round(255.0 * np.clip(values, 0.0, 1.0)).astype(np.uint8)
