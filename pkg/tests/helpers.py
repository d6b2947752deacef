"""Builders and numeric checks shared by several test modules."""

from itertools import combinations
from typing import List

import numpy as np

from reloc_kit.models.geometry import CameraIntrinsics, Pose, Twist
from reloc_kit.models.scene import DepthMap, Keyframe
from reloc_kit.services.geometry import se3_exp


def random_pose(rng: np.random.Generator, translation: float = 0.3, rotation: float = 0.2) -> Pose:
    twist = np.concatenate(
        [rng.uniform(-translation, translation, 3), rng.uniform(-rotation, rotation, 3)]
    )
    return se3_exp(Twist.from_vector(twist))


def random_keyframe(
    rng: np.random.Generator,
    k: CameraIntrinsics,
    keyframe_id: int = 0,
    hole_fraction: float = 0.1,
) -> Keyframe:
    depth = rng.uniform(1.0, 3.0, size=k.shape)
    depth[rng.random(k.shape) < hole_fraction] = 0.0
    rgb = rng.integers(0, 256, size=k.shape + (3,), dtype=np.uint8)
    return Keyframe(id=keyframe_id, rgb=rgb, depth=DepthMap(depth))


def binary_codes(count: int, dim: int = 16, ones: int = 4) -> np.ndarray:
    """``count`` distinct binary codes with exactly ``ones`` set bits."""
    codes = []
    for positions in combinations(range(dim), ones):
        code = np.zeros(dim)
        code[list(positions)] = 1.0
        codes.append(code)
        if len(codes) == count:
            break
    return np.vstack(codes)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


def sample_indices(rng: np.random.Generator, shape: tuple, count: int) -> List[tuple]:
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(count, size), replace=False)
    return [np.unravel_index(int(index), shape) for index in flat]
