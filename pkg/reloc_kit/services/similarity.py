"""Reprojection IoU between keyframes and the ground-truth similarity matrix.

A source pixel counts toward s(i, j) when its back-projected point, moved into
the target camera, projects inside the target image and (with occlusion on)
is not more than ``OCCLUSION_EPS`` behind the target's own z-buffer at that
pixel. The denominator is always the full image resolution.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence, Tuple

import numpy as np

from reloc_kit.core.errors import LengthMismatch, ResolutionMismatch
from reloc_kit.core.logging import get_logger
from reloc_kit.models.geometry import CameraIntrinsics, Pose
from reloc_kit.models.scene import DepthMap, Keyframe
from reloc_kit.models.similarity import SimilarityMatrix
from reloc_kit.services.geometry import backproject_depth, project_points, relative

logger = get_logger(__name__)

OCCLUSION_EPS = 0.01


def zbuffer_render(points: np.ndarray, resolution: Tuple[int, int]) -> DepthMap:
    """Nearest depth per pixel from (u, v, z) rows; uncovered pixels stay 0.

    ``resolution`` is (width, height). Points with z ≤ 0 or landing outside
    the image are ignored.
    """
    width, height = resolution
    buffer = np.full((height, width), np.inf)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.size:
        u, v, z = points[:, 0], points[:, 1], points[:, 2]
        keep = (z > 0) & (u >= 0) & (u < width) & (v >= 0) & (v < height)
        cols = np.floor(u[keep]).astype(np.int64)
        rows = np.floor(v[keep]).astype(np.int64)
        np.minimum.at(buffer, (rows, cols), z[keep])
    return DepthMap(np.where(np.isfinite(buffer), buffer, 0.0))


def _check_resolution(kf: Keyframe, k: CameraIntrinsics, role: str) -> None:
    if kf.depth.values.shape != k.shape:
        raise ResolutionMismatch(
            f"{role} keyframe {kf.id} is {kf.width}x{kf.height}, "
            f"intrinsics expect {k.width}x{k.height}"
        )


def _self_zbuffer(k: CameraIntrinsics, depth: np.ndarray) -> np.ndarray:
    points = backproject_depth(k, depth)
    u, v, z, in_view = project_points(k, points)
    return zbuffer_render(
        np.column_stack([u[in_view], v[in_view], z[in_view]]), (k.width, k.height)
    ).values


def _count_visible(
    source_points: np.ndarray,
    source_to_target: Pose,
    k: CameraIntrinsics,
    target_zbuffer: np.ndarray | None,
    occlusion_eps: float,
) -> int:
    if source_points.shape[0] == 0:
        return 0
    u, v, z, in_view = project_points(k, source_to_target.apply(source_points))
    if target_zbuffer is None:
        return int(np.count_nonzero(in_view))
    cols = np.floor(u[in_view]).astype(np.int64)
    rows = np.floor(v[in_view]).astype(np.int64)
    surface = target_zbuffer[rows, cols]
    hidden = (surface > 0) & (z[in_view] > surface + occlusion_eps)
    return int(np.count_nonzero(~hidden))


def reprojection_iou(
    source: Keyframe,
    target: Keyframe,
    pose_source: Pose,
    pose_target: Pose,
    k: CameraIntrinsics,
    occlusion: bool = True,
    occlusion_eps: float = OCCLUSION_EPS,
) -> float:
    """Fraction of the image resolution covered by visible reprojected source pixels."""
    _check_resolution(source, k, "source")
    _check_resolution(target, k, "target")
    points = backproject_depth(k, source.depth.values)
    zbuffer = _self_zbuffer(k, target.depth.values) if occlusion else None
    count = _count_visible(
        points, relative(pose_target, pose_source), k, zbuffer, occlusion_eps
    )
    return count / k.resolution


def build_similarity_matrix(
    keyframes: Sequence[Keyframe],
    poses: Sequence[Pose],
    k: CameraIntrinsics,
    occlusion: bool = True,
    threads: int = 1,
    occlusion_eps: float = OCCLUSION_EPS,
) -> SimilarityMatrix:
    """values[i, j] = reprojection_iou(i → j) over all n² ordered pairs."""
    if len(keyframes) != len(poses):
        raise LengthMismatch(
            f"{len(keyframes)} keyframes but {len(poses)} poses"
        )
    n = len(keyframes)
    if n == 0:
        raise LengthMismatch("at least one keyframe is required")

    for index, kf in enumerate(keyframes):
        if kf.depth.values.shape != k.shape:
            # (0, index) is the first row-major pair touching this keyframe
            raise ResolutionMismatch(
                f"keyframe {kf.id} is {kf.width}x{kf.height}, "
                f"intrinsics expect {k.width}x{k.height}",
                pair=(0, index),
            )

    points: List[np.ndarray] = [backproject_depth(k, kf.depth.values) for kf in keyframes]
    zbuffers: List[np.ndarray | None] = [
        _self_zbuffer(k, kf.depth.values) if occlusion else None for kf in keyframes
    ]
    pairs = [(i, j) for i in range(n) for j in range(n)]

    def score(pair: Tuple[int, int]) -> float:
        i, j = pair
        count = _count_visible(
            points[i], relative(poses[j], poses[i]), k, zbuffers[j], occlusion_eps
        )
        return count / k.resolution

    values = np.zeros((n, n))
    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        for (i, j), value in zip(pairs, pool.map(score, pairs)):
            values[i, j] = value

    matrix = SimilarityMatrix(values)
    logger.info(
        "Similarity matrix built",
        keyframes=n,
        occlusion=occlusion,
        symmetry_error=round(matrix.symmetry_error, 6),
    )
    return matrix
