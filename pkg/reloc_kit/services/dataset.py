"""Dataset directory IO.

Layout::

    poses.txt            TUM trajectory, one line per keyframe
    intrinsics.txt       fx fy cx cy width height
    depth/000000.pgm     16-bit big-endian PGM, millimeters, 0 = invalid
    rgb/000000.ppm       binary PPM
"""

from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from reloc_kit.core.errors import (
    ArtifactMissing,
    DatasetError,
    IntrinsicsMismatch,
    LengthMismatch,
    MissingDepth,
)
from reloc_kit.core.logging import get_logger
from reloc_kit.models.geometry import CameraIntrinsics, Pose
from reloc_kit.models.pose_graph import Trajectory
from reloc_kit.models.scene import DepthMap, Keyframe
from reloc_kit.utils.formats import read_intrinsics, read_tum, write_intrinsics, write_tum
from reloc_kit.utils.netpbm import read_pgm, read_ppm, write_pgm, write_ppm

logger = get_logger(__name__)

PathLike = Union[str, Path]
MAX_DEPTH_MM = 65535


def depth_path(root: Path, index: int) -> Path:
    return root / "depth" / f"{index:06d}.pgm"


def rgb_path(root: Path, index: int) -> Path:
    return root / "rgb" / f"{index:06d}.ppm"


def save_dataset(
    path: PathLike,
    keyframes: Sequence[Keyframe],
    poses: Sequence[Pose],
    k: CameraIntrinsics,
) -> Path:
    """Write keyframes, their camera-to-world poses and the intrinsics."""
    root = Path(path)
    if len(keyframes) != len(poses):
        raise LengthMismatch(f"{len(keyframes)} keyframes but {len(poses)} poses")
    (root / "depth").mkdir(parents=True, exist_ok=True)
    (root / "rgb").mkdir(parents=True, exist_ok=True)

    for index, kf in enumerate(keyframes):
        if kf.depth.values.shape != k.shape:
            raise IntrinsicsMismatch(
                f"keyframe {kf.id} is {kf.width}x{kf.height}, "
                f"intrinsics say {k.width}x{k.height}"
            )
        millimeters = np.round(kf.depth.values * 1000.0)
        if millimeters.max(initial=0) > MAX_DEPTH_MM:
            raise DatasetError(f"keyframe {kf.id} has depth beyond 65.535 m")
        write_pgm(depth_path(root, index), millimeters.astype(np.uint16))
        write_ppm(rgb_path(root, index), kf.rgb)

    write_tum(
        root / "poses.txt",
        Trajectory(np.array([kf.timestamp for kf in keyframes]), tuple(poses)),
    )
    write_intrinsics(root / "intrinsics.txt", k)
    logger.info("Dataset saved", path=str(root), keyframes=len(keyframes))
    return root


def load_dataset(path: PathLike) -> Tuple[List[Keyframe], Trajectory, CameraIntrinsics]:
    root = Path(path)
    if not root.is_dir():
        raise ArtifactMissing(root, "dataset directory")
    for name in ("poses.txt", "intrinsics.txt"):
        if not (root / name).is_file():
            raise ArtifactMissing(root / name, name)

    trajectory = read_tum(root / "poses.txt")
    k = read_intrinsics(root / "intrinsics.txt")
    depth_files = sorted((root / "depth").glob("*.pgm")) if (root / "depth").is_dir() else []
    if len(depth_files) != len(trajectory):
        raise MissingDepth(
            f"{root}: {len(trajectory)} poses but {len(depth_files)} depth images"
        )

    keyframes = []
    for index, stamp in enumerate(trajectory.timestamps):
        d_path = depth_path(root, index)
        if not d_path.is_file():
            raise MissingDepth(f"missing depth image {d_path}")
        c_path = rgb_path(root, index)
        if not c_path.is_file():
            raise ArtifactMissing(c_path, "rgb image")
        depth = read_pgm(d_path).astype(np.float64) / 1000.0
        rgb = read_ppm(c_path)
        if depth.shape != k.shape or rgb.shape[:2] != k.shape:
            raise IntrinsicsMismatch(
                f"keyframe {index}: image size {depth.shape[1]}x{depth.shape[0]} "
                f"differs from intrinsics {k.width}x{k.height}"
            )
        keyframes.append(
            Keyframe(id=index, rgb=rgb, depth=DepthMap(depth), timestamp=float(stamp))
        )

    logger.info("Dataset loaded", path=str(root), keyframes=len(keyframes))
    return keyframes, trajectory, k
