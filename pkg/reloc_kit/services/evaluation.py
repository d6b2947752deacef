"""Trajectory error and similarity heatmap comparison."""

from typing import Tuple

import numpy as np

from reloc_kit.core.errors import DimMismatch, LengthMismatch, TimestampMismatch
from reloc_kit.core.logging import get_logger
from reloc_kit.models.evaluation import AteReport
from reloc_kit.models.pose_graph import Trajectory
from reloc_kit.models.similarity import SimilarityMatrix

logger = get_logger(__name__)

TIMESTAMP_TOL = 1e-6


def align_rigid(model: np.ndarray, data: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form R, t minimising Σ‖R·model_k + t − data_k‖² (no scale).

    Both inputs are N×3.
    """
    model_mean = model.mean(axis=0)
    data_mean = data.mean(axis=0)
    covariance = (data - data_mean).T @ (model - model_mean)
    u, _, vt = np.linalg.svd(covariance)
    correction = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        correction[2, 2] = -1.0
    rotation = u @ correction @ vt
    return rotation, data_mean - rotation @ model_mean


def evaluate_ate(
    estimated: Trajectory,
    ground_truth: Trajectory,
    align: bool = True,
    timestamp_tol: float = TIMESTAMP_TOL,
) -> AteReport:
    if len(estimated) != len(ground_truth):
        raise LengthMismatch(
            f"estimated trajectory has {len(estimated)} poses, ground truth {len(ground_truth)}"
        )
    if len(estimated) == 0:
        raise LengthMismatch("trajectories are empty")
    offsets = np.abs(estimated.timestamps - ground_truth.timestamps)
    if np.any(offsets > timestamp_tol):
        index = int(np.argmax(offsets > timestamp_tol))
        raise TimestampMismatch(
            f"timestamps differ at frame {index}: "
            f"{estimated.timestamps[index]!r} vs {ground_truth.timestamps[index]!r}"
        )

    est = estimated.positions
    gt = ground_truth.positions
    if align and len(est) > 1:
        rotation, translation = align_rigid(est, gt)
        est = est @ rotation.T + translation
    errors = np.linalg.norm(est - gt, axis=1)
    extent = float(np.linalg.norm(gt.max(axis=0) - gt.min(axis=0)))
    spread = float(np.std(errors))

    return AteReport(
        rmse=float(np.sqrt(np.mean(errors**2))),
        sigma_rmse=spread / extent if extent > 0 else 0.0,
        max_err=float(errors.max()),
        mean_err=float(errors.mean()),
        extent=extent,
        aligned=align,
        errors=errors.tolist(),
    )


def heatmap_error(
    pred: SimilarityMatrix, truth: SimilarityMatrix
) -> Tuple[np.ndarray, float]:
    """Elementwise |pred − truth| and its maximum."""
    if pred.values.shape != truth.values.shape:
        raise DimMismatch(
            f"predicted matrix is {pred.values.shape}, ground truth {truth.values.shape}"
        )
    error = np.abs(pred.values - truth.values)
    return error, float(error.max(initial=0.0))
