from typing import List

from pydantic import BaseModel, Field


class AteReport(BaseModel):
    """Absolute translational error of a trajectory against ground truth.

    ``sigma_rmse`` is the standard deviation of the per-frame errors divided
    by the diagonal of the ground-truth bounding box.
    """

    rmse: float = Field(..., ge=0, description="Root mean square error (m)")
    sigma_rmse: float = Field(..., ge=0, description="stdev(errors) / trajectory extent")
    max_err: float = Field(..., ge=0, description="Largest per-frame error (m)")
    mean_err: float = Field(default=0.0, ge=0, description="Mean per-frame error (m)")
    extent: float = Field(default=0.0, ge=0, description="Ground-truth bounding-box diagonal (m)")
    aligned: bool = Field(default=True, description="Rigid alignment applied first")
    errors: List[float] = Field(default_factory=list, description="Per-frame errors (m)")
