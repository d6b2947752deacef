"""Per-subcommand run configurations, validated before any stage runs."""

from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from reloc_kit.models.scene import FEATURE_BUDGET, PATCH_SCALES


class RunConfig(BaseModel):
    """Fields shared by every stage."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    out: Path = Field(..., description="Output directory; nothing is written outside it")
    threads: Optional[int] = Field(
        None, ge=1, description="Worker cap; falls back to RELOC_KIT_THREADS"
    )


class GenConfig(RunConfig):
    spec: Optional[Path] = Field(None, description="Scene spec JSON; defaults apply when absent")
    seed: int = Field(default=1, description="Scene seed")


class IouConfig(RunConfig):
    dataset: Path = Field(..., description="Dataset directory")
    occlusion: bool = Field(default=True, description="Discard z-buffer-hidden pixels")
    heatmap: bool = Field(default=True, description="Also write an 8-bit PGM heatmap")


class FeatureOptions(BaseModel):
    """Feature sampling and patch options shared by the encoder stages."""

    seed: int = Field(default=1, description="Sampling and training seed")
    budget: int = Field(default=FEATURE_BUDGET, ge=1, description="Features per keyframe")
    scale: int = Field(default=PATCH_SCALES[0], description="Patch size in pixels")

    @field_validator("scale")
    @classmethod
    def validate_scale(cls, v: int) -> int:
        if v not in PATCH_SCALES:
            raise ValueError(f"scale must be one of {PATCH_SCALES}")
        return v


class TrainEncoderConfig(RunConfig, FeatureOptions):
    dataset: Path = Field(..., description="Dataset directory")
    similarity: Path = Field(..., description="Ground-truth similarity CSV")
    dim: int = Field(default=16, ge=1, description="Embedding dimension D")
    hidden: int = Field(default=32, ge=1, description="Hidden width H")
    epochs: int = Field(default=200, ge=1, description="Training epochs")
    learning_rate: float = Field(default=1e-3, gt=0, description="Learning rate")
    momentum: float = Field(default=0.95, ge=0, lt=1, description="Momentum")
    weight_decay: float = Field(default=1e-5, ge=0, description="Weight decay")
    batch_size: int = Field(default=512, ge=1, description="Pairs per step")


class EmbedConfig(RunConfig, FeatureOptions):
    dataset: Path = Field(..., description="Dataset directory")
    encoder: Path = Field(..., description="Encoder parameter file")


class GraphOptions(BaseModel):
    reference_frames: Optional[int] = Field(
        None, ge=1, description="Keyframes in the reference loop; defaults to n // 2"
    )
    window: int = Field(default=5, ge=1, description="Query sub-graph length W")
    eta: float = Field(default=1e-3, gt=0, description="Inverse cross-entropy offset")


class TrainGnnConfig(RunConfig, GraphOptions):
    embeddings: Path = Field(..., description="Embedding CSV")
    similarity: Path = Field(..., description="Ground-truth similarity CSV")
    steps: int = Field(default=500, ge=1, description="Gradient steps")
    learning_rate: float = Field(default=1e-3, gt=0, description="Learning rate")
    momentum: float = Field(default=0.9, ge=0, lt=1, description="Momentum")
    seed: int = Field(default=1, description="Initialisation seed")


class QueryConfig(RunConfig, GraphOptions):
    embeddings: Path = Field(..., description="Embedding CSV")
    gnn: Path = Field(..., description="GNN parameter file")
    threshold: Optional[float] = Field(None, gt=0, description="Absolute score threshold")
    percentile: float = Field(
        default=90.0, ge=0, le=100, description="Percentile threshold used without --threshold"
    )


class OptimizeConfig(RunConfig):
    dataset: Optional[Path] = Field(None, description="Dataset whose poses measure loop edges")
    matches: Optional[Path] = Field(None, description="Loop-closure matches CSV")
    embeddings: Optional[Path] = Field(
        None, description="Embedding CSV; loop edges then use (1+cos)/2 as information"
    )
    problem: Optional[Path] = Field(None, description="g2o problem to optimise instead")
    seed: int = Field(default=1, description="Odometry noise seed")
    sigma_t: float = Field(default=0.02, ge=0, description="Odometry translation noise (m)")
    sigma_r: float = Field(default=0.01, ge=0, description="Odometry rotation noise (rad)")
    max_iters: int = Field(default=100, ge=0, description="LM iteration cap")
    tol: float = Field(default=1e-10, gt=0, description="Convergence tolerance")

    @model_validator(mode="after")
    def one_source(self) -> "OptimizeConfig":
        if self.problem is None and (self.dataset is None or self.matches is None):
            raise ValueError("give either --problem or both --dataset and --matches")
        return self


class EvalConfig(RunConfig):
    estimated: Path = Field(..., description="Estimated TUM trajectory")
    ground_truth: Path = Field(..., description="Ground-truth TUM trajectory")
    align: bool = Field(default=True, description="Rigidly align before measuring")
    predicted: Optional[Path] = Field(None, description="Predicted similarity CSV")
    truth: Optional[Path] = Field(None, description="Ground-truth similarity CSV")

    @model_validator(mode="after")
    def heatmap_pair(self) -> "EvalConfig":
        if (self.predicted is None) != (self.truth is None):
            raise ValueError("--predicted and --truth go together")
        return self


class PipelineConfig(RunConfig, GraphOptions):
    spec: Optional[Path] = Field(None, description="Scene spec JSON")
    seed: int = Field(default=1, description="Seed for every stage")
    scale: int = Field(default=PATCH_SCALES[0], description="Patch size in pixels")
    epochs: int = Field(default=100, ge=1, description="Encoder epochs")
    gnn_steps: int = Field(default=300, ge=1, description="GNN gradient steps")
    sigma_t: float = Field(default=0.02, ge=0, description="Odometry translation noise (m)")
    sigma_r: float = Field(default=0.01, ge=0, description="Odometry rotation noise (rad)")

    @field_validator("scale")
    @classmethod
    def validate_scale(cls, v: int) -> int:
        if v not in PATCH_SCALES:
            raise ValueError(f"scale must be one of {PATCH_SCALES}")
        return v
