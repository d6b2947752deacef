"""Subcommand handlers: run one stage and print its summary to stdout."""

from typing import Any, Dict

from rich.console import Console
from rich.table import Table

from reloc_kit.schemas.run import (
    EmbedConfig,
    EvalConfig,
    GenConfig,
    IouConfig,
    OptimizeConfig,
    PipelineConfig,
    QueryConfig,
    TrainEncoderConfig,
    TrainGnnConfig,
)
from reloc_kit.services import pipeline

console = Console()


def _format(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, dict):
        return ", ".join(f"{key}={_format(item)}" for key, item in value.items())
    return str(value)


def print_summary(title: str, summary: Dict[str, Any]) -> None:
    table = Table(title=title, show_header=False)
    table.add_column("key", style="cyan")
    table.add_column("value")
    for key, value in summary.items():
        table.add_row(key, _format(value))
    console.print(table)


def cmd_gen(config: GenConfig) -> int:
    print_summary("gen", pipeline.run_gen(config))
    return 0


def cmd_iou(config: IouConfig) -> int:
    print_summary("iou", pipeline.run_iou(config))
    return 0


def cmd_train_encoder(config: TrainEncoderConfig) -> int:
    print_summary("train-encoder", pipeline.run_train_encoder(config))
    return 0


def cmd_embed(config: EmbedConfig) -> int:
    print_summary("embed", pipeline.run_embed(config))
    return 0


def cmd_train_gnn(config: TrainGnnConfig) -> int:
    print_summary("train-gnn", pipeline.run_train_gnn(config))
    return 0


def cmd_query(config: QueryConfig) -> int:
    print_summary("query", pipeline.run_query(config))
    return 0


def cmd_optimize(config: OptimizeConfig) -> int:
    print_summary("optimize", pipeline.run_optimize(config))
    return 0


def cmd_eval(config: EvalConfig) -> int:
    print_summary("eval", pipeline.run_eval(config))
    return 0


def cmd_pipeline(config: PipelineConfig) -> int:
    """Every stage in order under one seed; writes ``report.json`` comparing drift and optimised ATE."""
    print_summary("pipeline", pipeline.run_pipeline(config))
    return 0
