"""``reloc-kit`` entry point: argument parsing and the exception-to-exit-code mapping."""

import argparse
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Type

from pydantic import ValidationError
from rich.console import Console

from reloc_kit import __version__
from reloc_kit.cli import commands
from reloc_kit.core.errors import RelocError
from reloc_kit.core.logging import log_error, setup_logging
from reloc_kit.schemas.run import (
    EmbedConfig,
    EvalConfig,
    GenConfig,
    IouConfig,
    OptimizeConfig,
    PipelineConfig,
    QueryConfig,
    RunConfig,
    TrainEncoderConfig,
    TrainGnnConfig,
)

stderr = Console(stderr=True, highlight=False)

# argparse bookkeeping, never forwarded to a RunConfig
_INTERNAL = {"command", "handler", "config_class", "log_level"}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", type=Path, required=True, help="Output directory")
    parser.add_argument(
        "--threads", type=int, help="Worker cap (default: RELOC_KIT_THREADS or 1)"
    )


def _add_features(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="Feature sampling and training seed")
    parser.add_argument("--budget", type=int, help="Features per keyframe")
    parser.add_argument("--scale", type=int, help="Patch size: 16, 32 or 64")


def _add_graph(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--reference-frames", type=int, help="Keyframes in the reference loop (default: n // 2)"
    )
    parser.add_argument("--window", type=int, help="Query sub-graph length")
    parser.add_argument("--eta", type=float, help="Inverse cross-entropy offset")


def _subcommand(
    subparsers: Any,
    name: str,
    help_text: str,
    handler: Callable[[Any], int],
    config_class: Type[RunConfig],
) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(name, help=help_text, description=help_text)
    parser.set_defaults(command=name, handler=handler, config_class=config_class)
    _add_common(parser)
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reloc-kit",
        description="Camera relocalization pipeline over synthetic RGB-D scenes.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", help="Override LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    gen = _subcommand(subparsers, "gen", "Render a synthetic keyframe dataset", commands.cmd_gen, GenConfig)
    gen.add_argument("--spec", type=Path, help="Scene spec JSON")
    gen.add_argument("--seed", type=int, help="Scene seed")

    iou = _subcommand(
        subparsers, "iou", "Ground-truth reprojection-IoU similarity matrix", commands.cmd_iou, IouConfig
    )
    iou.add_argument("--dataset", type=Path, required=True, help="Dataset directory")
    iou.add_argument("--occlusion", action=argparse.BooleanOptionalAction, help="Z-buffer occlusion test")
    iou.add_argument("--heatmap", action=argparse.BooleanOptionalAction, help="Write similarity.pgm")

    train_encoder = _subcommand(
        subparsers,
        "train-encoder",
        "Train the patch encoder against the similarity matrix",
        commands.cmd_train_encoder,
        TrainEncoderConfig,
    )
    train_encoder.add_argument("--dataset", type=Path, required=True, help="Dataset directory")
    train_encoder.add_argument("--similarity", type=Path, required=True, help="similarity.csv")
    _add_features(train_encoder)
    train_encoder.add_argument("--dim", type=int, help="Embedding dimension")
    train_encoder.add_argument("--hidden", type=int, help="Hidden width")
    train_encoder.add_argument("--epochs", type=int, help="Training epochs")
    train_encoder.add_argument("--learning-rate", type=float, help="Learning rate")
    train_encoder.add_argument("--momentum", type=float, help="Momentum")
    train_encoder.add_argument("--weight-decay", type=float, help="Weight decay")
    train_encoder.add_argument("--batch-size", type=int, help="Pairs per step")

    embed = _subcommand(
        subparsers, "embed", "Embed every keyframe with a trained encoder", commands.cmd_embed, EmbedConfig
    )
    embed.add_argument("--dataset", type=Path, required=True, help="Dataset directory")
    embed.add_argument("--encoder", type=Path, required=True, help="encoder.bin")
    _add_features(embed)

    train_gnn = _subcommand(
        subparsers,
        "train-gnn",
        "Train the scene-graph network on one loop against the other",
        commands.cmd_train_gnn,
        TrainGnnConfig,
    )
    train_gnn.add_argument("--embeddings", type=Path, required=True, help="embeddings.csv")
    train_gnn.add_argument("--similarity", type=Path, required=True, help="similarity.csv")
    _add_graph(train_gnn)
    train_gnn.add_argument("--steps", type=int, help="Gradient steps")
    train_gnn.add_argument("--learning-rate", type=float, help="Learning rate")
    train_gnn.add_argument("--momentum", type=float, help="Momentum")
    train_gnn.add_argument("--seed", type=int, help="Initialisation seed")

    query = _subcommand(
        subparsers, "query", "Detect loop closures by sub-graph query", commands.cmd_query, QueryConfig
    )
    query.add_argument("--embeddings", type=Path, required=True, help="embeddings.csv")
    query.add_argument("--gnn", type=Path, required=True, help="gnn.bin")
    _add_graph(query)
    query.add_argument("--threshold", type=float, help="Absolute score threshold")
    query.add_argument("--percentile", type=float, help="Score percentile used without --threshold")

    optimize = _subcommand(
        subparsers,
        "optimize",
        "Pose-graph optimisation with detected loop closures",
        commands.cmd_optimize,
        OptimizeConfig,
    )
    optimize.add_argument("--dataset", type=Path, help="Dataset directory")
    optimize.add_argument("--matches", type=Path, help="matches.csv")
    optimize.add_argument("--embeddings", type=Path, help="embeddings.csv for loop-edge weights")
    optimize.add_argument("--problem", type=Path, help="g2o problem file")
    optimize.add_argument("--seed", type=int, help="Odometry noise seed")
    optimize.add_argument("--sigma-t", type=float, help="Odometry translation noise (m)")
    optimize.add_argument("--sigma-r", type=float, help="Odometry rotation noise (rad)")
    optimize.add_argument("--max-iters", type=int, help="Iteration cap")
    optimize.add_argument("--tol", type=float, help="Convergence tolerance")

    evaluate = _subcommand(
        subparsers, "eval", "Trajectory error and heatmap comparison", commands.cmd_eval, EvalConfig
    )
    evaluate.add_argument("--estimated", type=Path, required=True, help="Estimated TUM trajectory")
    evaluate.add_argument("--ground-truth", type=Path, required=True, help="Ground-truth TUM trajectory")
    evaluate.add_argument("--align", action=argparse.BooleanOptionalAction, help="Rigid alignment")
    evaluate.add_argument("--predicted", type=Path, help="Predicted similarity CSV")
    evaluate.add_argument("--truth", type=Path, help="Ground-truth similarity CSV")

    run_all = _subcommand(
        subparsers, "pipeline", "Run every stage in order", commands.cmd_pipeline, PipelineConfig
    )
    run_all.add_argument("--spec", type=Path, help="Scene spec JSON")
    run_all.add_argument("--seed", type=int, help="Seed for every stage")
    run_all.add_argument("--scale", type=int, help="Patch size: 16, 32 or 64")
    run_all.add_argument("--epochs", type=int, help="Encoder epochs")
    run_all.add_argument("--gnn-steps", type=int, help="GNN gradient steps")
    run_all.add_argument("--sigma-t", type=float, help="Odometry translation noise (m)")
    run_all.add_argument("--sigma-r", type=float, help="Odometry rotation noise (rad)")
    _add_graph(run_all)

    return parser


def config_payload(args: argparse.Namespace) -> Dict[str, Any]:
    """Flags actually given; omitted ones fall back to the RunConfig defaults."""
    return {
        key: value
        for key, value in vars(args).items()
        if key not in _INTERNAL and value is not None
    }


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    stage = args.command
    try:
        setup_logging(args.log_level)
    except RelocError as exc:
        # logging is not configured yet
        stderr.print(f"error [{stage}]: {exc.message}", markup=False, soft_wrap=True)
        return exc.exit_code

    try:
        config = args.config_class.model_validate(config_payload(args))
        return int(args.handler(config))
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "config"
        log_error(exc, {"stage": stage})
        stderr.print(f"error [{stage}]: invalid {field}: {first['msg']}", markup=False, soft_wrap=True)
        return 2
    except RelocError as exc:
        exc.stage = exc.stage or stage
        log_error(exc, {"stage": exc.stage})
        stderr.print(f"error [{exc.stage}]: {exc.message}", markup=False, soft_wrap=True)
        return exc.exit_code
    except OSError as exc:
        log_error(exc, {"stage": stage})
        stderr.print(f"error [{stage}]: {exc}", markup=False, soft_wrap=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
