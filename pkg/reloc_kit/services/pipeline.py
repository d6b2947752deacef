"""Stage runners: each reads its input artifacts, runs one module and writes to ``out``."""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from reloc_kit.core.config import resolve_threads
from reloc_kit.core.errors import ArtifactMissing, InvalidSpec, ParseError
from reloc_kit.core.logging import get_logger, log_stage
from reloc_kit.models.embedding import EncoderTrainingConfig
from reloc_kit.models.graph import GnnTrainingConfig, QueryMatch
from reloc_kit.models.pose_graph import OptimizerConfig, Trajectory
from reloc_kit.models.scene import SceneSpec
from reloc_kit.models.similarity import SimilarityMatrix
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
from reloc_kit.services.dataset import load_dataset, save_dataset
from reloc_kit.services.embedding import (
    build_embedding_graph,
    chain_edges,
    encode,
    load_encoder,
    predicted_similarity,
    save_encoder,
    train_encoder,
)
from reloc_kit.services.evaluation import evaluate_ate, heatmap_error
from reloc_kit.services.graph_query import (
    detect_loop_closures,
    gnn_forward,
    load_gnn,
    save_gnn,
    train_gnn,
)
from reloc_kit.services.pose_opt import (
    build_problem_from_matches,
    loop_gap,
    optimize,
    simulate_odometry,
)
from reloc_kit.services.scene import generate_scene, prepare_keyframes
from reloc_kit.services.similarity import build_similarity_matrix
from reloc_kit.utils.formats import (
    read_g2o,
    read_indexed_rows,
    read_matrix_csv,
    read_tum,
    write_g2o,
    write_indexed_rows,
    write_matrix_csv,
    write_tum,
)
from reloc_kit.utils.netpbm import heatmap_image, write_pgm

logger = get_logger(__name__)

SIGMA_RMSE_NOTE = "sigma_rmse = stdev(per-frame error) / ground-truth bounding-box diagonal"


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ArtifactMissing(path, what)
    return path


def _write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_scene_spec(path: Optional[Path]) -> SceneSpec:
    if path is None:
        return SceneSpec()
    _require(path, "scene spec")
    try:
        return SceneSpec.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise InvalidSpec(f"{path}: {exc.errors()[0]['msg']}") from exc


def load_similarity(path: Path) -> SimilarityMatrix:
    values = read_matrix_csv(_require(path, "similarity matrix"))
    try:
        return SimilarityMatrix(values)
    except ValueError as exc:
        raise ParseError(path, 1, str(exc)) from exc


def write_embeddings(path: Path, codes: np.ndarray) -> None:
    header = ["id"] + [f"e{k}" for k in range(codes.shape[1])]
    write_indexed_rows(path, header, [[index, *row] for index, row in enumerate(codes)])


def read_embeddings(path: Path) -> np.ndarray:
    path = _require(path, "embeddings")
    with path.open("r", encoding="utf-8") as handle:
        columns = len(handle.readline().split(","))
    rows = read_indexed_rows(path, columns)
    if not rows:
        raise ParseError(path, 1, "no embeddings")
    return np.array([row[1:] for row in rows])


def write_matches(path: Path, matches: Sequence[QueryMatch]) -> None:
    write_indexed_rows(
        path,
        ["query_idx", "ref_idx", "score"],
        [[m.query_index, m.reference_index, m.score] for m in matches],
    )


def read_matches(path: Path) -> List[QueryMatch]:
    rows = read_indexed_rows(_require(path, "matches"), 3)
    return [QueryMatch(int(q), int(r), float(s)) for q, r, s in rows]


def _split(n: int, reference_frames: Optional[int]) -> int:
    split = n // 2 if reference_frames is None else reference_frames
    if not 1 <= split < n:
        raise InvalidSpec(f"reference loop of {split} keyframes leaves no query keyframes out of {n}")
    return split


# Stages ------------------------------------------------------------------------------


def run_gen(config: GenConfig) -> Dict[str, Any]:
    spec = load_scene_spec(config.spec)
    scene = generate_scene(spec, config.seed, threads=resolve_threads(config.threads))
    save_dataset(config.out, scene.keyframes, scene.trajectory, scene.intrinsics)
    _write_json(config.out / "scene.json", {"seed": config.seed, "spec": spec.model_dump(mode="json")})
    log_stage("gen", "Dataset written", out=str(config.out), keyframes=len(scene.keyframes))
    return {"keyframes": len(scene.keyframes), "out": str(config.out)}


def run_iou(config: IouConfig) -> Dict[str, Any]:
    keyframes, trajectory, k = load_dataset(config.dataset)
    matrix = build_similarity_matrix(
        keyframes, trajectory.poses, k, config.occlusion, resolve_threads(config.threads)
    )
    config.out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(config.out / "similarity.csv", matrix.values)
    if config.heatmap:
        write_pgm(config.out / "similarity.pgm", heatmap_image(matrix.values))
    log_stage("iou", "Similarity matrix written", out=str(config.out), n=matrix.n)
    return {"keyframes": matrix.n, "symmetry_error": matrix.symmetry_error}


def run_train_encoder(config: TrainEncoderConfig) -> Dict[str, Any]:
    threads = resolve_threads(config.threads)
    keyframes, _, _ = load_dataset(config.dataset)
    truth = load_similarity(config.similarity)
    prepared = prepare_keyframes(keyframes, config.budget, config.scale, config.seed, threads)
    training = EncoderTrainingConfig(
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        batch_size=config.batch_size,
        hidden=config.hidden,
        dim=config.dim,
        seed=config.seed,
    )
    params, history = train_encoder(prepared, truth, training, scale=config.scale)
    config.out.mkdir(parents=True, exist_ok=True)
    save_encoder(config.out / "encoder.bin", params)
    write_indexed_rows(
        config.out / "encoder_loss.csv",
        ["epoch", "loss"],
        [[0, history.initial_loss]] + [[e + 1, v] for e, v in enumerate(history.epoch_losses)],
    )
    log_stage("train-encoder", "Encoder written", out=str(config.out))
    return {"initial_loss": history.initial_loss, "final_loss": history.final_loss}


def run_embed(config: EmbedConfig) -> Dict[str, Any]:
    params = load_encoder(_require(config.encoder, "encoder parameters"))
    keyframes, _, _ = load_dataset(config.dataset)
    prepared = prepare_keyframes(
        keyframes, config.budget, params.scale, config.seed, resolve_threads(config.threads)
    )
    codes = np.vstack([encode(params, kf).values for kf in prepared])
    config.out.mkdir(parents=True, exist_ok=True)
    write_embeddings(config.out / "embeddings.csv", codes)
    predicted = predicted_similarity(codes)
    write_matrix_csv(config.out / "predicted_similarity.csv", predicted.values)
    write_pgm(config.out / "predicted_similarity.pgm", heatmap_image(predicted.values))
    log_stage("embed", "Embeddings written", out=str(config.out), keyframes=len(codes))
    return {"keyframes": len(codes), "dim": int(codes.shape[1])}


def _graphs(codes: np.ndarray, split: int) -> Tuple[Any, Any]:
    reference = build_embedding_graph(codes[:split], chain_edges(split))
    query = build_embedding_graph(codes[split:], chain_edges(len(codes) - split))
    return reference, query


def run_train_gnn(config: TrainGnnConfig) -> Dict[str, Any]:
    codes = read_embeddings(config.embeddings)
    truth = load_similarity(config.similarity)
    if truth.n != len(codes):
        raise InvalidSpec(f"{len(codes)} embeddings but a {truth.n}×{truth.n} similarity matrix")
    split = _split(len(codes), config.reference_frames)
    reference, query = _graphs(codes, split)
    training = GnnTrainingConfig(
        steps=config.steps,
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        eta=config.eta,
        window=config.window,
        hidden=2 * codes.shape[1],
        seed=config.seed,
    )
    params, history = train_gnn(None, reference, query, truth.values[split:, :split], training)
    config.out.mkdir(parents=True, exist_ok=True)
    save_gnn(config.out / "gnn.bin", params)
    write_indexed_rows(
        config.out / "gnn_loss.csv",
        ["step", "loss"],
        [[0, history.initial_loss]] + [[s + 1, v] for s, v in enumerate(history.losses)],
    )
    log_stage("train-gnn", "GNN written", out=str(config.out))
    return {"initial_loss": history.initial_loss, "final_loss": history.final_loss}


def run_query(config: QueryConfig) -> Dict[str, Any]:
    codes = read_embeddings(config.embeddings)
    params = load_gnn(_require(config.gnn, "GNN parameters"))
    split = _split(len(codes), config.reference_frames)
    reference_graph, _ = _graphs(codes, split)
    reference = gnn_forward(params, reference_graph)
    matches = detect_loop_closures(
        reference,
        codes[split:],
        params,
        window=config.window,
        eta=config.eta,
        threshold=config.threshold,
        percentile=config.percentile,
        query_offset=split,
    )
    config.out.mkdir(parents=True, exist_ok=True)
    write_matches(config.out / "matches.csv", matches)
    log_stage("query", "Matches written", out=str(config.out), matches=len(matches))
    return {"matches": len(matches)}


def run_optimize(config: OptimizeConfig) -> Dict[str, Any]:
    config.out.mkdir(parents=True, exist_ok=True)
    if config.problem is not None:
        problem = read_g2o(_require(config.problem, "g2o problem"))
        timestamps = Trajectory.from_poses(problem.poses).timestamps
    else:
        assert config.dataset is not None and config.matches is not None
        _, ground_truth, _ = load_dataset(config.dataset)
        matches = read_matches(config.matches)
        odometry, initial = simulate_odometry(
            ground_truth.poses, config.sigma_t, config.sigma_r, config.seed
        )
        similarity = None
        if config.embeddings is not None:
            predicted = predicted_similarity(read_embeddings(config.embeddings))
            similarity = [predicted.values[m.query_index, m.reference_index] for m in matches]
        problem = build_problem_from_matches(
            initial, odometry, matches, similarity, reference_poses=ground_truth.poses
        )
        timestamps = ground_truth.timestamps

    write_tum(config.out / "initial.txt", Trajectory(timestamps, problem.poses))
    write_g2o(config.out / "problem.g2o", problem)
    poses, report = optimize(
        problem,
        OptimizerConfig(max_iters=config.max_iters, tol=config.tol),
        threads=resolve_threads(config.threads),
    )
    write_tum(config.out / "optimized.txt", Trajectory(timestamps, tuple(poses)))
    _write_json(config.out / "opt_report.json", report.model_dump(mode="json"))
    gaps = [
        [edge.i, edge.j, loop_gap(problem.poses, edge), loop_gap(poses, edge)]
        for edge in problem.loop_edges()
    ]
    write_indexed_rows(config.out / "loop_gaps.csv", ["i", "j", "gap_before", "gap_after"], gaps)
    log_stage("optimize", "Optimised trajectory written", out=str(config.out))
    return {
        "initial_cost": report.initial_cost,
        "final_cost": report.final_cost,
        "iterations": report.iterations,
        "termination": report.termination.value,
        "loop_edges": len(gaps),
    }


def run_eval(config: EvalConfig) -> Dict[str, Any]:
    estimated = read_tum(_require(config.estimated, "estimated trajectory"))
    ground_truth = read_tum(_require(config.ground_truth, "ground-truth trajectory"))
    report = evaluate_ate(estimated, ground_truth, align=config.align)
    summary: Dict[str, Any] = {
        "rmse": report.rmse,
        "sigma_rmse": report.sigma_rmse,
        "max_err": report.max_err,
    }
    config.out.mkdir(parents=True, exist_ok=True)
    if config.predicted is not None and config.truth is not None:
        error, max_error = heatmap_error(load_similarity(config.predicted), load_similarity(config.truth))
        write_matrix_csv(config.out / "heatmap_error.csv", error)
        write_pgm(config.out / "heatmap_error.pgm", heatmap_image(error))
        summary["heatmap_max_error"] = max_error
        summary["heatmap_mean_error"] = float(error.mean())

    _write_json(config.out / "ate.json", {"note": SIGMA_RMSE_NOTE, **summary})
    lines = [f"# {SIGMA_RMSE_NOTE}"] + [f"{key} {value:.9g}" for key, value in summary.items()]
    (config.out / "ate.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_indexed_rows(
        config.out / "errors.csv",
        ["frame", "error"],
        [[index, value] for index, value in enumerate(report.errors)],
    )
    log_stage("eval", "Evaluation written", out=str(config.out), rmse=report.rmse)
    return summary


def run_pipeline(config: PipelineConfig) -> Dict[str, Any]:
    """gen → iou → train-encoder → embed → train-gnn → query → optimize → eval."""
    out = config.out
    common = {"threads": config.threads}
    graph = {
        "reference_frames": config.reference_frames,
        "window": config.window,
        "eta": config.eta,
    }
    run_gen(GenConfig(out=out / "dataset", spec=config.spec, seed=config.seed, **common))
    run_iou(IouConfig(out=out / "iou", dataset=out / "dataset", **common))
    similarity = out / "iou" / "similarity.csv"
    encoder = run_train_encoder(
        TrainEncoderConfig(
            out=out / "encoder",
            dataset=out / "dataset",
            similarity=similarity,
            seed=config.seed,
            scale=config.scale,
            epochs=config.epochs,
            **common,
        )
    )
    run_embed(
        EmbedConfig(
            out=out / "embed",
            dataset=out / "dataset",
            encoder=out / "encoder" / "encoder.bin",
            seed=config.seed,
            **common,
        )
    )
    embeddings = out / "embed" / "embeddings.csv"
    gnn = run_train_gnn(
        TrainGnnConfig(
            out=out / "gnn",
            embeddings=embeddings,
            similarity=similarity,
            steps=config.gnn_steps,
            seed=config.seed,
            **graph,
            **common,
        )
    )
    query = run_query(
        QueryConfig(out=out / "query", embeddings=embeddings, gnn=out / "gnn" / "gnn.bin", **graph, **common)
    )
    optimised = run_optimize(
        OptimizeConfig(
            out=out / "optimize",
            dataset=out / "dataset",
            matches=out / "query" / "matches.csv",
            embeddings=embeddings,
            seed=config.seed,
            sigma_t=config.sigma_t,
            sigma_r=config.sigma_r,
            **common,
        )
    )
    ground_truth = out / "dataset" / "poses.txt"
    drift = run_eval(
        EvalConfig(
            out=out / "eval" / "drift",
            estimated=out / "optimize" / "initial.txt",
            ground_truth=ground_truth,
            **common,
        )
    )
    final = run_eval(
        EvalConfig(
            out=out / "eval" / "optimized",
            estimated=out / "optimize" / "optimized.txt",
            ground_truth=ground_truth,
            predicted=out / "embed" / "predicted_similarity.csv",
            truth=similarity,
            **common,
        )
    )
    report = {
        "seed": config.seed,
        "encoder": encoder,
        "gnn": gnn,
        "matches": query["matches"],
        "optimize": optimised,
        "ate_drift": drift["rmse"],
        "ate_optimized": final["rmse"],
        "heatmap_max_error": final.get("heatmap_max_error"),
    }
    _write_json(out / "report.json", report)
    log_stage("pipeline", "Pipeline finished", out=str(out), **{k: report[k] for k in ("ate_drift", "ate_optimized")})
    return report
