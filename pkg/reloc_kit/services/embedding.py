"""Patch encoder, similarity loss and encoder training.

The predicted similarity of two keyframes is ``(1 + cos(e_i, e_j)) / 2`` so it
lives in [0, 1] like the reprojection IoU it is trained against.
"""

from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from reloc_kit.core.errors import (
    DanglingEdge,
    DimMismatch,
    EmptyPatchSet,
    LengthMismatch,
    NonFiniteLoss,
    ParamsFormatError,
    ZeroNormEmbedding,
)
from reloc_kit.core.logging import get_logger, log_numeric_event
from reloc_kit.models.embedding import (
    ENCODER_MAGIC,
    EmbeddingCode,
    EmbeddingGraph,
    EncoderParams,
    EncoderTrainingConfig,
    TrainingHistory,
    input_dim,
)
from reloc_kit.models.scene import Keyframe, Patch
from reloc_kit.models.similarity import SimilarityMatrix
from reloc_kit.services.sgd import MomentumSgd
from reloc_kit.utils.params import read_params, split_flat, write_params

logger = get_logger(__name__)

MIN_NORM = 1e-12
Vector = Union[EmbeddingCode, np.ndarray, Sequence[float]]


def init_encoder(scale: int, hidden: int = 32, dim: int = 16, seed: int = 0) -> EncoderParams:
    """Xavier-uniform weights, biases at 0.01 so the initial code is nonzero."""
    rng = np.random.default_rng(seed)
    arrays = []
    for shape in EncoderParams.shapes(scale, hidden, dim):
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            arrays.append(rng.uniform(-limit, limit, size=shape))
        else:
            arrays.append(np.full(shape, 0.01))
    return EncoderParams.from_arrays(scale, arrays)


def patch_inputs(patches: Sequence[Patch], width: int, height: int, scale: int) -> np.ndarray:
    """P×input_dim rows in canonical (v, u, scale, bytes) order, centred on zero."""
    if not patches:
        raise EmptyPatchSet("keyframe has no patches to encode")
    rows = []
    for patch in sorted(patches, key=Patch.sort_key):
        if patch.scale != scale or patch.data.shape != (scale, scale, 3):
            raise DimMismatch(f"encoder expects {scale}px patches, got {patch.scale}px")
        rows.append(
            np.concatenate(
                [
                    patch.data.reshape(-1).astype(np.float64) / 255.0 - 0.5,
                    [patch.u / width - 0.5, patch.v / height - 0.5],
                ]
            )
        )
    return np.vstack(rows)


def _forward(params: EncoderParams, x: np.ndarray) -> Tuple[np.ndarray, ...]:
    z1 = x @ params.w1 + params.b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params.w2 + params.b2
    h2 = np.maximum(z2, 0.0)
    y = h2 @ params.w3 + params.b3
    return z1, h1, z2, h2, y


def encode_inputs(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyPatchSet("no patch rows to encode")
    if x.shape[1] != input_dim(params.scale):
        raise DimMismatch(f"patch rows have {x.shape[1]} columns, encoder expects {input_dim(params.scale)}")
    return _forward(params, x)[-1].mean(axis=0)


def encode(params: EncoderParams, kf: Keyframe) -> EmbeddingCode:
    """Mean over the keyframe's patches of the per-patch MLP output."""
    x = patch_inputs(kf.patches, kf.width, kf.height, params.scale)
    return EmbeddingCode(encode_inputs(params, x))


def _as_array(vector: Vector) -> np.ndarray:
    if isinstance(vector, EmbeddingCode):
        return vector.values
    return np.asarray(vector, dtype=np.float64)


def cosine_similarity(a: Vector, b: Vector) -> float:
    a, b = _as_array(a), _as_array(b)
    norm_a, norm_b = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if norm_a <= MIN_NORM or norm_b <= MIN_NORM:
        raise ZeroNormEmbedding("cosine similarity of a zero-norm embedding")
    return float(np.clip(a @ b / (norm_a * norm_b), -1.0, 1.0))


def shrinkage_loss(
    pred: Union[float, np.ndarray],
    truth: Union[float, np.ndarray],
    a: float = 10.0,
    c: float = 0.2,
) -> Union[float, np.ndarray]:
    """l² / (1 + exp(a·(c − l))) with l = |pred − truth|."""
    err = np.abs(np.asarray(pred, dtype=np.float64) - truth)
    loss = err * err * expit(a * (err - c))
    return float(loss) if np.ndim(loss) == 0 else loss


def shrinkage_loss_grad(
    pred: np.ndarray, truth: np.ndarray, a: float = 10.0, c: float = 0.2
) -> np.ndarray:
    """d loss / d pred."""
    diff = np.asarray(pred, dtype=np.float64) - truth
    err = np.abs(diff)
    s = expit(a * (err - c))
    return np.sign(diff) * (2.0 * err * s + err * err * a * s * (1.0 - s))


def predicted_similarity(codes: Union[np.ndarray, Sequence[EmbeddingCode]]) -> SimilarityMatrix:
    """(1 + cos)/2 for every ordered pair of codes."""
    matrix = np.vstack([_as_array(c) for c in codes]) if not isinstance(codes, np.ndarray) else codes
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms <= MIN_NORM):
        raise ZeroNormEmbedding("cannot compare zero-norm embeddings")
    unit = matrix / norms[:, None]
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    return SimilarityMatrix(np.clip(0.5 * (1.0 + cos), 0.0, 1.0))


def training_pairs(n: int, config: EncoderTrainingConfig, rng: np.random.Generator) -> np.ndarray:
    """Ordered (i, j) pairs for one epoch, already shuffled."""
    if n <= config.full_pairs_limit:
        grid = np.indices((n, n)).reshape(2, -1).T
        return grid[rng.permutation(grid.shape[0])]
    count = min(n * n, config.max_pairs)
    return rng.integers(0, n, size=(count, 2))


def encoder_loss_and_grad(
    params: EncoderParams,
    inputs: Sequence[np.ndarray],
    truth: np.ndarray,
    pairs: np.ndarray,
    a: float = 10.0,
    c: float = 0.2,
) -> Tuple[float, List[np.ndarray]]:
    """Mean shrinkage loss over ``pairs`` and its gradient w.r.t. every parameter array."""
    caches = [_forward(params, x) for x in inputs]
    codes = np.vstack([cache[-1].mean(axis=0) for cache in caches])
    norms = np.linalg.norm(codes, axis=1)
    if np.any(norms <= MIN_NORM):
        raise ZeroNormEmbedding("encoder produced a zero-norm embedding")

    i, j = pairs[:, 0], pairs[:, 1]
    cos = np.einsum("kd,kd->k", codes[i], codes[j]) / (norms[i] * norms[j])
    pred = 0.5 * (1.0 + cos)
    target = truth[i, j]
    loss = float(np.mean(shrinkage_loss(pred, target, a, c)))

    # d loss / d cos, then cos → both codes
    d_cos = shrinkage_loss_grad(pred, target, a, c) * 0.5 / len(pairs)
    d_codes = np.zeros_like(codes)
    unit_i = codes[i] / (norms[i] * norms[j])[:, None]
    unit_j = codes[j] / (norms[i] * norms[j])[:, None]
    grad_i = d_cos[:, None] * (unit_j - cos[:, None] * codes[i] / (norms[i] ** 2)[:, None])
    grad_j = d_cos[:, None] * (unit_i - cos[:, None] * codes[j] / (norms[j] ** 2)[:, None])
    np.add.at(d_codes, i, grad_i)
    np.add.at(d_codes, j, grad_j)

    grads = [np.zeros_like(p) for p in params.arrays()]
    for node, (x, (z1, h1, z2, h2, _)) in enumerate(zip(inputs, caches)):
        if not np.any(d_codes[node]):
            continue
        dy = np.broadcast_to(d_codes[node] / x.shape[0], (x.shape[0], params.dim))
        grads[4] += h2.T @ dy
        grads[5] += dy.sum(axis=0)
        dz2 = (dy @ params.w3.T) * (z2 > 0)
        grads[2] += h1.T @ dz2
        grads[3] += dz2.sum(axis=0)
        dz1 = (dz2 @ params.w2.T) * (z1 > 0)
        grads[0] += x.T @ dz1
        grads[1] += dz1.sum(axis=0)
    return loss, grads


def centre_output_bias(params: EncoderParams, inputs: Sequence[np.ndarray]) -> EncoderParams:
    """Shift b3 so the codes of ``inputs`` average to zero.

    Left unchanged when centring would leave some code with zero norm.
    """
    codes = np.vstack([encode_inputs(params, x) for x in inputs])
    mean = codes.mean(axis=0)
    if np.min(np.linalg.norm(codes - mean, axis=1)) < MIN_NORM:
        logger.warning("Output bias not centred", keyframes=len(inputs))
        return params
    arrays = params.arrays()
    arrays[-1] = arrays[-1] - mean
    return EncoderParams.from_arrays(params.scale, arrays)


def train_encoder(
    keyframes: Sequence[Keyframe],
    truth: SimilarityMatrix,
    config: Optional[EncoderTrainingConfig] = None,
    scale: Optional[int] = None,
    params: Optional[EncoderParams] = None,
) -> Tuple[EncoderParams, TrainingHistory]:
    """Mini-batch momentum SGD over keyframe pairs against the IoU matrix.

    Starts from ``params`` when given, otherwise from a seeded Xavier init
    whose output bias is centred on the training keyframes' mean code.
    """
    config = config or EncoderTrainingConfig()
    n = len(keyframes)
    if n < 2:
        raise LengthMismatch("encoder training needs at least 2 keyframes")
    if truth.n != n:
        raise DimMismatch(f"{n} keyframes but a {truth.n}×{truth.n} similarity matrix")
    if params is not None:
        scale = params.scale
    elif scale is None:
        scale = keyframes[0].patches[0].scale if keyframes[0].patches else 16

    inputs = [patch_inputs(kf.patches, kf.width, kf.height, scale) for kf in keyframes]
    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    if params is None:
        params = init_encoder(
            scale, config.hidden, config.dim, seed=int(init_seed.generate_state(1)[0])
        )
        params = centre_output_bias(params, inputs)
    rng = np.random.default_rng(shuffle_seed)
    optimizer = MomentumSgd(config.learning_rate, config.momentum, config.weight_decay)
    values = truth.values

    all_pairs = np.indices((n, n)).reshape(2, -1).T
    initial_loss, _ = encoder_loss_and_grad(
        params, inputs, values, all_pairs, config.steepness, config.threshold
    )
    history = TrainingHistory(initial_loss=initial_loss)
    logger.info("Encoder training started", keyframes=n, initial_loss=round(initial_loss, 6))

    step = 0
    for epoch in range(config.epochs):
        pairs = training_pairs(n, config, rng)
        total = 0.0
        for start in range(0, len(pairs), config.batch_size):
            batch = pairs[start : start + config.batch_size]
            loss, grads = encoder_loss_and_grad(
                params, inputs, values, batch, config.steepness, config.threshold
            )
            step += 1
            if not np.isfinite(loss):
                raise NonFiniteLoss(step, loss)
            params = EncoderParams.from_arrays(scale, optimizer.step(params.arrays(), grads))
            if not params.is_finite():
                raise NonFiniteLoss(step, float("nan"))
            total += loss * len(batch)
        history.epoch_losses.append(total / len(pairs))
        history.steps = step
        if (epoch + 1) % config.log_every == 0:
            log_numeric_event("encoder", "Epoch finished", epoch=epoch + 1, loss=history.epoch_losses[-1])

    logger.info(
        "Encoder training finished",
        epochs=config.epochs,
        steps=step,
        final_loss=round(history.final_loss, 6),
    )
    return params, history


def build_embedding_graph(
    codes: Union[np.ndarray, Sequence[EmbeddingCode]], edges: Sequence[Tuple[int, int]]
) -> EmbeddingGraph:
    nodes = np.vstack([_as_array(c) for c in codes]) if not isinstance(codes, np.ndarray) else codes
    n = nodes.shape[0]
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise DanglingEdge(f"edge ({i}, {j}) references a node outside [0, {n})")
    return EmbeddingGraph(nodes, tuple(edges))


def chain_edges(n: int, offset: int = 0) -> List[Tuple[int, int]]:
    """Odometry chain (k, k+1) over n consecutive nodes."""
    return [(offset + k, offset + k + 1) for k in range(n - 1)]


def save_encoder(path: Union[str, Path], params: EncoderParams) -> None:
    write_params(path, ENCODER_MAGIC, [params.dim, params.hidden, params.scale], params.arrays())


def load_encoder(path: Union[str, Path]) -> EncoderParams:
    dims, values = read_params(path, ENCODER_MAGIC)
    if len(dims) != 3:
        raise ParamsFormatError(f"{path}: expected 3 dims (D, H, scale), got {dims}")
    dim, hidden, scale = dims
    return EncoderParams.from_arrays(
        scale, split_flat(values, EncoderParams.shapes(scale, hidden, dim), path)
    )
