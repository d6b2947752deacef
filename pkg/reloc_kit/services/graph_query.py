"""Mean-aggregator message passing, inverse cross-entropy querying and GNN training.

Query rows ``q`` (W×D) and reference columns ``m`` (D×N) combine as

    U_ij = 1 / (eta − Σ_k q_ik · log m_kj)

with ``m`` clamped to [1e-7, 1] before the log. Edge embeddings are carried by
the graph but aggregation uses node features only.
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from reloc_kit.core.errors import (
    DimMismatch,
    EmptyWindow,
    NonFiniteLoss,
    NonPositiveEta,
    ParamsFormatError,
)
from reloc_kit.core.logging import get_logger, log_numeric_event
from reloc_kit.models.embedding import EmbeddingGraph
from reloc_kit.models.graph import (
    GNN_LAYERS,
    GNN_MAGIC,
    LAYER_ACTIVATIONS,
    Activation,
    GnnParams,
    GnnTrainingConfig,
    GnnTrainingHistory,
    QueryMatch,
    QueryResult,
    ReferenceGraph,
)
from reloc_kit.services.sgd import MomentumSgd
from reloc_kit.utils.params import read_params, split_flat, write_params

logger = get_logger(__name__)

LOG_EPS = 1e-7
DEFAULT_ETA = 1e-3
DEFAULT_PERCENTILE = 90.0
WARM_START_SHARPNESS = 6.0
WARM_START_MARGIN = 0.5
MIN_SPREAD = 1e-12

GraphLike = Union[EmbeddingGraph, Tuple[np.ndarray, np.ndarray]]


def init_gnn(dims: Sequence[int] = (16, 16, 16, 16), seed: int = 0) -> GnnParams:
    """Xavier-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    arrays = []
    for shape in GnnParams.shapes(dims):
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            arrays.append(rng.uniform(-limit, limit, size=shape))
        else:
            arrays.append(np.zeros(shape))
    return GnnParams.from_arrays(arrays)


def warm_start_gnn(
    reference_features: np.ndarray,
    sharpness: float = WARM_START_SHARPNESS,
    margin: float = WARM_START_MARGIN,
) -> GnnParams:
    """Sign-split identity layers, D → 2D → 2D → 2D.

    The first layer standardises each feature with the reference mean and
    spread and splits it into its positive and negative parts, the second
    passes them through and the sigmoid layer switches them on above
    ``margin``. Neighbour weights start at zero.
    """
    features = np.asarray(reference_features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise DimMismatch("graph has no nodes")
    d = features.shape[1]
    mean = features.mean(axis=0)
    spread = features.std(axis=0)
    inverse = np.where(spread > MIN_SPREAD, 1.0 / np.maximum(spread, MIN_SPREAD), 0.0)
    width = 2 * d
    identity = np.eye(width)
    arrays = [
        np.hstack([np.diag(inverse), -np.diag(inverse)]),
        np.zeros((d, width)),
        np.concatenate([-mean * inverse, mean * inverse]),
        identity,
        np.zeros((width, width)),
        np.zeros(width),
        sharpness * identity,
        np.zeros((width, width)),
        np.full(width, -sharpness * margin),
    ]
    return GnnParams.from_arrays(arrays)


def chain_adjacency(n: int) -> np.ndarray:
    adj = np.zeros((n, n))
    index = np.arange(n - 1)
    adj[index, index + 1] = adj[index + 1, index] = 1.0
    return adj


def mean_operator(adjacency: np.ndarray) -> np.ndarray:
    """Row-normalised adjacency; isolated nodes get a zero row."""
    degree = adjacency.sum(axis=1)
    safe = np.where(degree > 0, degree, 1.0)
    return np.where(degree[:, None] > 0, adjacency / safe[:, None], 0.0)


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    if activation is Activation.SIGMOID:
        return expit(z)
    return z


def _activation_grad(z: np.ndarray, out: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return (z > 0).astype(np.float64)
    if activation is Activation.SIGMOID:
        return out * (1.0 - out)
    return np.ones_like(z)


def sage_layer(
    features: np.ndarray,
    adjacency: np.ndarray,
    w_self: np.ndarray,
    w_nbr: np.ndarray,
    bias: np.ndarray,
    activation: Union[Activation, str] = Activation.RELU,
) -> np.ndarray:
    """act(h·W_self + mean_{j∈nbr(i)} h_j · W_nbr + bias)."""
    features = np.asarray(features, dtype=np.float64)
    adjacency = np.asarray(adjacency, dtype=np.float64)
    n, d_in = features.shape
    if adjacency.shape != (n, n):
        raise DimMismatch(f"adjacency is {adjacency.shape}, expected {(n, n)}")
    if w_self.shape[0] != d_in or w_nbr.shape != w_self.shape or bias.shape != (w_self.shape[1],):
        raise DimMismatch(
            f"layer weights {w_self.shape}/{w_nbr.shape}/{bias.shape} do not fit D_in={d_in}"
        )
    z = features @ w_self + (mean_operator(adjacency) @ features) @ w_nbr + bias
    return _activate(z, Activation(activation))


def _graph_arrays(graph: GraphLike) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(graph, EmbeddingGraph):
        return graph.node_embeddings, graph.adjacency()
    features, adjacency = graph
    return np.asarray(features, dtype=np.float64), np.asarray(adjacency, dtype=np.float64)


def _forward_layers(
    params: GnnParams, features: np.ndarray, adjacency: np.ndarray
) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray, np.ndarray]]]:
    """Output features and per-layer (input, aggregated input, pre-activation)."""
    if features.ndim != 2 or features.shape[0] == 0:
        raise DimMismatch("graph has no nodes")
    if features.shape[1] != params.dims[0]:
        raise DimMismatch(f"node features have D={features.shape[1]}, GNN expects {params.dims[0]}")
    if adjacency.shape != (features.shape[0],) * 2:
        raise DimMismatch(f"adjacency is {adjacency.shape} for {features.shape[0]} nodes")
    aggregate = mean_operator(adjacency)
    caches = []
    h = features
    for layer, activation in zip(params.layers, LAYER_ACTIVATIONS):
        h_nbr = aggregate @ h
        z = h @ layer.w_self + h_nbr @ layer.w_nbr + layer.bias
        caches.append((h, h_nbr, z))
        h = _activate(z, activation)
    return h, caches


def gnn_forward(params: GnnParams, graph: GraphLike) -> ReferenceGraph:
    features, adjacency = _graph_arrays(graph)
    out, _ = _forward_layers(params, features, adjacency)
    return ReferenceGraph(out)


def inverse_ce_multiply(q: np.ndarray, m: np.ndarray, eta: float = DEFAULT_ETA) -> np.ndarray:
    """Q×K query weights against K×N reference columns → Q×N scores in (0, 1/eta]."""
    if not eta > 0:
        raise NonPositiveEta(f"eta must be positive, got {eta!r}")
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if q.shape[1] != m.shape[0]:
        raise DimMismatch(f"q is {q.shape}, m is {m.shape}: inner dimensions differ")
    cross_entropy = -(q @ np.log(np.clip(m, LOG_EPS, 1.0)))
    return 1.0 / (eta + cross_entropy)


def query_windows(n: int, window: int) -> List[Tuple[int, int]]:
    """Non-overlapping [start, stop) chains covering 0..n; the last may be shorter."""
    if window < 1:
        raise EmptyWindow("window size must be at least 1")
    return [(start, min(start + window, n)) for start in range(0, n, window)]


def query_subgraph(
    reference: ReferenceGraph,
    query_features: np.ndarray,
    params: GnnParams,
    eta: float = DEFAULT_ETA,
    threshold: Optional[float] = None,
    percentile: float = DEFAULT_PERCENTILE,
    query_offset: int = 0,
) -> QueryResult:
    """Run the GNN on a chain of W successive keyframe embeddings and score it against ``reference``.

    ``threshold`` is absolute; when None the ``percentile`` of U is used.
    """
    query_features = np.atleast_2d(np.asarray(query_features, dtype=np.float64))
    if query_features.shape[0] == 0 or query_features.size == 0:
        raise EmptyWindow("query window has no keyframes")
    if reference.n == 0:
        raise EmptyWindow("reference graph has no nodes")
    q, _ = _forward_layers(params, query_features, chain_adjacency(query_features.shape[0]))
    u = inverse_ce_multiply(q, reference.node_features.T, eta)
    cutoff = float(np.percentile(u, percentile)) if threshold is None else float(threshold)

    best = np.argmax(u, axis=1)
    matches = [
        QueryMatch(query_offset + row, int(col), float(u[row, col]))
        for row, col in enumerate(best)
        if u[row, col] >= cutoff
    ]
    matches.sort(key=lambda match: (-match.score, match.query_index))
    return QueryResult(u, tuple(matches), cutoff, query_offset)


def detect_loop_closures(
    reference: ReferenceGraph,
    query_embeddings: np.ndarray,
    params: GnnParams,
    window: int = 5,
    eta: float = DEFAULT_ETA,
    threshold: Optional[float] = None,
    percentile: float = DEFAULT_PERCENTILE,
    query_offset: int = 0,
) -> List[QueryMatch]:
    """Query every non-overlapping window of the query loop and keep the best match per keyframe."""
    best: Dict[int, QueryMatch] = {}
    for start, stop in query_windows(len(query_embeddings), window):
        result = query_subgraph(
            reference,
            query_embeddings[start:stop],
            params,
            eta=eta,
            threshold=threshold,
            percentile=percentile,
            query_offset=query_offset + start,
        )
        for match in result.matches:
            current = best.get(match.query_index)
            if current is None or match.score > current.score:
                best[match.query_index] = match
    matches = sorted(best.values(), key=lambda match: (-match.score, match.query_index))
    logger.info("Loop closures detected", candidates=len(matches), window=window)
    return matches


# Training --------------------------------------------------------------------------


def _backward_layers(
    params: GnnParams,
    adjacency: np.ndarray,
    caches: List[Tuple[np.ndarray, np.ndarray, np.ndarray]],
    output: np.ndarray,
    d_output: np.ndarray,
    grads: List[np.ndarray],
) -> None:
    """Accumulate parameter gradients of one forward pass into ``grads``."""
    aggregate = mean_operator(adjacency)
    d_h = d_output
    out = output
    for index in reversed(range(len(params.layers))):
        layer = params.layers[index]
        h, h_nbr, z = caches[index]
        d_z = d_h * _activation_grad(z, out, LAYER_ACTIVATIONS[index])
        grads[3 * index] += h.T @ d_z
        grads[3 * index + 1] += h_nbr.T @ d_z
        grads[3 * index + 2] += d_z.sum(axis=0)
        d_h = d_z @ layer.w_self.T + aggregate.T @ (d_z @ layer.w_nbr.T)
        out = h


def _normalise_rows(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    totals = values.sum(axis=1)
    valid = totals > 0
    normalised = np.zeros_like(values)
    normalised[valid] = values[valid] / totals[valid, None]
    return normalised, valid


def gnn_loss_and_grad(
    params: GnnParams,
    reference_features: np.ndarray,
    reference_adjacency: np.ndarray,
    query_features: np.ndarray,
    labels: np.ndarray,
    window: int = 5,
    eta: float = DEFAULT_ETA,
) -> Tuple[float, List[np.ndarray]]:
    """Mean row cross-entropy between normalised U rows and normalised label rows.

    ``labels`` is Q×N (query keyframes × reference keyframes); rows whose
    labels sum to zero are left out of the loss.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != (query_features.shape[0], reference_features.shape[0]):
        raise DimMismatch(
            f"labels are {labels.shape}, expected {(query_features.shape[0], reference_features.shape[0])}"
        )
    targets, valid = _normalise_rows(labels)
    rows = int(np.count_nonzero(valid))
    grads = [np.zeros_like(a) for a in params.arrays()]
    if rows == 0:
        return 0.0, grads

    ref_out, ref_caches = _forward_layers(params, reference_features, reference_adjacency)
    m = ref_out.T
    log_m = np.log(np.clip(m, LOG_EPS, 1.0))
    d_m = np.zeros_like(m)
    loss = 0.0

    for start, stop in query_windows(query_features.shape[0], window):
        adjacency = chain_adjacency(stop - start)
        q, caches = _forward_layers(params, query_features[start:stop], adjacency)
        u = 1.0 / (eta - q @ log_m)
        y = targets[start:stop]
        mask = valid[start:stop]
        totals = u.sum(axis=1, keepdims=True)
        row_loss = -(y * np.log(u / totals)).sum(axis=1)
        loss += float(row_loss[mask].sum())

        d_u = (-y / u + 1.0 / totals) * mask[:, None] / rows
        d_s = -d_u * u * u
        d_q = -(d_s @ log_m.T)
        d_log_m = -(q.T @ d_s)
        d_m += np.where(m > LOG_EPS, d_log_m / np.clip(m, LOG_EPS, 1.0), 0.0)
        _backward_layers(params, adjacency, caches, q, d_q, grads)

    _backward_layers(params, reference_adjacency, ref_caches, ref_out, d_m.T, grads)
    return loss / rows, grads


def predict_similarity_rows(
    params: GnnParams,
    reference_features: np.ndarray,
    reference_adjacency: np.ndarray,
    query_features: np.ndarray,
    window: int = 5,
    eta: float = DEFAULT_ETA,
) -> np.ndarray:
    """U for every query keyframe, window by window (Q×N)."""
    reference = gnn_forward(params, (reference_features, reference_adjacency))
    rows = []
    for start, stop in query_windows(query_features.shape[0], window):
        q, _ = _forward_layers(params, query_features[start:stop], chain_adjacency(stop - start))
        rows.append(inverse_ce_multiply(q, reference.node_features.T, eta))
    return np.vstack(rows)


def train_gnn(
    params: Optional[GnnParams],
    reference_graph: EmbeddingGraph,
    query_graph: EmbeddingGraph,
    labels: np.ndarray,
    config: Optional[GnnTrainingConfig] = None,
) -> Tuple[GnnParams, GnnTrainingHistory]:
    """Full-batch momentum SGD on the row cross-entropy loss.

    One loop is the reference; the other is cut into query windows. ``labels``
    holds the IoU rows of the query keyframes against the reference keyframes.
    Without ``params`` training starts from :func:`warm_start_gnn` when
    ``config.warm_start`` is set and ``config.hidden`` is twice the embedding
    dimension, otherwise from a seeded Xavier init.
    """
    config = config or GnnTrainingConfig()
    if params is None:
        if config.warm_start and config.hidden == 2 * reference_graph.dim:
            params = warm_start_gnn(reference_graph.node_embeddings)
        else:
            dims = (reference_graph.dim, config.hidden, config.hidden, config.hidden)
            params = init_gnn(dims, seed=config.seed)
    ref_features, ref_adjacency = reference_graph.node_embeddings, reference_graph.adjacency()
    query_features = query_graph.node_embeddings
    optimizer = MomentumSgd(config.learning_rate, config.momentum, config.weight_decay)

    def evaluate(current: GnnParams) -> Tuple[float, List[np.ndarray]]:
        return gnn_loss_and_grad(
            current, ref_features, ref_adjacency, query_features, labels, config.window, config.eta
        )

    loss, grads = evaluate(params)
    history = GnnTrainingHistory(initial_loss=loss)
    logger.info(
        "GNN training started",
        reference_nodes=reference_graph.n,
        query_nodes=query_graph.n,
        initial_loss=round(loss, 6),
    )
    for step in range(1, config.steps + 1):
        params = GnnParams.from_arrays(optimizer.step(params.arrays(), grads))
        if not params.is_finite():
            raise NonFiniteLoss(step, float("nan"))
        loss, grads = evaluate(params)
        if not np.isfinite(loss):
            raise NonFiniteLoss(step, loss)
        history.losses.append(loss)
        if step % config.log_every == 0:
            log_numeric_event("gnn", "Step finished", step=step, loss=loss)

    logger.info("GNN training finished", steps=config.steps, final_loss=round(history.final_loss, 6))
    return params, history


def save_gnn(path: Union[str, Path], params: GnnParams) -> None:
    write_params(path, GNN_MAGIC, params.dims, params.arrays())


def load_gnn(path: Union[str, Path]) -> GnnParams:
    dims, values = read_params(path, GNN_MAGIC)
    if len(dims) != GNN_LAYERS + 1:
        raise ParamsFormatError(f"{path}: expected 4 layer dims, got {dims}")
    return GnnParams.from_arrays(split_flat(values, GnnParams.shapes(dims), path))

