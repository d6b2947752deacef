import math

import numpy as np
import pytest

from reloc_kit.core.errors import DimMismatch, EmptyWindow, NonPositiveEta
from reloc_kit.models.graph import GnnParams, GnnTrainingConfig, ReferenceGraph, SageLayerParams
from reloc_kit.services.embedding import build_embedding_graph, chain_edges
from reloc_kit.services.graph_query import (
    LOG_EPS,
    chain_adjacency,
    detect_loop_closures,
    gnn_forward,
    gnn_loss_and_grad,
    init_gnn,
    inverse_ce_multiply,
    load_gnn,
    mean_operator,
    predict_similarity_rows,
    query_subgraph,
    query_windows,
    sage_layer,
    save_gnn,
    train_gnn,
    warm_start_gnn,
)
from tests.helpers import binary_codes, relative_error, sample_indices


def self_query_params(dim: int = 16) -> GnnParams:
    """Near-identity message passing whose sigmoid output sharpens binary codes."""
    eye = np.eye(dim)
    return GnnParams(
        (
            SageLayerParams(2.0 * eye, 0.05 * eye, np.zeros(dim)),
            SageLayerParams(2.0 * eye, 0.05 * eye, np.zeros(dim)),
            SageLayerParams(3.0 * eye, np.zeros((dim, dim)), np.full(dim, -6.0)),
        )
    )


@pytest.mark.unit
class TestSageLayer:
    """Mean-aggregator message passing."""

    def test_mean_operator_rows(self):
        """Rows average the neighbours; isolated nodes aggregate nothing."""
        adj = np.zeros((4, 4))
        adj[0, 1] = adj[1, 0] = adj[1, 2] = adj[2, 1] = 1.0
        op = mean_operator(adj)
        np.testing.assert_array_equal(op[1], [0.5, 0.0, 0.5, 0.0])
        np.testing.assert_array_equal(op[3], np.zeros(4))

    def test_layer_formula(self, rng):
        """act(h·W_self + mean_nbr(h)·W_nbr + b) on a 3-node chain."""
        h = rng.normal(size=(3, 2))
        w_self, w_nbr, bias = rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), rng.normal(size=2)
        out = sage_layer(h, chain_adjacency(3), w_self, w_nbr, bias, "identity")
        expected = h[1] @ w_self + 0.5 * (h[0] + h[2]) @ w_nbr + bias
        np.testing.assert_allclose(out[1], expected, atol=1e-12)

    def test_relu_clamps(self):
        """Negative pre-activations become zero."""
        out = sage_layer(
            np.array([[1.0]]), np.zeros((1, 1)), np.array([[-1.0]]), np.array([[0.0]]), np.zeros(1)
        )
        assert out[0, 0] == 0.0

    def test_adjacency_shape_checked(self, rng):
        """The adjacency must be N×N."""
        with pytest.raises(DimMismatch):
            sage_layer(rng.normal(size=(3, 2)), np.zeros((2, 2)), np.eye(2), np.eye(2), np.zeros(2))

    def test_forward_accepts_embedding_graph(self, rng):
        """An embedding graph and its (features, adjacency) pair give the same output."""
        codes = rng.random((5, 4))
        params = init_gnn((4, 6, 6, 3), seed=1)
        graph = build_embedding_graph(codes, chain_edges(5))
        a = gnn_forward(params, graph).node_features
        b = gnn_forward(params, (codes, chain_adjacency(5))).node_features
        np.testing.assert_array_equal(a, b)
        assert a.shape == (5, 3)
        assert np.all((a > 0.0) & (a < 1.0))

    def test_permutation_equivariance(self, rng):
        """Relabelling the nodes permutes the outputs the same way."""
        params = init_gnn((5, 6, 6, 4), seed=2)
        features = rng.random((7, 5))
        adjacency = np.triu((rng.random((7, 7)) < 0.4).astype(float), k=1)
        adjacency = adjacency + adjacency.T
        order = rng.permutation(7)
        out = gnn_forward(params, (features, adjacency)).node_features
        permuted = gnn_forward(params, (features[order], adjacency[np.ix_(order, order)])).node_features
        np.testing.assert_allclose(permuted, out[order], rtol=0, atol=1e-12)


@pytest.mark.unit
class TestInverseCrossEntropy:
    """U_ij = 1 / (eta − Σ_k q_ik · log m_kj)."""

    def test_zero_query_row(self):
        """An all-zero query row has zero cross-entropy."""
        u = inverse_ce_multiply(np.zeros((1, 3)), np.full((3, 2), 0.3), eta=0.01)
        np.testing.assert_array_equal(u, [[100.0, 100.0]])

    def test_perfect_reference_column(self, rng):
        """A column of ones scores 1/eta whatever the query."""
        m = np.column_stack([np.ones(4), rng.uniform(0.1, 0.9, 4)])
        u = inverse_ce_multiply(rng.random((3, 4)), m, eta=0.5)
        np.testing.assert_array_equal(u[:, 0], np.full(3, 2.0))
        assert np.all(u[:, 1] < 2.0)

    def test_hand_computed(self):
        """2×2 case against the closed form."""
        q = np.array([[1.0, 0.0], [0.5, 0.5]])
        m = np.array([[0.5, 0.25], [1.0, 0.5]])
        ln2, ln4 = math.log(2.0), math.log(4.0)
        expected = np.array(
            [
                [1.0 / (0.1 + ln2), 1.0 / (0.1 + ln4)],
                [1.0 / (0.1 + 0.5 * ln2), 1.0 / (0.1 + 0.5 * ln4 + 0.5 * ln2)],
            ]
        )
        np.testing.assert_allclose(inverse_ce_multiply(q, m, eta=0.1), expected, rtol=0, atol=1e-12)

    def test_zero_reference_is_clamped(self):
        """log 0 is replaced by log 1e-7."""
        u = inverse_ce_multiply(np.array([[1.0]]), np.array([[0.0]]), eta=1.0)
        assert u[0, 0] == pytest.approx(1.0 / (1.0 - math.log(LOG_EPS)))

    @pytest.mark.parametrize("eta", [0.0, -1.0])
    def test_eta_must_be_positive(self, eta):
        """eta is the score ceiling's reciprocal."""
        with pytest.raises(NonPositiveEta):
            inverse_ce_multiply(np.zeros((1, 2)), np.ones((2, 2)), eta=eta)

    def test_inner_dimension_checked(self):
        """q columns must match m rows."""
        with pytest.raises(DimMismatch):
            inverse_ce_multiply(np.zeros((1, 3)), np.ones((2, 2)))

    def test_monotone_in_reference(self, rng):
        """Raising one reference entry under a positive query weight raises the score."""
        q = rng.uniform(0.1, 1.0, size=(1, 4))
        base = rng.uniform(0.05, 0.5, size=(4, 1))
        scores = []
        for value in np.linspace(0.05, 1.0, 20):
            m = base.copy()
            m[2, 0] = value
            scores.append(inverse_ce_multiply(q, m, eta=0.01)[0, 0])
        assert np.all(np.diff(scores) > 0)


@pytest.mark.unit
class TestQuery:
    """Windowed sub-graph queries."""

    def test_windows_cover_sequence(self):
        """Non-overlapping windows; the last one may be short."""
        assert query_windows(12, 5) == [(0, 5), (5, 10), (10, 12)]

    def test_window_must_be_positive(self):
        """Zero-length windows are rejected."""
        with pytest.raises(EmptyWindow):
            query_windows(10, 0)

    def test_empty_query(self):
        """A query needs at least one keyframe."""
        reference = ReferenceGraph(np.full((3, 16), 0.5))
        with pytest.raises(EmptyWindow):
            query_subgraph(reference, np.zeros((0, 16)), self_query_params())

    def test_self_query_recovers_identity(self):
        """Every window of a loop queried against itself matches its own keyframes."""
        codes = binary_codes(40)
        params = self_query_params()
        reference = gnn_forward(params, (codes, chain_adjacency(40)))
        for start in range(36):
            result = query_subgraph(reference, codes[start : start + 5], params, query_offset=start)
            np.testing.assert_array_equal(result.best_reference, np.arange(start, start + 5))

    def test_percentile_keeps_at_least_one_match(self, rng):
        """The row maximum is never below the window's percentile."""
        params = init_gnn((4, 4, 4, 4), seed=2)
        reference = gnn_forward(params, (rng.random((8, 4)), chain_adjacency(8)))
        result = query_subgraph(reference, rng.random((3, 4)), params, percentile=99.0)
        assert len(result.matches) >= 1
        scores = [match.score for match in result.matches]
        assert scores == sorted(scores, reverse=True)

    def test_absolute_threshold(self, rng):
        """An unreachable threshold yields no matches; offsets shift query indices."""
        params = init_gnn((4, 4, 4, 4), seed=2)
        reference = gnn_forward(params, (rng.random((8, 4)), chain_adjacency(8)))
        query = rng.random((3, 4))
        assert query_subgraph(reference, query, params, threshold=np.inf).matches == ()
        result = query_subgraph(reference, query, params, threshold=0.0, query_offset=10)
        assert sorted(match.query_index for match in result.matches) == [10, 11, 12]

    def test_loop_closures_best_per_keyframe(self):
        """Querying a loop against itself closes every keyframe onto itself."""
        codes = binary_codes(40)
        params = self_query_params()
        reference = gnn_forward(params, (codes, chain_adjacency(40)))
        matches = detect_loop_closures(reference, codes, params, window=5)
        assert len(matches) == 40
        assert all(match.query_index == match.reference_index for match in matches)

    def test_predicted_rows_shape(self, rng):
        """One row per query keyframe, one column per reference keyframe."""
        params = init_gnn((4, 4, 4, 4), seed=0)
        rows = predict_similarity_rows(params, rng.random((6, 4)), chain_adjacency(6), rng.random((7, 4)), 3)
        assert rows.shape == (7, 6)


@pytest.mark.unit
class TestGnnGradient:
    """Backpropagation through both graphs and the inverse cross-entropy."""

    def test_matches_central_differences(self, rng):
        """Sampled entries of every parameter array agree to 1e-4 relative error."""
        params = init_gnn((3, 4, 4, 3), seed=5)
        ref_features = rng.random((6, 3))
        ref_adj = chain_adjacency(6)
        query_features = rng.random((4, 3))
        labels = rng.random((4, 6))
        labels[2] = 0.0

        def loss_at(arrays):
            loss, _ = gnn_loss_and_grad(
                GnnParams.from_arrays(arrays), ref_features, ref_adj, query_features, labels, 2, 0.1
            )
            return loss

        _, grads = gnn_loss_and_grad(params, ref_features, ref_adj, query_features, labels, 2, 0.1)
        eps = 1e-6
        for index, array in enumerate(params.arrays()):
            analytic, numeric = [], []
            for position in sample_indices(rng, array.shape, 4):
                plus = [a.copy() for a in params.arrays()]
                minus = [a.copy() for a in params.arrays()]
                plus[index][position] += eps
                minus[index][position] -= eps
                analytic.append(grads[index][position])
                numeric.append((loss_at(plus) - loss_at(minus)) / (2 * eps))
            assert relative_error(np.array(analytic), np.array(numeric)) < 1e-4

    def test_unlabelled_rows_contribute_nothing(self, rng):
        """All-zero label rows give zero loss and zero gradient."""
        params = init_gnn((3, 4, 4, 3), seed=5)
        loss, grads = gnn_loss_and_grad(
            params, rng.random((6, 3)), chain_adjacency(6), rng.random((4, 3)), np.zeros((4, 6))
        )
        assert loss == 0.0
        assert all(not np.any(grad) for grad in grads)

    def test_labels_equal_to_predictions_give_no_gradient(self, rng):
        """When the label rows are the predicted U rows the loss is stationary."""
        params = init_gnn((3, 4, 4, 3), seed=6)
        ref_features, ref_adj = rng.random((6, 3)), chain_adjacency(6)
        query_features = rng.random((5, 3))
        labels = predict_similarity_rows(params, ref_features, ref_adj, query_features, 2, 0.1)
        _, grads = gnn_loss_and_grad(params, ref_features, ref_adj, query_features, labels, 2, 0.1)
        norm = math.sqrt(sum(float(np.sum(grad * grad)) for grad in grads))
        assert norm < 1e-8

    def test_label_shape_checked(self, rng):
        """Labels are query × reference."""
        with pytest.raises(DimMismatch):
            gnn_loss_and_grad(
                init_gnn((3, 4, 4, 3)), rng.random((6, 3)), chain_adjacency(6), rng.random((4, 3)), np.ones((6, 4))
            )


@pytest.mark.unit
class TestGnnTraining:
    """Full-batch training and parameter files."""

    def test_training_lowers_loss(self, rng):
        """Noisy revisits of a coded loop learn to score their own keyframes highest."""
        codes = binary_codes(10)
        reference = build_embedding_graph(codes, chain_edges(10))
        query = build_embedding_graph(codes + rng.normal(scale=0.05, size=codes.shape), chain_edges(10))
        config = GnnTrainingConfig(steps=40, learning_rate=1e-3, eta=0.1, window=5, seed=3)
        params, history = train_gnn(None, reference, query, np.eye(10), config)
        assert params.dims == [16, 32, 32, 32]
        assert len(history.losses) == 40
        assert history.final_loss < history.initial_loss
        u = predict_similarity_rows(
            params, reference.node_embeddings, reference.adjacency(), query.node_embeddings, 5, 0.1
        )
        np.testing.assert_array_equal(np.argmax(u, axis=1), np.arange(10))

    def test_xavier_init_when_width_is_not_doubled(self):
        """A hidden width other than 2·D falls back to the seeded Xavier init."""
        codes = binary_codes(6)
        graph = build_embedding_graph(codes, chain_edges(6))
        config = GnnTrainingConfig(steps=1, hidden=8, seed=4)
        params, _ = train_gnn(None, graph, graph, np.eye(6), config)
        assert params.dims == [16, 8, 8, 8]
        assert np.any(params.layers[0].w_nbr != 0.0)

    def test_warm_start_layout(self):
        """D → 2D → 2D → 2D with zero neighbour weights and standardised first layer."""
        codes = binary_codes(10)
        params = warm_start_gnn(codes)
        assert params.dims == [16, 32, 32, 32]
        for layer in params.layers:
            assert not np.any(layer.w_nbr)
        spread = codes.std(axis=0)
        first = params.layers[0]
        for dim in range(16):
            if spread[dim] > 0:
                assert first.w_self[dim, dim] == pytest.approx(1.0 / spread[dim])
                assert first.w_self[dim, 16 + dim] == pytest.approx(-1.0 / spread[dim])
            else:
                assert first.w_self[dim, dim] == 0.0

    def test_warm_start_scores_each_keyframe_against_itself(self):
        """Before any training a loop queried against itself recovers the identity."""
        codes = binary_codes(10)
        params = warm_start_gnn(codes)
        u = predict_similarity_rows(params, codes, chain_adjacency(10), codes, 5, 1e-3)
        np.testing.assert_array_equal(np.argmax(u, axis=1), np.arange(10))

    def test_save_load_round_trip(self, tmp_path):
        """Dims come from the header; weights survive as float32."""
        params = init_gnn((16, 8, 8, 4), seed=7)
        save_gnn(tmp_path / "gnn.bin", params)
        loaded = load_gnn(tmp_path / "gnn.bin")
        assert loaded.dims == [16, 8, 8, 4]
        for a, b in zip(loaded.arrays(), params.arrays()):
            np.testing.assert_array_equal(a, b.astype(np.float32).astype(np.float64))

    def test_zero_params_give_constant_output(self):
        """With zero weights every node outputs sigmoid(0)."""
        out = gnn_forward(GnnParams.zeros((4, 4, 4, 4)), (np.ones((3, 4)), chain_adjacency(3)))
        np.testing.assert_array_equal(out.node_features, np.full((3, 4), 0.5))
