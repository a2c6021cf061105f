"""
Tests for edge scoring, the drift loss, the bias and candidate buckets.
"""
import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from django.test import SimpleTestCase

from apps.attention.attention import topk_indices
from apps.autodiff.gradcheck import check_gradients
from apps.autodiff.tensor import Tensor
from apps.core.exceptions import ContractError
from apps.structure.graph import (
    LatentGraph,
    bucket_candidates,
    graph_bias,
    graph_drift,
    init_structure_params,
    score_edges,
    struct_loss,
)


def graph_of(scores):
    return LatentGraph(edge_scores=Tensor(np.asarray(scores, dtype=np.float64)))


class TestScoreEdges(SimpleTestCase):
    """Tests for score_edges."""

    def setUp(self):
        self.rng = np.random.default_rng(50)
        self.params = init_structure_params(self.rng, 8, 4)

    def test_identical_tokens_give_constant_matrix(self):
        h = np.tile(self.rng.normal(size=(1, 8)), (5, 1))
        scores = score_edges(Tensor(h), self.params, 2).edge_scores.data
        assert_allclose(scores, scores[0, 0], atol=1e-14)

    def test_permutation_conjugates_scores(self):
        h = self.rng.normal(size=(7, 8))
        perm = self.rng.permutation(7)
        base = score_edges(Tensor(h), self.params, 3).edge_scores.data
        permuted = score_edges(Tensor(h[perm]), self.params, 3).edge_scores.data
        assert_array_equal(permuted, base[np.ix_(perm, perm)])

    def test_matches_pairwise_loop(self):
        h = self.rng.normal(size=(10, 8))
        scores = score_edges(Tensor(h), self.params, 3).edge_scores.data
        w_q, w_k = self.params['structure.w_q'].data, self.params['structure.w_k'].data
        for i in range(10):
            for j in range(10):
                expected = (h[i] @ w_q) @ (h[j] @ w_k) / 2.0
                self.assertAlmostEqual(scores[i, j], expected, places=12)

    def test_selected_edges_are_row_topk(self):
        graph = score_edges(Tensor(self.rng.normal(size=(6, 8))), self.params, 2)
        self.assertEqual(graph.selected_edges.shape, (12, 2))
        expected = topk_indices(graph.edge_scores.data, 2)
        for i in range(6):
            self.assertEqual(set(graph.selected_edges[graph.selected_edges[:, 0] == i, 1]), set(expected[i]))


class TestStructLoss(SimpleTestCase):
    """Tests for struct_loss."""

    def setUp(self):
        self.rng = np.random.default_rng(51)

    def test_identical_graphs(self):
        scores = self.rng.normal(size=(4, 4))
        self.assertEqual(float(struct_loss([graph_of(scores)] * 3).data), 0.0)

    def test_single_iteration_is_zero(self):
        one = struct_loss([graph_of(self.rng.normal(size=(4, 4)))])
        self.assertEqual(one.shape, ())
        self.assertEqual(float(one.data), 0.0)
        self.assertEqual(float(struct_loss([]).data), 0.0)

    def test_scalar_graphs(self):
        self.assertEqual(float(struct_loss([graph_of([[1.0]]), graph_of([[3.0]])]).data), 4.0)

    def test_matches_double_loop(self):
        graphs = [self.rng.normal(size=(6, 6)) for _ in range(4)]
        expected = 0.0
        for t in range(1, 4):
            for i in range(6):
                for j in range(6):
                    expected += (graphs[t][i, j] - graphs[t - 1][i, j]) ** 2
        value = float(struct_loss([graph_of(g) for g in graphs]).data)
        self.assertLessEqual(abs(value - expected), 1e-12 * max(1.0, expected))

    def test_nonnegative(self):
        for _ in range(10):
            graphs = [graph_of(self.rng.normal(size=(3, 3))) for _ in range(3)]
            self.assertGreater(float(struct_loss(graphs).data), 0.0)

    def test_size_mismatch(self):
        with self.assertRaises(ContractError):
            struct_loss([graph_of(np.zeros((2, 2))), graph_of(np.zeros((3, 3)))])

    def test_gradient(self):
        params = init_structure_params(self.rng, 6, 3)
        h1 = Tensor(self.rng.normal(size=(5, 6)), name='h1')
        h2 = Tensor(self.rng.normal(size=(5, 6)), name='h2')
        result = check_gradients(
            'struct_loss',
            lambda: struct_loss([score_edges(h1, params, 2), score_edges(h2, params, 2, iteration=1)]),
            [h1, h2, params['structure.w_q'], params['structure.w_k']],
        )
        self.assertLessEqual(result.max_relative_error, 1e-5)


class TestGraphBias(SimpleTestCase):
    """Tests for graph_bias."""

    def setUp(self):
        self.rng = np.random.default_rng(52)

    def test_zero_lambda_disables_bias(self):
        self.assertIsNone(graph_bias(graph_of(self.rng.normal(size=(3, 3))), 0.0))

    def test_scaled_and_padded(self):
        scores = self.rng.normal(size=(3, 3))
        bias = graph_bias(graph_of(scores), 0.5, extra_columns=2).data
        assert_allclose(bias[:, :3], 0.5 * scores)
        assert_array_equal(bias[:, 3:], 0.0)

    def test_uniform_scores_leave_selection_alone(self):
        content = self.rng.normal(size=(4, 6))
        bias = graph_bias(graph_of(np.full((4, 6), 2.5)), 1.0).data
        assert_array_equal(topk_indices(content + bias, 2), topk_indices(content, 2))

    def test_bias_changes_selection_when_structure_disagrees(self):
        content = np.array([[1.0, 0.9, 0.0]])
        structure = np.array([[0.0, 0.0, 3.0]])
        before = set(topk_indices(content, 2)[0])
        after = set(topk_indices(content + graph_bias(graph_of(structure), 1.0).data, 2)[0])
        self.assertEqual(before, {0, 1})
        self.assertIn(2, after)


class TestBucketCandidates(SimpleTestCase):
    """Tests for bucket_candidates."""

    def setUp(self):
        self.rng = np.random.default_rng(53)
        self.params = init_structure_params(self.rng, 8, 4)

    def test_small_input_is_exact(self):
        candidates, mask = bucket_candidates(Tensor(self.rng.normal(size=(6, 8))), self.params, 8, k_top=4)
        for row in candidates:
            self.assertEqual(set(row.tolist()), set(range(6)))
        self.assertTrue(mask.all())

    def test_size_bound_and_validity(self):
        n, size = 100, 8
        candidates, mask = bucket_candidates(Tensor(self.rng.normal(size=(n, 8))), self.params, size, k_top=4)
        self.assertEqual(candidates.shape, (n, 3 * size))
        for i in range(n):
            chosen = candidates[i][mask[i]]
            self.assertLessEqual(chosen.size, 3 * size)
            self.assertEqual(len(set(chosen.tolist())), chosen.size)
            self.assertIn(i, chosen)
            self.assertTrue(np.all((chosen >= 0) & (chosen < n)))

    def test_deterministic(self):
        h = Tensor(self.rng.normal(size=(50, 8)))
        first = bucket_candidates(h, self.params, 8, k_top=4)
        second = bucket_candidates(h, self.params, 8, k_top=4)
        assert_array_equal(first[0], second[0])
        assert_array_equal(first[1], second[1])

    def test_bucket_smaller_than_k(self):
        with self.assertRaises(ContractError):
            bucket_candidates(Tensor(np.zeros((10, 8))), self.params, 2, k_top=4)

    def test_recall_on_clustered_embeddings(self):
        """True nearest neighbours of clustered points mostly land in the candidate set."""
        direction = self.params['structure.w_bucket'].data
        direction = direction / np.linalg.norm(direction)
        n_clusters, per_cluster, k_top = 16, 8, 4
        centres = np.outer(np.arange(n_clusters) * 10.0, direction) + self.rng.normal(size=(n_clusters, 8)) * 0.1
        h = np.repeat(centres, per_cluster, axis=0) + self.rng.normal(scale=0.3, size=(n_clusters * per_cluster, 8))
        candidates, mask = bucket_candidates(Tensor(h), self.params, per_cluster, k_top=k_top)
        distances = -np.sum((h[:, None, :] - h[None, :, :]) ** 2, axis=-1)
        truth = topk_indices(distances, k_top)
        hits = sum(len(set(truth[i]) & set(candidates[i][mask[i]].tolist())) for i in range(len(h)))
        self.assertGreaterEqual(hits / truth.size, 0.9)


class TestGraphDrift(SimpleTestCase):
    """Tests for graph_drift."""

    def setUp(self):
        self.rng = np.random.default_rng(57)

    def test_single_graph_has_no_drift(self):
        self.assertEqual(graph_drift([graph_of(self.rng.normal(size=(4, 4)))]), 0.0)

    def test_identical_graphs(self):
        scores = self.rng.normal(size=(5, 5))
        self.assertEqual(graph_drift([graph_of(scores), graph_of(scores), graph_of(scores)]), 0.0)

    def test_is_struct_loss_per_pair_and_edge(self):
        graphs = [graph_of(self.rng.normal(size=(4, 4))) for _ in range(3)]
        expected = float(struct_loss(graphs).data) / (2 * 16)
        self.assertAlmostEqual(graph_drift(graphs), expected, places=12)
