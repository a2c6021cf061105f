"""
Tests for projections, top-k selection and sparse attention.
"""
import math

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from django.test import SimpleTestCase

from apps.attention.attention import (
    AttentionConfig,
    init_attention_params,
    multi_head_attention,
    project_qkv,
    select_topk,
    sparse_attention,
)
from apps.autodiff.gradcheck import check_gradients, weighted_sum_loss
from apps.autodiff.ops import softmax_array
from apps.autodiff.tensor import Tape, Tensor, backward
from apps.core.exceptions import ConfigError, ContractError, DimensionError
from apps.sparse.activations import sparsemax_rows


def dense_reference(h, params, n_heads, scores_hook=None, activation=softmax_array):
    """Plain multi-head attention in numpy, optionally editing the score tensor."""
    p = {name: t.data for name, t in params.items()}
    n, d = h.shape
    dh = d // n_heads

    def heads(x):
        return x.reshape(n, n_heads, dh).transpose(1, 0, 2)

    q = heads(h @ p['attn.w_q'] + p['attn.b_q'])
    k = heads(h @ p['attn.w_k'] + p['attn.b_k'])
    v = heads(h @ p['attn.w_v'] + p['attn.b_v'])
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(dh)
    if scores_hook is not None:
        scores = scores_hook(scores)
    weights = activation(scores)
    context = (weights @ v).transpose(1, 0, 2).reshape(n, d)
    return context @ p['attn.w_o'] + p['attn.b_o']


class TestAttentionConfig(SimpleTestCase):
    """Tests for AttentionConfig validation."""

    def test_heads_must_divide_width(self):
        with self.assertRaises(ConfigError):
            AttentionConfig(d_model=10, n_heads=4).validate()

    def test_active_experts_bounded(self):
        with self.assertRaises(ConfigError):
            AttentionConfig(E=2, e=3).validate()

    def test_k_top_positive(self):
        with self.assertRaises(ConfigError):
            AttentionConfig(k_top=0).validate()


class TestProjectQkv(SimpleTestCase):
    """Tests for project_qkv."""

    def setUp(self):
        self.rng = np.random.default_rng(20)
        self.config = AttentionConfig(d_model=8, n_heads=2)
        self.params = init_attention_params(self.rng, 8)

    def test_zero_input(self):
        q, k, v = project_qkv(Tensor(np.zeros((5, 8))), self.params, self.config)
        for t in (q, k, v):
            assert_array_equal(t.data, 0.0)

    def test_head_shape(self):
        q, k, v = project_qkv(Tensor(self.rng.normal(size=(5, 8))), self.params, self.config)
        self.assertEqual(q.shape, (2, 5, 4))
        self.assertEqual(v.shape, (2, 5, 4))

    def test_width_mismatch(self):
        with self.assertRaises(DimensionError):
            project_qkv(Tensor(np.zeros((5, 6))), self.params, self.config)

    def test_gradient(self):
        h = Tensor(self.rng.normal(size=(5, 8)), name='h')
        w = self.rng.normal(size=(2, 5, 4))
        weights = [self.params['attn.w_q'], self.params['attn.w_v'], h]
        result = check_gradients(
            'project_qkv',
            lambda: weighted_sum_loss(project_qkv(h, self.params, self.config)[0], w)
            + weighted_sum_loss(project_qkv(h, self.params, self.config)[2], w),
            weights,
        )
        self.assertLessEqual(result.max_relative_error, 1e-5)


class TestSelectTopk(SimpleTestCase):
    """Tests for select_topk."""

    def setUp(self):
        self.rng = np.random.default_rng(21)

    def test_all_keys_when_k_covers_row(self):
        decision = select_topk(self.rng.normal(size=(3, 4)), 4)
        for row in decision.key_indices:
            self.assertEqual(set(row.tolist()), {0, 1, 2, 3})

    def test_order_statistics(self):
        decision = select_topk(np.array([[0.1, 0.9, 0.5]]), 2)
        self.assertEqual(set(decision.key_indices[0].tolist()), {1, 2})

    def test_ties_prefer_lower_index(self):
        decision = select_topk(np.array([[1.0, 2.0, 2.0, 2.0]]), 2)
        assert_array_equal(decision.key_indices[0], [1, 2])

    def test_matches_full_sort(self):
        for _ in range(200):
            n_q, n_k = self.rng.integers(1, 10, size=2)
            k_top = int(self.rng.integers(1, 12))
            scores = self.rng.normal(size=(n_q, n_k))
            decision = select_topk(scores, k_top)
            for i in range(n_q):
                expected = set(np.argsort(scores[i])[::-1][:min(k_top, n_k)].tolist())
                self.assertEqual(set(decision.key_indices[i].tolist()), expected)
                self.assertEqual(len(set(decision.key_indices[i].tolist())), min(k_top, n_k))

    def test_invalid_k(self):
        with self.assertRaises(ContractError):
            select_topk(np.zeros((2, 2)), 0)


class TestSparseAttention(SimpleTestCase):
    """Tests for sparse_attention."""

    def setUp(self):
        self.rng = np.random.default_rng(22)
        self.params = init_attention_params(self.rng, 8)
        self.h = self.rng.normal(size=(12, 8))

    def attend(self, config, h=None, **kwargs):
        h = self.h if h is None else h
        return multi_head_attention(Tensor(h), self.params, config, **kwargs)

    def test_reduces_to_dense_attention(self):
        config = AttentionConfig(d_model=8, n_heads=2, k_top=12, phi='softmax')
        out = self.attend(config).output.data
        assert_allclose(out, dense_reference(self.h, self.params, 2), atol=1e-10)

    def test_single_key_returns_its_value(self):
        params = init_attention_params(self.rng, 8)
        params['attn.w_o'].data[...] = np.eye(8)
        h = self.rng.normal(size=(1, 8))
        value = h @ params['attn.w_v'].data
        for phi in ('softmax', 'sparsemax', 'entmax15'):
            config = AttentionConfig(d_model=8, n_heads=2, k_top=4, phi=phi)
            out = multi_head_attention(Tensor(h), params, config).output.data
            assert_allclose(out, value, atol=1e-12, err_msg=phi)

    def test_topk_equals_dense_masking(self):
        config = AttentionConfig(d_model=8, n_heads=2, k_top=4, phi='sparsemax')

        def keep_top4(scores):
            threshold = np.sort(scores, axis=-1)[..., -4][..., None]
            return np.where(scores >= threshold, scores, -np.inf)

        expected = dense_reference(self.h, self.params, 2, keep_top4, lambda s: sparsemax_rows(s)[0])
        assert_allclose(self.attend(config).output.data, expected, atol=1e-10)

    def test_weights_are_distributions_within_selection(self):
        config = AttentionConfig(d_model=8, n_heads=2, k_top=5, phi='entmax15')
        result = self.attend(config)
        self.assertTrue(np.all(result.weights >= 0))
        assert_allclose(result.weights.sum(axis=-1), 1.0, atol=1e-9)
        self.assertEqual(result.key_indices.shape, (2, 12, 5))
        for head in result.supports:
            for support in head:
                self.assertLessEqual(len(support), 5)

    def test_bias_shape_checked(self):
        config = AttentionConfig(d_model=8, n_heads=2, k_top=4)
        with self.assertRaises(DimensionError):
            self.attend(config, bias=Tensor(np.zeros((12, 5))))

    def test_full_candidate_set_matches_exact_path(self):
        config = AttentionConfig(d_model=8, n_heads=2, k_top=4, phi='entmax15')
        bias = Tensor(self.rng.normal(size=(12, 12)))
        candidates = np.tile(np.arange(12), (12, 1))
        exact = self.attend(config, bias=bias).output.data
        bucketed = self.attend(config, bias=bias, candidates=candidates).output.data
        assert_allclose(bucketed, exact, atol=1e-12)

    def test_masked_query_gives_zero_row(self):
        config = AttentionConfig(d_model=8, n_heads=2, k_top=4, phi='sparsemax')
        candidates = np.tile(np.arange(6), (12, 1))
        mask = np.ones((12, 6), dtype=bool)
        mask[3] = False
        result = self.attend(config, candidates=candidates, candidate_mask=mask)
        self.assertTrue(np.all(result.empty_rows[:, 3]))
        self.assertFalse(result.empty_rows[:, 4].any())
        assert_allclose(result.output.data[3], self.params['attn.b_o'].data)
        self.assertTrue(np.all(np.isfinite(result.output.data)))

    def test_gradient_through_selection(self):
        config = AttentionConfig(d_model=8, n_heads=2, k_top=3, phi='softmax')
        h = Tensor(self.rng.normal(size=(5, 8)), name='h')
        w = self.rng.normal(size=(5, 8))
        tensors = [h, self.params['attn.w_q'], self.params['attn.w_k'], self.params['attn.w_o']]
        result = check_gradients(
            'sparse_attention',
            lambda: weighted_sum_loss(multi_head_attention(h, self.params, config).output, w),
            tensors,
        )
        self.assertLessEqual(result.max_relative_error, 1e-5)

    def test_unselected_keys_get_no_value_gradient(self):
        config = AttentionConfig(d_model=8, n_heads=1, k_top=1, phi='softmax')
        q, k, v = project_qkv(Tensor(self.h), self.params, config)
        v = Tensor(v.data, requires_grad=True)
        with Tape():
            result = sparse_attention(q, k, v, self.params, config)
            backward(result.output.sum())
        chosen = set(result.key_indices.reshape(-1).tolist())
        for j in set(range(12)) - chosen:
            assert_array_equal(v.grad[0, j], 0.0)
