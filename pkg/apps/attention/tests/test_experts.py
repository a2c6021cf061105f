"""
Tests for expert routing, the mixture feed-forward and the balance loss.
"""
import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from django.test import SimpleTestCase

from apps.attention.attention import AttentionConfig, RoutingDecision
from apps.attention.experts import (
    expert_ffn,
    init_expert_params,
    load_balance_loss,
    moe_ffn,
    route_experts,
)
from apps.autodiff.gradcheck import check_gradients, weighted_sum_loss
from apps.autodiff.tensor import Tape, Tensor, backward


class TestRouteExperts(SimpleTestCase):
    """Tests for route_experts."""

    def setUp(self):
        self.rng = np.random.default_rng(30)
        self.params = init_expert_params(self.rng, 8, 4)
        self.h = Tensor(self.rng.normal(size=(6, 8)))

    def test_all_experts_kept(self):
        decision = route_experts(self.h, self.params, AttentionConfig(d_model=8, n_heads=2, E=4, e=4))
        for row, gates, probs in zip(decision.expert_indices, decision.expert_gates.data, decision.router_probs.data):
            self.assertEqual(set(row.tolist()), {0, 1, 2, 3})
            assert_allclose(gates, probs[row], atol=1e-15)

    def test_top1_is_argmax(self):
        decision = route_experts(self.h, self.params, AttentionConfig(d_model=8, n_heads=2, E=4, e=1))
        assert_array_equal(decision.expert_indices[:, 0], decision.router_probs.data.argmax(axis=1))
        assert_array_equal(decision.expert_gates.data, 1.0)

    def test_cardinality_and_normalisation(self):
        params = init_expert_params(self.rng, 8, 8)
        decision = route_experts(
            Tensor(self.rng.normal(size=(1000, 8))), params, AttentionConfig(d_model=8, n_heads=2, E=8, e=2)
        )
        self.assertEqual(decision.expert_indices.shape, (1000, 2))
        self.assertTrue(np.all(decision.expert_indices[:, 0] != decision.expert_indices[:, 1]))
        self.assertTrue(np.all(np.abs(decision.expert_gates.data.sum(axis=1) - 1.0) <= 1e-12))
        self.assertTrue(np.all(decision.expert_gates.data >= 0))


class TestMoeFfn(SimpleTestCase):
    """Tests for moe_ffn."""

    def setUp(self):
        self.rng = np.random.default_rng(31)
        self.config = AttentionConfig(d_model=8, n_heads=2, E=4, e=2)
        self.params = init_expert_params(self.rng, 8, 4)
        self.h = Tensor(self.rng.normal(size=(7, 8)))

    def test_identical_experts_ignore_routing(self):
        for j in range(1, 4):
            for part in ('w_in', 'b_in', 'w_out', 'b_out'):
                self.params[f'moe.expert{j}.{part}'].data[...] = self.params[f'moe.expert0.{part}'].data
        decision = route_experts(self.h, self.params, self.config)
        out = moe_ffn(self.h, decision, self.params)
        assert_allclose(out.data, expert_ffn(self.h, self.params, 0).data, atol=1e-12)

    def test_dense_mixture_when_all_experts_active(self):
        config = AttentionConfig(d_model=8, n_heads=2, E=4, e=4)
        decision = route_experts(self.h, self.params, config)
        probs = decision.router_probs.data
        expected = sum(probs[:, [j]] * expert_ffn(self.h, self.params, j).data for j in range(4))
        assert_allclose(moe_ffn(self.h, decision, self.params).data, expected, atol=1e-12)

    def test_unselected_expert_gradient_is_zero(self):
        probs = Tensor(np.full((7, 4), 0.25))
        decision = RoutingDecision(
            expert_indices=np.zeros((7, 1), dtype=np.int64),
            expert_gates=Tensor(np.ones((7, 1))),
            router_probs=probs,
        )
        params = list(self.params.values())
        with Tape():
            backward(moe_ffn(self.h, decision, self.params).sum(), params=params)
        for j in (1, 2, 3):
            for part in ('w_in', 'b_in', 'w_out', 'b_out'):
                assert_array_equal(self.params[f'moe.expert{j}.{part}'].grad, 0.0)
        self.assertGreater(np.abs(self.params['moe.expert0.w_in'].grad).sum(), 0.0)

    def test_gradient(self):
        h = Tensor(self.h.data, name='h')
        w = self.rng.normal(size=(7, 8))
        tensors = [h, self.params['moe.router'], self.params['moe.expert1.w_in'], self.params['moe.expert2.b_out']]

        def build():
            decision = route_experts(h, self.params, self.config)
            return weighted_sum_loss(moe_ffn(h, decision, self.params), w)

        result = check_gradients('moe_ffn', build, tensors)
        self.assertLessEqual(result.max_relative_error, 1e-5)


class TestLoadBalanceLoss(SimpleTestCase):
    """Tests for load_balance_loss."""

    def test_uniform_routing(self):
        decision = RoutingDecision(
            expert_indices=np.array([[0, 1], [2, 3]] * 4),
            expert_gates=Tensor(np.full((8, 2), 0.5)),
            router_probs=Tensor(np.full((8, 4), 0.25)),
        )
        self.assertAlmostEqual(float(load_balance_loss(decision).data), 1.0, places=12)

    def test_collapsed_routing(self):
        probs = np.zeros((5, 6))
        probs[:, 0] = 1.0
        decision = RoutingDecision(
            expert_indices=np.zeros((5, 1), dtype=np.int64),
            expert_gates=Tensor(np.ones((5, 1))),
            router_probs=Tensor(probs),
        )
        self.assertAlmostEqual(float(load_balance_loss(decision).data), 6.0, places=12)

    def test_decreases_when_optimised(self):
        """Gradient steps on the balance term flatten a skewed router; coefficient 0 leaves it as is."""
        rng = np.random.default_rng(32)
        h = Tensor(rng.normal(size=(64, 8)))
        config = AttentionConfig(d_model=8, n_heads=2, E=4, e=1)

        def run(coefficient):
            params = init_expert_params(np.random.default_rng(33), 8, 4)
            router = params['moe.router']
            router.data[:, 0] += 1.5
            for _ in range(30):
                router.grad = None
                with Tape():
                    loss = load_balance_loss(route_experts(h, params, config)) * coefficient
                    backward(loss, params=[router])
                router.data -= 0.5 * router.grad
            return float(load_balance_loss(route_experts(h, params, config)).data)

        self.assertLess(run(1.0), run(0.0))

    def test_gradient(self):
        rng = np.random.default_rng(34)
        params = init_expert_params(rng, 8, 4)
        h = Tensor(rng.normal(size=(6, 8)))
        config = AttentionConfig(d_model=8, n_heads=2, E=4, e=2)
        result = check_gradients(
            'load_balance_loss',
            lambda: load_balance_loss(route_experts(h, params, config)),
            [params['moe.router']],
        )
        self.assertLessEqual(result.max_relative_error, 1e-5)
