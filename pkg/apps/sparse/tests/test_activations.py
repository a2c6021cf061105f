"""
Tests for sparsemax, entmax-1.5 and the row-wise activation op.
"""
import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from django.test import SimpleTestCase

from apps.autodiff.gradcheck import check_gradients, weighted_sum_loss
from apps.autodiff.tensor import Tensor
from apps.core.exceptions import ContractError, DimensionError, NumericError
from apps.core.utils import relative_error
from apps.sparse.activations import (
    activate_rows,
    entmax15,
    entmax15_jvp,
    entmax15_rows,
    softmax,
    sparsemax,
    sparsemax_jvp,
    sparsemax_rows,
)
from apps.sparse.oracle import project_simplex_bruteforce

FD_STEP = 1e-6


def stable_point(rng, mapping, p, margin=1e-3, scale=2.0):
    """Draw a score vector whose every entry sits at least `margin` away from the threshold."""
    while True:
        z = rng.normal(scale=scale, size=p)
        if mapping is softmax:
            return z
        dist = mapping(z)
        pivot = z / 2.0 if mapping is entmax15 else z
        if np.all(np.abs(pivot - dist.threshold_tau) > margin):
            return z


def directional_derivative(mapping, z, u, step=FD_STEP):
    return (mapping(z + step * u).probs - mapping(z - step * u).probs) / (2 * step)


class TestSparsemax(SimpleTestCase):
    """Tests for sparsemax."""

    def setUp(self):
        self.rng = np.random.default_rng(10)

    def test_constant_vector_is_uniform(self):
        for c in (-3.0, 0.0, 7.5):
            assert_allclose(sparsemax([c, c, c]).probs, [1 / 3] * 3, atol=1e-15)

    def test_two_dimensional_vertex(self):
        dist = sparsemax([2.0, 0.0])
        assert_allclose(dist.probs, [1.0, 0.0])
        assert_array_equal(dist.support, [0])
        self.assertAlmostEqual(dist.threshold_tau, 1.0)

    def test_empty_vector(self):
        with self.assertRaises(ContractError):
            sparsemax([])

    def test_threshold_definition(self):
        z = self.rng.normal(size=9)
        dist = sparsemax(z)
        assert_allclose(dist.probs, np.maximum(z - dist.threshold_tau, 0.0), atol=1e-15)
        self.assertAlmostEqual(dist.probs.sum(), 1.0, delta=1e-9)

    def test_matches_support_enumeration_oracle(self):
        for _ in range(1000):
            p = int(self.rng.integers(1, 17))
            z = self.rng.normal(scale=float(self.rng.uniform(0.1, 3.0)), size=p)
            assert_allclose(sparsemax(z).probs, project_simplex_bruteforce(z), atol=1e-8)

    def test_masked_entries(self):
        probs, tau = sparsemax_rows(np.array([[0.5, -np.inf, 0.2], [-np.inf, -np.inf, -np.inf]]))
        self.assertEqual(probs[0, 1], 0.0)
        self.assertAlmostEqual(probs[0].sum(), 1.0)
        assert_array_equal(probs[1], 0.0)
        self.assertTrue(np.isinf(tau[1]))

    def test_nan_input(self):
        with self.assertRaises(NumericError):
            sparsemax([0.0, np.nan])


class TestSparsemaxJvp(SimpleTestCase):
    """Tests for sparsemax_jvp."""

    def setUp(self):
        self.rng = np.random.default_rng(11)

    def test_uniform_upstream_on_full_support(self):
        dist = sparsemax([0.1, 0.0, 0.05])
        self.assertEqual(dist.support.size, 3)
        assert_allclose(sparsemax_jvp(dist, np.ones(3)), 0.0, atol=1e-15)

    def test_singleton_support(self):
        dist = sparsemax([5.0, 0.0, -1.0])
        assert_array_equal(sparsemax_jvp(dist, self.rng.normal(size=3)), 0.0)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            sparsemax_jvp(sparsemax([1.0, 0.0]), np.ones(3))

    def test_matches_finite_differences(self):
        for _ in range(20):
            z = stable_point(self.rng, sparsemax, 8)
            u = self.rng.normal(size=8)
            numeric = directional_derivative(sparsemax, z, u)
            self.assertLessEqual(relative_error(sparsemax_jvp(sparsemax(z), u), numeric), 1e-6)


class TestEntmax15(SimpleTestCase):
    """Tests for entmax15."""

    def setUp(self):
        self.rng = np.random.default_rng(12)

    def test_symmetric_pair(self):
        assert_allclose(entmax15([0.7, 0.7]).probs, [0.5, 0.5], atol=1e-12)

    def test_large_margin_vertex(self):
        dist = entmax15([5.0, 0.0])
        assert_array_equal(dist.support, [0])
        self.assertAlmostEqual(dist.probs.sum(), 1.0, delta=1e-9)

    def test_sums_to_one(self):
        probs, _ = entmax15_rows(self.rng.normal(scale=4.0, size=(200, 12)))
        self.assertTrue(np.all(np.abs(probs.sum(axis=-1) - 1.0) <= 1e-9))
        self.assertTrue(np.all(probs >= 0))

    def test_support_contains_sparsemax_support(self):
        for _ in range(500):
            z = self.rng.normal(scale=float(self.rng.uniform(0.5, 4.0)), size=10)
            ent = entmax15(z).probs > 0
            sparse = sparsemax(z).probs > 0
            self.assertTrue(np.all(ent[sparse]))
            if z.max() - z.min() >= 4:
                self.assertGreaterEqual(np.sum(~ent), np.sum(softmax(z).probs == 0))

    def test_uniform_upstream(self):
        dist = entmax15(self.rng.normal(size=6))
        assert_allclose(entmax15_jvp(dist, np.full(6, 2.5)), 0.0, atol=1e-12)

    def test_singleton_support_jvp(self):
        dist = entmax15([9.0, 0.0, 1.0])
        assert_allclose(entmax15_jvp(dist, self.rng.normal(size=3)), 0.0, atol=1e-12)

    def test_jvp_matches_finite_differences(self):
        for _ in range(20):
            z = stable_point(self.rng, entmax15, 8)
            u = self.rng.normal(size=8)
            numeric = directional_derivative(entmax15, z, u)
            self.assertLessEqual(relative_error(entmax15_jvp(entmax15(z), u), numeric), 1e-5)


class TestMappingProperties(SimpleTestCase):
    """Shared properties of sparsemax and entmax15."""

    def setUp(self):
        self.rng = np.random.default_rng(13)
        self.mappings = {'sparsemax': sparsemax, 'entmax15': entmax15}

    def test_shift_invariance(self):
        for name, mapping in self.mappings.items():
            for _ in range(50):
                z = self.rng.normal(size=7)
                c = float(self.rng.normal(scale=10.0))
                assert_allclose(mapping(z + c).probs, mapping(z).probs, atol=1e-10, err_msg=name)

    def test_argmax_preserved(self):
        for name, mapping in self.mappings.items():
            for _ in range(100):
                z = self.rng.normal(size=9)
                self.assertEqual(np.argmax(mapping(z).probs), np.argmax(z), name)

    def test_monotone_in_own_score(self):
        for name, mapping in self.mappings.items():
            for _ in range(50):
                z = self.rng.normal(size=6)
                i = int(self.rng.integers(6))
                bumped = z.copy()
                bumped[i] += float(self.rng.uniform(0.0, 2.0))
                self.assertGreaterEqual(mapping(bumped).probs[i] + 1e-12, mapping(z).probs[i], name)

    def test_permutation_equivariance(self):
        for name, mapping in self.mappings.items():
            z = self.rng.normal(size=8)
            perm = self.rng.permutation(8)
            assert_allclose(mapping(z[perm]).probs, mapping(z).probs[perm], atol=1e-12, err_msg=name)


class TestActivateRows(SimpleTestCase):
    """Tests for the differentiable row activation."""

    def setUp(self):
        self.rng = np.random.default_rng(14)

    def test_unknown_phi(self):
        with self.assertRaises(ContractError):
            activate_rows(Tensor(np.zeros((1, 2))), 'relu')

    def test_all_masked_row_is_zero(self):
        x = Tensor(np.array([[-np.inf, -np.inf], [0.0, 1.0]]))
        for phi in ('softmax', 'sparsemax', 'entmax15'):
            out = activate_rows(x, phi).data
            assert_array_equal(out[0], [0.0, 0.0])
            self.assertAlmostEqual(out[1].sum(), 1.0)

    def test_gradients(self):
        for phi, mapping in (('softmax', softmax), ('sparsemax', sparsemax), ('entmax15', entmax15)):
            rows = np.stack([stable_point(self.rng, mapping, 6) for _ in range(4)])
            x = Tensor(rows, name='scores')
            w = self.rng.normal(size=rows.shape)
            result = check_gradients(phi, lambda phi=phi: weighted_sum_loss(activate_rows(x, phi), w), [x])
            self.assertLessEqual(result.max_relative_error, 1e-5, phi)
