import unittest

import numpy as np
from hypothesis import given, settings, strategies as st

from app.core.errors import DimensionMismatch, InvalidParam, TooLarge
from app.services.dataset import FederatedDataset
from app.services.lloyd import (
    brute_force_global,
    centroids,
    cost_F,
    cost_H,
    decode_assignments,
    global_minima,
    is_lloyd_minimum,
    local_baseline,
    lloyd_run,
)

FOUR = FederatedDataset.from_scalars([[0, 1], [10, 11]])


class TestCosts(unittest.TestCase):
    def test_cost_F(self):
        self.assertEqual(cost_F([[0.5], [10.5]], FOUR), 1.0)
        self.assertEqual(cost_F([[3.0], [-4.0]], FederatedDataset.from_scalars([[0.0]])), 9.0)

    def test_cost_F_zero_at_data(self):
        self.assertEqual(cost_F([[0.0], [1.0], [10.0], [11.0]], FOUR), 0.0)

    def test_cost_H(self):
        d = FederatedDataset.from_scalars([[0, 1]])
        self.assertEqual(cost_H([[0.0], [1.0]], [1, 1], d), 1.0)
        self.assertEqual(cost_H([[0.5], [10.5]], [0, 0, 1, 1], FOUR), 1.0)

    def test_cost_H_at_nearest_equals_F(self):
        x = np.array([[2.0], [9.0]])
        self.assertEqual(cost_H(x, [0, 0, 1, 1], FOUR), cost_F(x, FOUR))

    def test_shape_checks(self):
        with self.assertRaises(DimensionMismatch):
            cost_H([[0.0], [1.0]], [0, 1], FOUR)
        with self.assertRaises(DimensionMismatch):
            cost_F([[0.0, 1.0]], FOUR)


class TestLloydRun(unittest.TestCase):
    def test_hand_trace(self):
        result = lloyd_run(FOUR, 2, [[0.0], [10.0]])
        np.testing.assert_allclose(result.heads, [[0.5], [10.5]])
        self.assertEqual(result.partition.tolist(), [0, 0, 1, 1])
        self.assertEqual(result.cost, 1.0)

    def test_fixed_point_init(self):
        result = lloyd_run(FOUR, 2, [[0.5], [10.5]])
        self.assertEqual(result.iters, 1)
        np.testing.assert_array_equal(result.heads, [[0.5], [10.5]])

    def test_heads_on_points(self):
        d = FederatedDataset.from_scalars([[0, 1]])
        result = lloyd_run(d, 2, [[0.0], [1.0]])
        self.assertEqual(result.cost, 0.0)

    def test_needs_k_distinct(self):
        with self.assertRaises(InvalidParam):
            lloyd_run(FederatedDataset.from_scalars([[0, 0, 0]]), 2, [[0.0], [1.0]])

    @given(seed=st.integers(0, 10_000), K=st.integers(2, 4))
    @settings(deadline=None, derandomize=True, max_examples=30)
    def test_cost_never_increases(self, seed, K):
        rng = np.random.default_rng(seed)
        d = FederatedDataset.from_agents([rng.normal(size=(12, 2)) * 5.0], 2)
        init = d.points[rng.choice(d.N, size=K, replace=False)]
        result = lloyd_run(d, K, init)
        for i, (before, reassigned, updated) in enumerate(result.cost_trace):
            if i:
                self.assertLessEqual(reassigned, before + 1e-9)
            self.assertLessEqual(updated, reassigned + 1e-9)
        self.assertTrue(is_lloyd_minimum(result.heads, result.partition, d, 1e-9))


class TestLloydMinimum(unittest.TestCase):
    def test_centroid_pair_passes(self):
        self.assertTrue(is_lloyd_minimum([[0.5], [10.5]], [0, 0, 1, 1], FOUR, 1e-12))

    def test_non_centroid_fails(self):
        self.assertFalse(is_lloyd_minimum([[0.0], [10.5]], [0, 0, 1, 1], FOUR, 1e-12))

    def test_empty_cluster_is_vacuous(self):
        d = FederatedDataset.from_scalars([[0, 1]])
        self.assertTrue(is_lloyd_minimum([[0.5], [100.0]], [0, 0], d, 1e-12))

    def test_placeholder_head_of_empty_cluster(self):
        heads = [[0.5], [10.5], [0.6]]
        # point 1 is nearer the empty cluster's head than its own centroid
        self.assertFalse(is_lloyd_minimum(heads, [0, 0, 1, 1], FOUR, 1e-12))
        self.assertTrue(is_lloyd_minimum(heads, [0, 0, 1, 1], FOUR, 1e-12, ignore_empty=True))

    def test_centroids_keep_fallback(self):
        z = centroids([0, 0, 0, 0], FOUR, [[0.0], [7.0]])
        np.testing.assert_allclose(z, [[5.5], [7.0]])


class TestBruteForce(unittest.TestCase):
    def test_four_points(self):
        opt = brute_force_global(FOUR, 2)
        self.assertEqual(opt.cost, 1.0)
        np.testing.assert_allclose(opt.heads, [[0.5], [10.5]])
        # lexicographically first optimal assignment
        self.assertEqual(opt.partition.tolist(), [0, 0, 1, 1])

    def test_k_distinct_points(self):
        d = FederatedDataset.from_scalars([[1.0, 4.0], [9.0]])
        self.assertEqual(brute_force_global(d, 3).cost, 0.0)

    def test_duplicates(self):
        opt = brute_force_global(FederatedDataset.from_scalars([[0, 0, 4]]), 2)
        self.assertEqual(opt.cost, 0.0)
        np.testing.assert_allclose(opt.heads, [[0.0], [4.0]])

    def test_two_agent_single_cluster(self):
        self.assertEqual(brute_force_global(FederatedDataset.from_scalars([[0.0], [2.0]]), 1).cost, 2.0)

    def test_guard(self):
        d = FederatedDataset.from_scalars([list(range(30))])
        with self.assertRaises(TooLarge) as ctx:
            brute_force_global(d, 3)
        self.assertEqual(ctx.exception.size, 3 ** 30)

    def test_explicit_limit(self):
        with self.assertRaises(TooLarge):
            brute_force_global(FOUR, 2, limit=15)

    def test_decode_is_lexicographic(self):
        labels = decode_assignments(np.arange(4), 2, 2)
        self.assertEqual(labels.tolist(), [[0, 0], [0, 1], [1, 0], [1, 1]])

    def test_global_minima_up_to_relabeling(self):
        Z = global_minima(FOUR, 2)
        self.assertEqual(len(Z), 1)
        np.testing.assert_allclose(Z[0], [[0.5], [10.5]])

    def test_global_minima_ties(self):
        # {0, 1, 2}: splitting off either end costs 0.5
        Z = global_minima(FederatedDataset.from_scalars([[0, 1, 2]]), 2)
        self.assertEqual(len(Z), 2)

    @given(seed=st.integers(0, 10_000))
    @settings(deadline=None, derandomize=True, max_examples=25)
    def test_oracle_beats_lloyd(self, seed):
        rng = np.random.default_rng(seed)
        d = FederatedDataset.from_agents([rng.normal(size=(6, 1)) * 4.0], 1)
        opt = brute_force_global(d, 2)
        init = d.points[:2] if d.points[0, 0] != d.points[1, 0] else d.points[[0, 2]]
        self.assertLessEqual(opt.cost, lloyd_run(d, 2, init).cost + 1e-9)
        self.assertAlmostEqual(opt.cost, cost_F(opt.heads, d), places=9)


class TestLocalBaseline(unittest.TestCase):
    def test_agents_cluster_their_own_data(self):
        heads = local_baseline(FOUR, 2, [[0.0], [10.0]])
        np.testing.assert_allclose(heads[0], [[0.5], [10.0]])
        np.testing.assert_allclose(heads[1], [[0.0], [10.5]])
        self.assertGreater(cost_F(heads[0], FOUR), brute_force_global(FOUR, 2).cost)

    def test_agent_without_data_keeps_init(self):
        d = FederatedDataset.from_scalars([[0, 1], []])
        heads = local_baseline(d, 2, [[0.0], [5.0]])
        np.testing.assert_array_equal(heads[1], [[0.0], [5.0]])


if __name__ == '__main__':
    unittest.main()
