import unittest

import numpy as np

from esig_module.covariance import BrownianMotion, FractionalBrownianMotion, gram_matrix
from esig_module.discrete_oracle import UniformGrid, pl_expected_signature
from esig_module.errors import CapabilityError, DomainError
from esig_module.montecarlo import (
    SignatureAccumulator, batch_plan, batch_signatures, draw_paths, estimate_expected_signature,
    merge_pairwise, path_factor, pathwise_signature, sample_paths)
from esig_module.tensor_words import Word, signature_of_path


class TestSimulation(unittest.TestCase):
    def test_factor_reproduces_covariance(self):
        model = FractionalBrownianMotion(0.3)
        grid = UniformGrid(0.0, 1.0, 32)
        factor = path_factor(model, grid)
        np.testing.assert_allclose(factor @ factor.T, gram_matrix(model, grid.edges), atol=1e-10)

    def test_paths_start_at_zero(self):
        factor = path_factor(BrownianMotion(), UniformGrid(0.25, 1.0, 8))
        paths = draw_paths(factor, 5, 3, np.random.default_rng(0))
        self.assertEqual(paths.shape, (5, 9, 3))
        np.testing.assert_array_equal(paths[:, 0, :], 0.0)

    def test_lineage_and_reproducibility(self):
        grid = UniformGrid(0.0, 1.0, 4)
        first = list(sample_paths(BrownianMotion(), grid, 5, seed=9, batch_size=2))
        again = list(sample_paths(BrownianMotion(), grid, 5, seed=9, batch_size=2))
        self.assertEqual([p.seed for p in first], [(9, 0, 0), (9, 0, 1), (9, 1, 0), (9, 1, 1), (9, 2, 0)])
        for a, b in zip(first, again):
            np.testing.assert_array_equal(a.values, b.values)

    def test_batch_plan(self):
        plan = batch_plan(5000, seed=1, batch_size=2048)
        self.assertEqual([size for size, _ in plan], [2048, 2048, 904])
        with self.assertRaises(DomainError):
            batch_plan(0, seed=1)


class TestSignatures(unittest.TestCase):
    def test_batch_matches_single_paths(self):
        rng = np.random.default_rng(1)
        paths = np.cumsum(rng.standard_normal((3, 7, 2)), axis=1)
        levels = batch_signatures(np.diff(paths, axis=1), 4)
        for b in range(3):
            sig = signature_of_path(paths[b], 4)
            for k in range(5):
                np.testing.assert_allclose(levels[k][b], sig.levels[k], rtol=1e-10, atol=1e-12)

    def test_pathwise_level_limit(self):
        sample = next(sample_paths(BrownianMotion(), UniformGrid(0.0, 1.0, 4), 2, seed=0))
        self.assertEqual(pathwise_signature(sample, 3).depth, 3)
        with self.assertRaises(CapabilityError):
            pathwise_signature(sample, 7)


class TestAccumulator(unittest.TestCase):
    def test_merge_matches_one_pass(self):
        rng = np.random.default_rng(6)
        data = rng.standard_normal((40, 2))
        levels = [np.ones((40, 1)), data]
        whole = SignatureAccumulator(2, 1)
        whole.add(levels)
        parts = []
        for chunk in np.array_split(np.arange(40), 5):
            acc = SignatureAccumulator(2, 1)
            acc.add([lv[chunk] for lv in levels])
            parts.append(acc)
        merged = merge_pairwise(parts)
        self.assertEqual(merged.count, 40)
        np.testing.assert_allclose(merged.mean[1], data.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(merged.m2[1], whole.m2[1], rtol=1e-10)
        np.testing.assert_allclose(merged.m2[1], ((data - data.mean(axis=0)) ** 2).sum(axis=0), rtol=1e-10)

    def test_needs_two_paths(self):
        acc = SignatureAccumulator(1, 2)
        acc.add([np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1))])
        with self.assertRaises(DomainError):
            acc.estimate(UniformGrid(0.0, 1.0, 1), seed=0)


class TestEstimate(unittest.TestCase):
    def test_agrees_with_the_grid_oracle(self):
        model = FractionalBrownianMotion(0.4)
        grid = UniformGrid(0.0, 1.0, 16)
        est = estimate_expected_signature(model, grid, 4, 10_000, seed=2024, dim=2)
        self.assertEqual(est.n_paths, 10_000)
        for letters in ((1, 1), (1, 2), (1, 1, 2, 2), (1, 2, 1, 2), (1, 2, 2, 1), (2, 2, 2, 2)):
            word = Word(letters, 2)
            exact = pl_expected_signature(model, grid, word)
            self.assertLess(abs(est.value(word) - exact), 4 * est.se(word) + 1e-12, word.key)
        self.assertEqual(est.value(Word((), 2)), 1.0)

    def test_seeded_runs_repeat_across_worker_counts(self):
        grid = UniformGrid(0.0, 1.0, 8)
        serial = estimate_expected_signature(BrownianMotion(), grid, 2, 3000, seed=5, dim=2, batch_size=1000)
        pooled = estimate_expected_signature(BrownianMotion(), grid, 2, 3000, seed=5, dim=2, workers=2,
                                             batch_size=1000)
        self.assertTrue(serial.mean.allclose(pooled.mean, rtol=0.0, atol=0.0))
        doc = serial.to_json()
        self.assertEqual(doc["n_paths"], 3000)
        self.assertIn("1,2", doc["std_errors"])

    def test_level_limit(self):
        with self.assertRaises(CapabilityError):
            estimate_expected_signature(BrownianMotion(), UniformGrid(0.0, 1.0, 4), 7, 10, seed=0)


if __name__ == '__main__':
    unittest.main()
