import math
import unittest

import numpy as np

from esig_module.covariance import BrownianMotion, FractionalBrownianMotion
from esig_module.diagrams import Diagram
from esig_module.discrete_oracle import (
    ElementaryKernel, IncrementGram, UniformGrid, assignment_count, grid_inner_product,
    pl_chaos_kernel, pl_diagram_value, pl_expected_signature, pl_expected_signature_tensor,
    pl_expected_signature_wick, pl_level_terms, pl_malliavin_expectation, run_weights, wick_moment)
from esig_module.errors import CapabilityError, DimensionMismatchError, DomainError
from esig_module.tensor_words import Word


class TestGrid(unittest.TestCase):
    def test_cells(self):
        grid = UniformGrid(0.0, 1.0, 8)
        self.assertAlmostEqual(grid.rho, 0.125)
        self.assertEqual(grid.cell_of(0.3), 2)
        self.assertIsNone(grid.cell_of(1.0))
        self.assertIsNone(grid.cell_of(-0.1))
        with self.assertRaises(DomainError):
            grid.cell_of(0.25)
        with self.assertRaises(DomainError):
            UniformGrid(0.0, 1.0, 0)

    def test_increment_gram_is_symmetric_and_read_only(self):
        gram = IncrementGram.from_model(FractionalBrownianMotion(0.3), UniformGrid(0.0, 1.0, 6))
        np.testing.assert_array_equal(gram.matrix, gram.matrix.T)
        self.assertEqual(gram.size, 6)
        self.assertEqual(gram.factor()[2], 6)
        with self.assertRaises(ValueError):
            gram.matrix[0, 0] = 1.0


class TestWick(unittest.TestCase):
    def test_small_moments(self):
        self.assertAlmostEqual(wick_moment(np.array([[1.0, 0.3], [0.3, 1.0]])), 0.3)
        self.assertAlmostEqual(wick_moment(np.ones((4, 4))), 3.0)
        self.assertEqual(wick_moment(np.ones((3, 3))), 0.0)
        self.assertEqual(wick_moment(np.zeros((0, 0))), 1.0)

    def test_sixth_moment_against_sampling(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((6, 6)) / 2
        cov = a @ a.T
        z = rng.multivariate_normal(np.zeros(6), cov, size=400_000)
        prods = np.prod(z, axis=1)
        se = prods.std() / math.sqrt(prods.size)
        self.assertLess(abs(prods.mean() - wick_moment(cov)), 4 * se)


class TestAssignments(unittest.TestCase):
    def test_run_weights(self):
        assign = np.array([[0, 0, 1], [0, 0, 0], [0, 1, 2], [1, 1, 1]])
        np.testing.assert_allclose(run_weights(assign), [0.5, 1 / 6, 1.0, 1 / 6])

    def test_run_weight_is_ordered_volume(self):
        # cells [0, 1) and [1, 2); the ordered part of cell pattern (0, 0, 1)
        rng = np.random.default_rng(2)
        x = rng.uniform(0.0, 2.0, size=(200_000, 3))
        hit = (x[:, 0] < x[:, 1]) & (x[:, 1] < 1.0) & (x[:, 2] >= 1.0)
        p = 0.5 / 8.0
        se = math.sqrt(p * (1 - p) / x.shape[0])
        self.assertLess(abs(hit.mean() - p), 4 * se)
        self.assertEqual(run_weights(np.array([[0, 0, 1]]))[0], 0.5)

    def test_counts(self):
        self.assertEqual(assignment_count(4, 10), math.comb(13, 4))
        self.assertEqual(assignment_count(3, 5, {2: 3}), 4 * 2)
        self.assertEqual(assignment_count(3, 5, {1: 3, 3: 1}), 0)


class TestExpectedSignature(unittest.TestCase):
    def test_one_pair(self):
        for cells in (1, 3, 8):
            grid = UniformGrid(0.0, 1.0, cells)
            self.assertAlmostEqual(pl_expected_signature(BrownianMotion(), grid, Word((1, 1), 1)), 0.5, places=12)
            self.assertAlmostEqual(
                pl_expected_signature(FractionalBrownianMotion(0.3), grid, Word((2, 2), 2)), 0.5, places=12)

    def test_odd_and_empty_words(self):
        grid = UniformGrid(0.0, 1.0, 4)
        self.assertEqual(pl_expected_signature(BrownianMotion(), grid, Word((1, 2, 1), 2)), 0.0)
        self.assertEqual(pl_expected_signature(BrownianMotion(), grid, Word((), 2)), 1.0)

    def test_brownian_values_do_not_depend_on_the_grid(self):
        word = Word((1, 1, 2, 2), 2)
        values = [pl_expected_signature(BrownianMotion(), UniformGrid(0.0, 1.0, c), word) for c in (2, 4, 8)]
        for v in values:
            self.assertAlmostEqual(v, 0.125, delta=1e-12)

    def test_one_dimensional_level_four_sums_to_an_eighth(self):
        terms = pl_level_terms(FractionalBrownianMotion(0.4), UniformGrid(0.0, 1.0, 16), 4)
        self.assertEqual([P.label for P, _ in terms], ["{1,2}{3,4}", "{1,3}{2,4}", "{1,4}{2,3}"])
        self.assertAlmostEqual(sum(v for _, v in terms), 0.125, places=12)

    def test_routes_agree(self):
        model = FractionalBrownianMotion(0.3)
        grid = UniformGrid(0.0, 1.0, 4)
        cubature = pl_expected_signature_tensor(model, grid, 4, 2)
        for letters in ((1, 1, 1, 1), (1, 2, 1, 2), (1, 2, 2, 1), (2, 2)):
            word = Word(letters, 2)
            direct = pl_expected_signature(model, grid, word)
            self.assertAlmostEqual(cubature[word], direct, places=10)
            self.assertAlmostEqual(pl_expected_signature_wick(model, grid, word), direct, places=12)

    def test_budget(self):
        with self.assertRaises(CapabilityError):
            pl_level_terms(BrownianMotion(), UniformGrid(0.0, 1.0, 64), 4, budget=1000)


class TestKernels(unittest.TestCase):
    def test_arc_around_single_for_brownian_motion(self):
        grid = UniformGrid(0.0, 1.0, 8)
        value = pl_chaos_kernel(Diagram(3, ((1, 3),)), BrownianMotion(), grid, Word((1, 1, 1), 1), (0.3,))
        self.assertAlmostEqual(value, grid.rho / 6, places=14)

    def test_free_positions_only(self):
        grid = UniformGrid(0.0, 1.0, 8)
        word = Word((1, 2, 3), 3)
        empty = Diagram(3, ())
        self.assertAlmostEqual(pl_chaos_kernel(empty, BrownianMotion(), grid, word, (0.1, 0.4, 0.9)), 1.0)
        self.assertEqual(pl_chaos_kernel(empty, BrownianMotion(), grid, word, (0.4, 0.1, 0.9)), 0.0)
        self.assertAlmostEqual(pl_chaos_kernel(empty, BrownianMotion(), grid, word, (0.3, 0.32, 0.9)), 0.5)

    def test_free_index_mismatch(self):
        grid = UniformGrid(0.0, 1.0, 4)
        word = Word((1, 1, 2), 2)
        P = Diagram(3, ((1, 2),))
        self.assertEqual(pl_chaos_kernel(P, BrownianMotion(), grid, word, (0.6,), free_indices=(1,)), 0.0)
        self.assertGreater(pl_chaos_kernel(P, BrownianMotion(), grid, word, (0.6,), free_indices=(2,)), 0.0)

    def test_first_derivative_of_the_cube(self):
        # E D_u (X_1^3 / 6) = E[X_1^2] / 2
        model = FractionalBrownianMotion(0.4)
        grid = UniformGrid(0.0, 1.0, 16)
        value = pl_malliavin_expectation(model, grid, Word((1, 1, 1), 1), 1, (0.463,), (1,))
        self.assertAlmostEqual(value, 0.5, places=12)

    def test_second_derivative_of_the_quartic(self):
        model = FractionalBrownianMotion(0.4)
        grid = UniformGrid(0.0, 1.0, 8)
        for times in ((0.3, 0.7), (0.7, 0.3)):
            value = pl_malliavin_expectation(model, grid, Word((1, 1, 1, 1), 1), 2, times, (1, 1))
            self.assertAlmostEqual(value, 0.5, places=12)

    def test_argument_counts(self):
        grid = UniformGrid(0.0, 1.0, 4)
        with self.assertRaises(DimensionMismatchError):
            pl_diagram_value(Diagram(3, ((1, 2),)), BrownianMotion(), grid, ())
        with self.assertRaises(DimensionMismatchError):
            pl_malliavin_expectation(BrownianMotion(), grid, Word((1, 1, 1), 1), 1, (0.3, 0.6), (1,))


class TestInnerProduct(unittest.TestCase):
    def test_indicators_reproduce_the_covariance(self):
        model = FractionalBrownianMotion(0.3)
        grid = UniformGrid(0.0, 1.0, 8)
        f = ElementaryKernel.indicator(grid, 1, 0.0, 0.375, 2)
        g = ElementaryKernel.indicator(grid, 1, 0.0, 0.75, 2)
        self.assertAlmostEqual(grid_inner_product(f, g, model), model.R(0.375, 0.75), places=12)
        other = ElementaryKernel.indicator(grid, 2, 0.0, 0.75, 2)
        self.assertEqual(grid_inner_product(f, other, model), 0.0)

    def test_cauchy_schwarz(self):
        model = FractionalBrownianMotion(0.75)
        grid = UniformGrid(0.0, 1.0, 8)
        rng = np.random.default_rng(4)
        for _ in range(10):
            f = ElementaryKernel(grid, rng.standard_normal((2, 8)))
            g = ElementaryKernel(grid, rng.standard_normal((2, 8)))
            lhs = grid_inner_product(f, g, model) ** 2
            rhs = grid_inner_product(f, f, model) * grid_inner_product(g, g, model)
            self.assertLessEqual(lhs, rhs * (1 + 1e-12))

    def test_indicator_must_follow_cells(self):
        grid = UniformGrid(0.0, 1.0, 8)
        with self.assertRaises(DomainError):
            ElementaryKernel.indicator(grid, 1, 0.0, 0.3, 1)
        with self.assertRaises(DimensionMismatchError):
            ElementaryKernel(grid, np.ones((1, 5)))


if __name__ == '__main__':
    unittest.main()
