import unittest

import numpy as np

from esig_module.errors import DimensionMismatchError
from esig_module.tensor_words import (
    TensorPolynomial, Word, all_words, chen_product, shuffle, shuffle_count, signature_of_path, tensor_exp)


class TestWords(unittest.TestCase):
    def test_index_is_lexicographic(self):
        words = list(all_words(2, 2))
        self.assertEqual([w.key for w in words], ["1,1", "1,2", "2,1", "2,2"])
        self.assertEqual([w.index for w in words], [0, 1, 2, 3])

    def test_letter_outside_alphabet(self):
        with self.assertRaises(DimensionMismatchError):
            Word((1, 3), 2)

    def test_from_key(self):
        self.assertEqual(Word.from_key("2,1", 2), Word((2, 1), 2))
        self.assertEqual(len(Word.from_key("", 3)), 0)


class TestTensorPolynomial(unittest.TestCase):
    def test_level_size_is_checked(self):
        with self.assertRaises(DimensionMismatchError):
            TensorPolynomial(2, [np.ones(1), np.ones(3)])

    def test_from_words_and_lookup(self):
        w = Word((1, 2), 2)
        poly = TensorPolynomial.from_words(2, 2, {w: 0.5, Word((), 2): 1.0})
        self.assertEqual(poly[w], 0.5)
        self.assertEqual(poly.level(2)[0, 1], 0.5)
        self.assertEqual(poly[Word((), 2)], 1.0)

    def test_mismatched_truncation(self):
        with self.assertRaises(DimensionMismatchError):
            TensorPolynomial.zero(2, 2) + TensorPolynomial.zero(2, 3)

    def test_identity_is_neutral(self):
        a = tensor_exp([0.3, -1.2], 4)
        ident = TensorPolynomial.identity(2, 4)
        self.assertTrue(chen_product(a, ident).allclose(a))
        self.assertTrue(chen_product(ident, a).allclose(a))


class TestSignatures(unittest.TestCase):
    def test_straight_line(self):
        sig = signature_of_path(np.array([[0.0, 0.0], [2.0, 1.0]]), 3)
        self.assertAlmostEqual(sig[Word((1, 1, 2), 2)], 2.0 * 2.0 * 1.0 / 6.0)

    def test_subdividing_a_segment_changes_nothing(self):
        coarse = signature_of_path(np.array([[0.0, 0.0], [1.0, 2.0]]), 4)
        fine = signature_of_path(np.array([[0.0, 0.0], [0.25, 0.5], [1.0, 2.0]]), 4)
        self.assertTrue(coarse.allclose(fine, rtol=1e-12, atol=1e-14))

    def test_chen_identity(self):
        rng = np.random.default_rng(3)
        path = np.cumsum(rng.standard_normal((9, 2)), axis=0)
        whole = signature_of_path(path, 4)
        split = chen_product(signature_of_path(path[:5], 4), signature_of_path(path[4:], 4))
        self.assertTrue(whole.allclose(split, rtol=1e-10, atol=1e-12))

    def test_levy_area_of_a_corner(self):
        sig = signature_of_path(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]), 2)
        area = 0.5 * (sig[Word((1, 2), 2)] - sig[Word((2, 1), 2)])
        self.assertAlmostEqual(area, 0.5)


class TestShuffle(unittest.TestCase):
    def test_counts(self):
        result = shuffle(Word((1, 2), 2), Word((1,), 2))
        self.assertEqual(sum(result.values()), shuffle_count(2, 1))
        self.assertEqual(result[Word((1, 1, 2), 2)], 2)
        self.assertEqual(result[Word((1, 2, 1), 2)], 1)

    def test_shuffle_identity_on_a_path(self):
        rng = np.random.default_rng(5)
        sig = signature_of_path(np.cumsum(rng.standard_normal((6, 2)), axis=0), 4)
        u, v = Word((1, 2), 2), Word((2, 1), 2)
        rhs = sum(mult * sig[w] for w, mult in shuffle(u, v).items())
        self.assertAlmostEqual(sig[u] * sig[v], rhs, places=10)


if __name__ == '__main__':
    unittest.main()
