import math
import unittest

from esig_module.analytic_engine import (
    ChaosKernel, chaos_projection_kernels, compatibility_mask, compute_expected_signature,
    compute_level_terms, default_lattice, diagram_scalar, diagram_scalar_with_error, eval_kernel,
    expected_signature, expected_signature_martingale, integrate_diagram, kernel_on_lattice)
from esig_module.covariance import BrownianMotion, FractionalBrownianMotion, OrnsteinUhlenbeck
from esig_module.diagrams import Diagram
from esig_module.errors import CapabilityError, DimensionMismatchError, DomainError
from esig_module.quadrature import QuadratureConfig
from esig_module.tensor_words import TensorPolynomial, Word, all_words, chen_product

# (H/4) * B(2H, 2H) at H = 3/4 is (3/16)(pi/8)
LEVEL4_H075 = {
    "{1,2}{3,4}": 3 * math.pi / 128,
    "{1,3}{2,4}": 0.09375 - 3 * math.pi / 128,
    "{1,4}{2,3}": 0.03125,
}


class TestDiagramIntegrals(unittest.TestCase):
    def test_one_pair_is_half_the_increment_variance(self):
        m = FractionalBrownianMotion(0.4)
        s, t = 0.2, 0.7
        expected = 0.5 * (m.var(s) + m.var(t)) - m.R(s, t)
        self.assertAlmostEqual(diagram_scalar(Diagram(2, ((1, 2),)), m, s, t), expected, places=12)

    def test_level_four_fbm_constants(self):
        terms = compute_level_terms(FractionalBrownianMotion(0.75), 4, 0.0, 1.0)
        self.assertEqual([term.diagram.label for term in terms], list(LEVEL4_H075))
        for term in terms:
            self.assertAlmostEqual(term.value, LEVEL4_H075[term.diagram.label], delta=1e-6)
        self.assertAlmostEqual(sum(term.value for term in terms), 0.125, delta=1e-6)
        self.assertAlmostEqual(terms[0].value, 0.0736311, delta=5e-7)
        self.assertAlmostEqual(terms[1].value, 0.0201189, delta=5e-7)

    def test_level_four_fbm_rough(self):
        for h in (0.3, 0.4):
            beta = math.gamma(2 * h) ** 2 / math.gamma(4 * h)
            expected = {
                "{1,2}{3,4}": h / 4 * beta,
                "{1,3}{2,4}": h / (4 * (4 * h - 1)) - h / 4 * beta,
                "{1,4}{2,3}": (2 * h - 1) / (8 * (4 * h - 1)),
            }
            terms = compute_level_terms(FractionalBrownianMotion(h), 4, 0.0, 1.0)
            for term in terms:
                ref = expected[term.diagram.label]
                self.assertAlmostEqual(term.value, ref, delta=1e-5 * abs(ref), msg=f"H={h} {term.diagram.label}")
                self.assertEqual(term.method, "tensor")
            self.assertAlmostEqual(sum(term.value for term in terms), 0.125, delta=2e-6)

    def test_arc_ends_integrated_in_closed_form(self):
        cases = [
            (FractionalBrownianMotion(0.75), Diagram(4, ((1, 3), (2, 4))), 0.2, 0.9),
            (OrnsteinUhlenbeck(sigma=1.5, theta=2.0), Diagram(4, ((1, 4), (2, 3))), 0.1, 0.8),
            (OrnsteinUhlenbeck(), Diagram(4, ((1, 3), (2, 4))), 0.0, 1.0),
        ]
        for m, P, s, t in cases:
            reduced = diagram_scalar(P, m, s, t)
            raw = diagram_scalar(P, m, s, t, QuadratureConfig(closed_forms=False))
            self.assertAlmostEqual(reduced, raw, delta=1e-5 * abs(raw), msg=f"{m!r} {P.label}")

    def test_six_dimensional_diagram_falls_back_to_qmc(self):
        m = FractionalBrownianMotion(0.75)
        P = Diagram(6, ((1, 4), (2, 5), (3, 6)))
        value, err, method = integrate_diagram(P, m, 0.0, 1.0, (), QuadratureConfig(closed_forms=False))
        self.assertEqual(method, "qmc")
        self.assertGreater(err, 0.0)
        reduced, _, reduced_method = integrate_diagram(P, m, 0.0, 1.0)
        self.assertEqual(reduced_method, "tensor")
        self.assertAlmostEqual(value, reduced, delta=max(5 * err, 2e-3 * abs(reduced)))

    def test_arc_diagrams_vanish_for_brownian_motion(self):
        terms = compute_level_terms(BrownianMotion(), 4, 0.0, 1.0)
        methods = {term.diagram.label: term.method for term in terms}
        self.assertEqual(methods["{1,3}{2,4}"], "vanishing")
        self.assertEqual(methods["{1,4}{2,3}"], "vanishing")
        self.assertAlmostEqual(terms[0].value, 0.125, places=12)

    def test_closed_forms_agree_with_quadrature(self):
        m = FractionalBrownianMotion(0.6)
        P = Diagram(2, ((1, 2),))
        with_closed = diagram_scalar(P, m, 0.1, 0.9)
        raw, err = diagram_scalar_with_error(P, m, 0.1, 0.9, QuadratureConfig(closed_forms=False, rel_tol=1e-9))
        self.assertAlmostEqual(with_closed, raw, delta=1e-7)
        self.assertLess(err, 1e-6)

    def test_scalar_rejects_singles(self):
        with self.assertRaises(DomainError):
            diagram_scalar(Diagram(3, ((1, 2),)), BrownianMotion(), 0.0, 1.0)

    def test_free_time_outside_interval(self):
        value, err, method = integrate_diagram(Diagram(3, ((1, 2),)), FractionalBrownianMotion(0.4), 0.0, 0.5, (0.7,))
        self.assertEqual((value, err, method), (0.0, 0.0, "outside"))

    def test_free_time_count_checked(self):
        with self.assertRaises(DimensionMismatchError):
            integrate_diagram(Diagram(3, ((1, 2),)), BrownianMotion(), 0.0, 1.0, ())


class TestChaosKernels(unittest.TestCase):
    def test_consecutive_then_single(self):
        h, u = 0.4, 0.5
        m = FractionalBrownianMotion(h)
        k = ChaosKernel(Diagram(3, ((1, 2),)), m, 0.0, 1.0, Word((1, 1, 1), 1))
        self.assertAlmostEqual(eval_kernel(k, (u,)), u ** (2 * h) / 2, places=12)
        raw = eval_kernel(k, (u,), cfg=QuadratureConfig(closed_forms=False, rel_tol=1e-10))
        self.assertAlmostEqual(raw, u ** (2 * h) / 2, delta=1e-8)

    def test_arc_around_single(self):
        m = FractionalBrownianMotion(0.4)
        k = ChaosKernel(Diagram(3, ((1, 3),)), m, 0.0, 1.0, Word((1, 1, 1), 1))
        exact = eval_kernel(k, (0.4,))
        self.assertAlmostEqual(exact, m.inc_cov(0.0, 0.4, 0.4, 1.0), places=12)
        raw = eval_kernel(k, (0.4,), cfg=QuadratureConfig(closed_forms=False, rel_tol=1e-8))
        self.assertAlmostEqual(raw, exact, delta=1e-6)

    def test_index_mismatch_gives_zero(self):
        m = FractionalBrownianMotion(0.4)
        k = ChaosKernel(Diagram(3, ((1, 2),)), m, 0.0, 1.0, Word((1, 2, 1), 2))
        self.assertTrue(k.vanishes)
        self.assertEqual(eval_kernel(k, (0.5,)), 0.0)
        ok = ChaosKernel(Diagram(3, ((1, 2),)), m, 0.0, 1.0, Word((2, 2, 1), 2))
        self.assertEqual(ok.free_letters, (1,))
        self.assertEqual(eval_kernel(ok, (0.5,), free_indices=(2,)), 0.0)
        self.assertGreater(eval_kernel(ok, (0.5,), free_indices=(1,)), 0.0)

    def test_projection_kernels(self):
        m = FractionalBrownianMotion(0.4)
        word = Word((1, 1, 1, 1, 1), 1)
        self.assertEqual(len(chaos_projection_kernels(m, word, 1, 0.0, 1.0)), 15)
        self.assertEqual(chaos_projection_kernels(m, word, 2, 0.0, 1.0), [])
        self.assertEqual(chaos_projection_kernels(m, word, 7, 0.0, 1.0), [])

    def test_lattice(self):
        lattice = default_lattice(0.0, 1.0, 2, 5)
        self.assertEqual(len(lattice), 10)
        self.assertEqual(lattice[0], (0.1, 0.3))
        k = ChaosKernel(Diagram(3, ((1, 2),)), FractionalBrownianMotion(0.4), 0.0, 1.0, Word((1, 1, 1), 1))
        rows = kernel_on_lattice(k, default_lattice(0.0, 1.0, 1, 3))
        self.assertEqual([p for p, _, _ in rows], [(1 / 6,), (0.5,), (5 / 6,)])
        for p, value, _ in rows:
            self.assertAlmostEqual(value, p[0] ** 0.8 / 2, places=12)


class TestExpectedSignature(unittest.TestCase):
    def test_brownian_closed_form(self):
        sig = expected_signature(BrownianMotion(), 4, 0.0, 1.0, dim=2)
        self.assertAlmostEqual(sig[Word((1, 1, 1, 1), 2)], 0.125, places=10)
        self.assertAlmostEqual(sig[Word((1, 1, 2, 2), 2)], 0.125, places=10)
        self.assertEqual(sig[Word((1, 2, 2, 1), 2)], 0.0)
        self.assertAlmostEqual(sig[Word((2, 2), 2)], 0.5, places=12)
        self.assertEqual(sig[Word((1, 2, 1), 2)], 0.0)
        self.assertTrue(sig.allclose(expected_signature_martingale(BrownianMotion(), 4, 0.0, 1.0, 2), atol=1e-10))

    def test_hurst_one_half_degenerates(self):
        fbm = expected_signature(FractionalBrownianMotion(0.5), 6, 0.0, 1.0, dim=1)
        self.assertAlmostEqual(fbm[Word((1,) * 6, 1)], 1 / 48, places=9)

    def test_level_six_moments(self):
        # S^{1...1} = X^n / n!, so the sixth level is 15 var^3 / 720
        for m in (FractionalBrownianMotion(0.75), OrnsteinUhlenbeck(sigma=1.0, theta=1.0)):
            sig = expected_signature(m, 6, 0.0, 1.0, dim=1)
            var = m.var(1.0)
            self.assertAlmostEqual(sig[Word((1,) * 4, 1)], var ** 2 / 8, delta=1e-5 * var ** 2, msg=repr(m))
            self.assertAlmostEqual(sig[Word((1,) * 6, 1)], var ** 3 / 48, delta=2e-3 * var ** 3 / 48, msg=repr(m))

    def test_martingale_form_needs_vanishing_arcs(self):
        with self.assertRaises(DomainError):
            expected_signature_martingale(FractionalBrownianMotion(0.4), 4, 0.0, 1.0)

    def test_zero_interval_is_identity(self):
        result = compute_expected_signature(OrnsteinUhlenbeck(), 4, 0.3, 0.3, dim=2)
        self.assertTrue(result.signature.allclose(TensorPolynomial.identity(2, 4)))
        self.assertEqual(result.terms, {})

    def test_self_similarity(self):
        h = 0.4
        m = FractionalBrownianMotion(h)
        whole = expected_signature(m, 4, 0.0, 1.0, dim=1)
        half = expected_signature(m, 4, 0.0, 0.5, dim=1)
        for n in (2, 4):
            w = Word((1,) * n, 1)
            self.assertAlmostEqual(half[w], 0.5 ** (n * h) * whole[w], delta=1e-5 * whole[w])

    def test_chen_for_independent_increments(self):
        bm = BrownianMotion()
        whole = expected_signature(bm, 4, 0.0, 1.0, dim=2)
        split = chen_product(expected_signature(bm, 4, 0.0, 0.4, dim=2), expected_signature(bm, 4, 0.4, 1.0, dim=2))
        self.assertTrue(whole.allclose(split, rtol=0.0, atol=1e-10))

    def test_errors_and_json(self):
        result = compute_expected_signature(FractionalBrownianMotion(0.75), 4, 0.0, 1.0, dim=2)
        doc = result.to_json()
        self.assertEqual(doc["level"], 4)
        self.assertEqual(len(doc["terms"]), 1 + 3)
        self.assertIn("1,2,1,2", doc["word_values"])
        self.assertAlmostEqual(doc["word_values"]["1,2,1,2"], LEVEL4_H075["{1,3}{2,4}"], delta=1e-6)
        self.assertGreaterEqual(result.error(Word((1, 1, 1, 1), 2)), 0.0)

    def test_compatibility_mask(self):
        mask = compatibility_mask(Diagram(4, ((1, 4), (2, 3))), 2)
        keys = [w.key for w, ok in zip(all_words(2, 4), mask) if ok]
        self.assertEqual(keys, ["1,1,1,1", "1,2,2,1", "2,1,1,2", "2,2,2,2"])

    def test_capabilities(self):
        with self.assertRaises(CapabilityError):
            expected_signature(BrownianMotion(), 7, 0.0, 1.0)
        with self.assertRaises(CapabilityError):
            expected_signature(BrownianMotion(), 2, 0.0, 1.0, dim=5)
        with self.assertRaises(DomainError):
            expected_signature(BrownianMotion(), 2, 0.8, 0.2)


if __name__ == '__main__':
    unittest.main()
