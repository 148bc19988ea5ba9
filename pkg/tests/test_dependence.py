from __future__ import annotations

import math
import unittest

import numpy as np
from scipy.special import ndtri
from scipy.stats import kendalltau, kstest, multivariate_normal, spearmanr

from cds_cva.dependence import (
    ConditioningState,
    CopulaSpec,
    DegenerateConditioningError,
    NotPositiveSemidefiniteError,
    bivariate_copula,
    bivariate_copula_partial,
    bvn_cdf,
    cond_copula_ref_given_cpty,
    cond_copula_ref_given_inv,
    sample_triggers,
    trivariate_copula,
    trivariate_copula_partial,
)


class CopulaSpecTests(unittest.TestCase):
    def test_rejects_out_of_range_entry(self) -> None:
        with self.assertRaises(ValueError):
            CopulaSpec(0.0, 1.2, 0.0)

    def test_rejects_indefinite_matrix(self) -> None:
        with self.assertRaises(NotPositiveSemidefiniteError):
            CopulaSpec(0.9, 0.9, -0.9)

    def test_singular_matrix_still_factors(self) -> None:
        spec = CopulaSpec(0.0, 0.0, 1.0)
        np.testing.assert_allclose(spec.factor @ spec.factor.T, spec.matrix, atol=1e-12)

    def test_swapped_relabels_investor_and_counterparty(self) -> None:
        spec = CopulaSpec(0.1, 0.2, 0.3).swapped()
        self.assertEqual((spec.r01, spec.r02, spec.r12), (0.3, 0.2, 0.1))


class BivariateNormalTests(unittest.TestCase):
    def test_origin_closed_form(self) -> None:
        for r in (-0.99, -0.8, -0.3, 0.0, 0.3, 0.8, 0.95, 0.99):
            with self.subTest(r=r):
                self.assertAlmostEqual(bvn_cdf(0.0, 0.0, r), 0.25 + math.asin(r) / (2.0 * math.pi), places=10)

    def test_matches_scipy_off_centre(self) -> None:
        points = [(-1.0, 0.5), (0.7, 1.3), (-2.0, -0.4), (1.5, -1.5)]
        for r in (-0.95, -0.5, 0.2, 0.6, 0.9, 0.97):
            law = multivariate_normal(mean=[0.0, 0.0], cov=[[1.0, r], [r, 1.0]])
            for h, k in points:
                with self.subTest(r=r, h=h, k=k):
                    self.assertAlmostEqual(bvn_cdf(h, k, r), float(law.cdf([h, k])), delta=2e-5)

    def test_vectorised_shape(self) -> None:
        value = bvn_cdf(np.zeros((2, 3)), np.ones((2, 3)), 0.4)
        self.assertEqual(value.shape, (2, 3))


class CopulaFunctionTests(unittest.TestCase):
    def test_partial_independence_and_comonotone_limits(self) -> None:
        self.assertAlmostEqual(bivariate_copula_partial(0.0, 0.3, 0.8), 0.3, places=12)
        self.assertEqual(bivariate_copula_partial(1.0, 0.3, 0.8), 0.0)
        self.assertEqual(bivariate_copula_partial(1.0, 0.9, 0.8), 1.0)
        self.assertEqual(bivariate_copula_partial(-1.0, 0.3, 0.8), 1.0)

    def test_bivariate_partial_is_derivative(self) -> None:
        h = 1e-5
        numeric = (bivariate_copula(0.5, 0.6, 0.4 + h) - bivariate_copula(0.5, 0.6, 0.4 - h)) / (2.0 * h)
        self.assertAlmostEqual(bivariate_copula_partial(0.5, 0.6, 0.4), numeric, delta=1e-6)

    def test_trivariate_independence_is_product(self) -> None:
        spec = CopulaSpec(0.0, 0.0, 0.0)
        self.assertAlmostEqual(trivariate_copula(spec, 0.2, 0.5, 0.7), 0.07, places=9)

    def test_trivariate_partial_is_derivative(self) -> None:
        spec = CopulaSpec(0.4, 0.2, 0.6)
        u0, u1, u2, h = 0.3, 0.6, 0.45, 1e-5
        numeric = (trivariate_copula(spec, u0, u1, u2 + h) - trivariate_copula(spec, u0, u1, u2 - h)) / (2.0 * h)
        self.assertAlmostEqual(trivariate_copula_partial(spec, u0, u1, u2, 2), numeric, delta=1e-4)

    def test_partial_rejects_reference_conditioning(self) -> None:
        with self.assertRaises(ValueError):
            trivariate_copula_partial(CopulaSpec(0.0, 0.0, 0.0), 0.5, 0.5, 0.5, 1)


class SamplingTests(unittest.TestCase):
    def test_normal_scores_carry_the_correlation(self) -> None:
        spec = CopulaSpec(0.5, -0.2, 0.3)
        sample = sample_triggers(spec, np.random.default_rng(5), 20000)
        scores = np.column_stack([ndtri(sample.u(i)) for i in range(3)])
        np.testing.assert_allclose(np.corrcoef(scores.T), spec.matrix, atol=0.03)

    def test_independent_triggers_are_uncorrelated(self) -> None:
        n = 20000
        sample = sample_triggers(CopulaSpec(0.0, 0.0, 0.0), np.random.default_rng(31), n)
        for i, j in ((0, 1), (0, 2), (1, 2)):
            with self.subTest(pair=(i, j)):
                self.assertLess(abs(spearmanr(sample.u(i), sample.u(j))[0]), 4.0 / np.sqrt(n))

    def test_kendall_tau_of_strong_dependence(self) -> None:
        sample = sample_triggers(CopulaSpec(0.0, 0.0, 0.99), np.random.default_rng(37), 20000)
        tau = kendalltau(sample.u1, sample.u2)[0]
        self.assertAlmostEqual(tau, 2.0 / math.pi * math.asin(0.99), delta=0.02)

    def test_margins_are_uniform(self) -> None:
        sample = sample_triggers(CopulaSpec(0.5, -0.2, 0.3), np.random.default_rng(41), 100000)
        self.assertLessEqual(kstest(sample.u1, "uniform").statistic, 0.01)

    def test_exponentials_match_uniforms(self) -> None:
        sample = sample_triggers(CopulaSpec(0.0, 0.0, 0.0), np.random.default_rng(9), 1000)
        np.testing.assert_allclose(sample.xi(1), -np.log1p(-sample.u(1)), rtol=1e-9)
        self.assertTrue(np.all((sample.u(0) > 0.0) & (sample.u(0) < 1.0)))

    def test_single_draw_is_scalar(self) -> None:
        sample = sample_triggers(CopulaSpec(0.1, 0.1, 0.1), np.random.default_rng(2))
        self.assertIsInstance(sample.u0, float)
        self.assertEqual(sample.swapped().u0, sample.u2)


class ConditionalLawTests(unittest.TestCase):
    def test_independent_copula_gives_truncated_uniform(self) -> None:
        state = ConditioningState(u_cond=0.4, ubar_other=0.2, ubar_ref=0.3)
        u1 = np.array([0.3, 0.5, 0.8, 0.99])
        value = cond_copula_ref_given_cpty(CopulaSpec(0.0, 0.0, 0.0), u1, state)
        np.testing.assert_allclose(value, (u1 - 0.3) / 0.7, atol=1e-10)

    def test_investor_law_is_relabelled_counterparty_law(self) -> None:
        spec = CopulaSpec(0.6, -0.3, 0.2)
        state = ConditioningState(u_cond=0.1, ubar_other=0.05, ubar_ref=0.02)
        u1 = np.linspace(0.03, 0.99, 9)
        np.testing.assert_allclose(
            cond_copula_ref_given_inv(spec, u1, state),
            cond_copula_ref_given_cpty(spec.swapped(), u1, state),
            atol=1e-14,
        )

    def test_conditional_law_is_a_cdf_above_the_barrier(self) -> None:
        spec = CopulaSpec(0.3, 0.2, 0.7)
        state = ConditioningState(u_cond=0.05, ubar_other=0.01, ubar_ref=0.03)
        u1 = np.concatenate([[0.0, 0.03], np.linspace(0.031, 0.999999, 60)])
        value = cond_copula_ref_given_cpty(spec, u1, state)
        self.assertEqual(value[0], 0.0)
        self.assertEqual(value[1], 0.0)
        self.assertTrue(np.all(np.diff(value) >= -1e-9))
        self.assertGreater(value[-1], 0.99)

    def test_degenerate_conditioning_raises(self) -> None:
        spec = CopulaSpec(0.0, 0.0, 1.0)
        state = ConditioningState(u_cond=0.3, ubar_other=0.2, ubar_ref=0.5)
        with self.assertRaises(DegenerateConditioningError):
            cond_copula_ref_given_cpty(spec, 0.7, state)

    def test_state_rejects_unit_barrier(self) -> None:
        with self.assertRaises(ValueError):
            ConditioningState(u_cond=0.2, ubar_other=1.0, ubar_ref=0.1)


if __name__ == "__main__":
    unittest.main()
