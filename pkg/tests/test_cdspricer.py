from __future__ import annotations

import unittest

import numpy as np

from cds_cva.cdspricer import (
    CdsContract,
    ZeroAnnuityError,
    breakeven_spread,
    cds_legs,
    cds_price,
    residual_cds_value,
)
from cds_cva.creditcurve import DiscountCurve, SurvivalCurve, cir_implied_curve
from cds_cva.intensity import CirParams


DISC = DiscountCurve.flat(0.03)
LOW = CirParams(0.00001, 0.9, 0.0001, 0.01)
MIDDLE = CirParams(0.01, 0.8, 0.02, 0.2)
HIGH = CirParams(0.03, 0.5, 0.05, 0.5)


def _breakeven_bp(params: CirParams, tenor: float, lgd: float = 0.7) -> float:
    contract = CdsContract(0.0, tenor, 0.0, lgd)
    return breakeven_spread(contract, cir_implied_curve(params), DISC) * 1e4


class ContractTests(unittest.TestCase):
    def test_quarterly_schedule(self) -> None:
        contract = CdsContract(0.0, 5.0, 0.01, 0.6)
        np.testing.assert_allclose(contract.payment_times, np.arange(1, 21) / 4.0)
        np.testing.assert_allclose(contract.accruals, np.full(20, 0.25))

    def test_short_front_stub(self) -> None:
        contract = CdsContract(0.0, 1.1, 0.01, 0.6)
        np.testing.assert_allclose(contract.payment_times, [0.1, 0.35, 0.6, 0.85, 1.1])
        self.assertAlmostEqual(contract.accruals[0], 0.1)

    def test_rejects_bad_terms(self) -> None:
        with self.assertRaises(ValueError):
            CdsContract(2.0, 1.0, 0.01, 0.6)
        with self.assertRaises(ValueError):
            CdsContract(0.0, 5.0, 0.01, 1.5)
        with self.assertRaises(ValueError):
            CdsContract(0.0, 5.0, 0.01, 0.6, direction="seller")

    def test_direction_flips_sign(self) -> None:
        contract = CdsContract(0.0, 5.0, 0.01, 0.6)
        curve = cir_implied_curve(MIDDLE)
        receiver = cds_price(contract, curve, DISC)
        payer = cds_price(contract.with_direction("payer"), curve, DISC)
        self.assertAlmostEqual(receiver, -payer, places=15)


class PriceTests(unittest.TestCase):
    def test_breakeven_spread_zeroes_value(self) -> None:
        curve = cir_implied_curve(HIGH)
        contract = CdsContract(0.0, 5.0, 0.0, 0.7)
        spread = breakeven_spread(contract, curve, DISC)
        self.assertAlmostEqual(cds_price(contract.with_spread(spread), curve, DISC), 0.0, delta=1e-12)

    def test_empty_legs(self) -> None:
        contract = CdsContract(0.0, 5.0, 0.0, 0.0)
        self.assertEqual(cds_price(contract, cir_implied_curve(MIDDLE), DISC), 0.0)

    def test_zero_hazard_breakeven_is_zero(self) -> None:
        contract = CdsContract(0.0, 5.0, 0.0, 0.6)
        self.assertEqual(breakeven_spread(contract, SurvivalCurve.flat(0.0), DISC), 0.0)

    def test_flat_hazard_breakeven_is_credit_triangle(self) -> None:
        contract = CdsContract(0.0, 5.0, 0.0, 0.6)
        spread = breakeven_spread(contract, SurvivalCurve.flat(0.02), DISC)
        # Premiums fall at period ends, protection at default: half a period of carry.
        expected = 0.6 * 0.02 * (1.0 + 0.03 * 0.25 / 2.0)
        self.assertAlmostEqual(spread, expected, delta=1e-5, msg="quarterly-adjusted credit triangle")

    def test_zero_annuity_is_reported(self) -> None:
        contract = CdsContract(0.0, 1.0, 0.0, 0.6)
        with self.assertRaises(ZeroAnnuityError):
            breakeven_spread(contract, lambda t: np.zeros_like(np.asarray(t, dtype=float)), DISC)

    def test_middle_preset_at_quoted_spread_is_near_par(self) -> None:
        contract = CdsContract(0.0, 5.0, 0.012, 0.7)
        annuity, _ = cds_legs(contract, cir_implied_curve(MIDDLE), DISC)
        self.assertLessEqual(abs(cds_price(contract, cir_implied_curve(MIDDLE), DISC)), 2e-4 * annuity)

    def test_legs_from_origin_match_default_origin(self) -> None:
        contract = CdsContract(0.0, 3.0, 0.01, 0.6)
        curve = cir_implied_curve(MIDDLE)
        np.testing.assert_allclose(cds_legs(contract, curve, DISC), cds_legs(contract, curve, DISC, t0=0.0))


class PresetBreakevenTests(unittest.TestCase):
    def test_middle_preset(self) -> None:
        self.assertAlmostEqual(_breakeven_bp(MIDDLE, 1.0), 92.0, delta=2.0)
        self.assertAlmostEqual(_breakeven_bp(MIDDLE, 5.0), 120.0, delta=2.0)
        self.assertAlmostEqual(_breakeven_bp(MIDDLE, 10.0), 127.0, delta=2.0)

    def test_high_preset(self) -> None:
        self.assertAlmostEqual(_breakeven_bp(HIGH, 5.0), 251.0, delta=5.0)

    def test_low_preset_is_negligible(self) -> None:
        self.assertLess(_breakeven_bp(LOW, 1.0), 0.5)
        self.assertAlmostEqual(_breakeven_bp(LOW, 10.0), 1.0, delta=2.0)


class ResidualValueTests(unittest.TestCase):
    def test_sure_survival_is_pure_annuity(self) -> None:
        contract = CdsContract(0.0, 5.0, 0.01, 0.6)
        t_j = 2.0
        value = residual_cds_value(contract, t_j, lambda t: np.ones_like(np.asarray(t, dtype=float)), DISC)
        live = contract.payment_times > t_j
        expected = 0.01 * np.sum(contract.accruals[live] * DISC.discount(t_j, contract.payment_times[live]))
        self.assertAlmostEqual(value, expected, places=14)

    def test_payer_sees_negative_annuity(self) -> None:
        contract = CdsContract(0.0, 5.0, 0.01, 0.6, direction="payer")
        value = residual_cds_value(contract, 1.3, lambda t: np.ones_like(np.asarray(t, dtype=float)), DISC)
        self.assertLess(value, 0.0)

    def test_rejects_increasing_survival(self) -> None:
        contract = CdsContract(0.0, 5.0, 0.01, 0.6)
        bumpy = lambda t: np.where(np.asarray(t) > 3.0, 1.0, np.where(np.asarray(t) > 2.5, 0.9, 1.0))
        with self.assertRaises(ValueError):
            residual_cds_value(contract, 2.0, bumpy, DISC)

    def test_rejects_survival_below_one_at_valuation(self) -> None:
        contract = CdsContract(0.0, 5.0, 0.01, 0.6)
        with self.assertRaises(ValueError):
            residual_cds_value(contract, 2.0, lambda t: 0.9 * np.exp(-0.01 * np.asarray(t)), DISC)

    def test_rejects_valuation_after_maturity(self) -> None:
        contract = CdsContract(0.0, 5.0, 0.01, 0.6)
        with self.assertRaises(ValueError):
            residual_cds_value(contract, 5.0, lambda t: np.ones_like(np.asarray(t, dtype=float)), DISC)

    def test_matches_forward_start_pricing_on_conditional_curve(self) -> None:
        contract = CdsContract(0.0, 5.0, 0.015, 0.6)
        t_j = 1.5
        hazard = SurvivalCurve.flat(0.03)
        cond = lambda t: np.exp(-(np.asarray(hazard.integrated_hazard(t)) - hazard.integrated_hazard(t_j)))
        annuity, protection = cds_legs(contract, cond, DISC, t0=t_j)
        expected = 0.015 * annuity - 0.6 * protection
        self.assertAlmostEqual(residual_cds_value(contract, t_j, cond, DISC), expected, places=14)


if __name__ == "__main__":
    unittest.main()
