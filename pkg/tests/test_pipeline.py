from __future__ import annotations

import io
import json
import tempfile
import textwrap
import unittest
from contextlib import redirect_stderr, redirect_stdout
from dataclasses import replace
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd

from cds_cva import pipeline
from cds_cva.cdspricer import residual_cds_value
from cds_cva.cvaengine import calculate_adjustment
from cds_cva.scenario import ROLES, ConfigError, SweepConfig, build_model, load_config, market_curves
from cds_cva.utils import cell_seed


SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

# Party LGDs are zero so the sweep wiring runs without path valuations.
SMALL = """\
names:
  investor:
    cir: low
    lgd: 0
  reference:
    cir: middle
    market: {reference_market}
  counterparty:
    cir: high
    lgd: 0
contract:
  maturity: 2
discount_rate: 0.03
dates:
  inception: 2006-01-05
  valuation: {valuation}
monte_carlo:
  n_paths: 20
  seed: 3
  block_size: 20
  u_step: 0.01
  n_jobs: 1
sweep:
  nu: {nus}
  correlations:
    - [0, 0, 0]
    - [0, 0, 0.5]
"""


class _Workspace(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self._tmp.cleanup)
        self.dir = Path(self._tmp.name)

    def write(self, name: str, reference_market: str = "cir", valuation: str = "2007-01-05", nus: str = "[0.1, 0.2]") -> Path:
        path = self.dir / name
        text = SMALL.format(reference_market=reference_market, valuation=valuation, nus=nus)
        path.write_text(textwrap.dedent(text), encoding="utf-8")
        return path


class BreakevenTests(unittest.TestCase):
    def test_preset_table(self) -> None:
        frame = pipeline.run_breakeven(load_config(SCENARIOS / "breakeven.yaml"))
        self.assertEqual(list(frame.columns), pipeline.BREAKEVEN_COLUMNS)
        self.assertEqual(len(frame), 30)
        self.assertTrue((frame["error"] == "").all())
        middle = frame[(frame["preset"] == "middle") & (frame["tenor_years"] == 5.0)]["spread_bp"].iloc[0]
        self.assertAlmostEqual(middle, 120.0, delta=2.0)
        by_preset = frame.groupby("preset")["spread_bp"].mean()
        self.assertLess(by_preset["low"], by_preset["middle"])
        self.assertLess(by_preset["middle"], by_preset["high"])
        self.assertEqual(frame.attrs["meta"]["command"], "breakeven")

    def test_needs_breakeven_block(self) -> None:
        with self.assertRaises(ConfigError):
            pipeline.run_breakeven(load_config(SCENARIOS / "base_nu2_020.yaml"))


class CvaSweepTests(_Workspace):
    def test_rows_follow_cell_order(self) -> None:
        frame = pipeline.run_cva_sweep(load_config(self.write("small.yaml")))
        self.assertEqual(list(frame.columns), pipeline.CVA_COLUMNS)
        self.assertEqual(list(frame["r12"]), [0.0, 0.0, 0.5, 0.5])
        self.assertEqual(list(frame["nu1"]), [0.1, 0.2, 0.1, 0.2])
        self.assertTrue((frame["error"] == "").all())
        self.assertTrue((frame["payer_bp"] == 0.0).all())
        self.assertTrue((frame["receiver_bp"] == 0.0).all())
        meta = frame.attrs["meta"]
        self.assertEqual((meta["command"], meta["n_paths"], meta["seed"]), ("cva", 20, 3))

    def test_failed_cell_is_reported_and_the_run_continues(self) -> None:
        real = pipeline.calculate_adjustment

        def flaky(model, n_paths, seed, settings=None):
            if model.copula.r12 == 0.5 and model.models[1].params.nu == 0.2:
                raise RuntimeError("boom")
            return real(model, n_paths, seed, settings)

        config = load_config(self.write("small.yaml"))
        with patch("cds_cva.pipeline.calculate_adjustment", side_effect=flaky):
            with self.assertLogs("cds_cva", level="ERROR"):
                frame = pipeline.run_cva_sweep(config)
        self.assertEqual(frame.loc[3, "error"], "RuntimeError: boom")
        self.assertTrue(np.isnan(frame.loc[3, "payer_bp"]))
        self.assertTrue((frame.loc[:2, "error"] == "").all())

    def test_needs_a_contract(self) -> None:
        path = self.dir / "names_only.yaml"
        path.write_text("names:\n  investor: {cir: low}\n  reference: {cir: low}\n  counterparty: {cir: low}\n")
        with self.assertRaises(ConfigError):
            pipeline.run_cva_sweep(load_config(path))


class MarkToMarketTests(_Workspace):
    def test_widening_reference_spread(self) -> None:
        inception = load_config(self.write("t0.yaml", nus="[0.1]"))
        valuation = load_config(self.write("t1.yaml", reference_market="high", nus="[0.1]"))
        frame = pipeline.run_mtm(inception, valuation)
        self.assertEqual(list(frame.columns), pipeline.MTM_COLUMNS)
        self.assertEqual(list(frame["direction"]), ["payer", "receiver", "payer", "receiver"])
        self.assertTrue((frame["error"] == "").all())
        payer = frame[frame["direction"] == "payer"].reset_index(drop=True)
        receiver = frame[frame["direction"] == "receiver"].reset_index(drop=True)
        self.assertTrue((receiver["mtm_bp"] < 0.0).all())
        np.testing.assert_allclose(payer["mtm_bp"], -receiver["mtm_bp"], atol=1e-9)
        np.testing.assert_allclose(payer["risk_free_bp"], -receiver["risk_free_bp"])
        self.assertAlmostEqual(frame.attrs["meta"]["elapsed_years"], 1.0)
        self.assertEqual(frame.attrs["meta"]["inception_hash"], inception.config_hash())

    def test_valuation_before_inception_is_rejected(self) -> None:
        inception = load_config(self.write("t0.yaml", nus="[0.1]"))
        valuation = load_config(self.write("t1.yaml", valuation="2005-06-01", nus="[0.1]"))
        with self.assertRaises(ConfigError):
            pipeline.run_mtm(inception, valuation)


class BootstrapTests(_Workspace):
    def test_quote_curves_are_dumped_at_knots(self) -> None:
        frame = pipeline.run_bootstrap(load_config(SCENARIOS / "quotes_2006.yaml"))
        self.assertEqual(list(frame.columns), pipeline.BOOTSTRAP_COLUMNS)
        self.assertEqual(len(frame), 3 * 11)
        for name, group in frame.groupby("name"):
            with self.subTest(name=name):
                self.assertEqual(group["survival"].iloc[0], 1.0)
                self.assertTrue((np.diff(group["survival"]) <= 0.0).all())
                self.assertTrue((group["hazard"] >= 0.0).all())

    def test_cir_curves_use_a_quarterly_grid(self) -> None:
        frame = pipeline.run_bootstrap(load_config(self.write("small.yaml")))
        self.assertEqual(len(frame), 3 * 9)
        self.assertEqual(set(frame["name"]), {"investor", "reference", "counterparty"})


class OutputTests(_Workspace):
    def test_write_table_with_meta_sidecar(self) -> None:
        frame = pipeline.run_breakeven(load_config(SCENARIOS / "breakeven.yaml"))
        out = self.dir / "nested" / "breakeven.csv"
        pipeline.write_table(frame, str(out))
        loaded = pd.read_csv(out, keep_default_na=False)
        self.assertEqual(list(loaded.columns), pipeline.BREAKEVEN_COLUMNS)
        self.assertEqual(len(loaded), 30)
        meta = json.loads((self.dir / "nested" / "breakeven.csv.meta.json").read_text())
        self.assertEqual(meta["command"], "breakeven")
        self.assertIn("created_at", meta)
        self.assertEqual(len(meta["config_hash"]), 64)

    def test_write_table_to_stdout(self) -> None:
        frame = pd.DataFrame({"a": [0.5]}, columns=["a"])
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            pipeline.write_table(frame, None)
        self.assertEqual(buffer.getvalue(), "a\n0.500000\n")


class MainTests(_Workspace):
    def _main(self, *argv: str):
        err = io.StringIO()
        with redirect_stderr(err):
            code = pipeline.main(list(argv))
        return code, err.getvalue()

    def test_breakeven_to_file(self) -> None:
        out = self.dir / "table.csv"
        code, _ = self._main("breakeven", "--config", str(SCENARIOS / "breakeven.yaml"), "--out", str(out))
        self.assertEqual(code, 0)
        self.assertTrue(out.exists())

    def test_overrides_reach_the_run(self) -> None:
        out = self.dir / "cva.csv"
        path = self.write("small.yaml", nus="[0.1]")
        code, _ = self._main("cva", "--config", str(path), "--paths", "10", "--seed", "4", "--out", str(out))
        self.assertEqual(code, 0)
        meta = json.loads(Path(str(out) + ".meta.json").read_text())
        self.assertEqual((meta["n_paths"], meta["seed"]), (10, 4))

    def test_missing_config_reports_json_error(self) -> None:
        missing = self.dir / "absent.yaml"
        code, err = self._main("cva", "--config", str(missing))
        self.assertEqual(code, 2)
        summary = json.loads(err.strip().splitlines()[-1])
        self.assertEqual(summary["error"], "ConfigError")
        self.assertEqual(summary["where"], str(missing))

    def test_error_line_is_reported(self) -> None:
        path = self.dir / "bad.yaml"
        path.write_text("names:\n  reference:\n    cir: middle\n    lgd: 1.5\n", encoding="utf-8")
        code, err = self._main("cva", "--config", str(path))
        self.assertEqual(code, 2)
        self.assertEqual(json.loads(err.strip().splitlines()[-1])["line"], 4)

    def test_mtm_needs_valuation_config(self) -> None:
        code, err = self._main("mtm", "--config", str(self.write("t0.yaml")))
        self.assertEqual(code, 2)
        self.assertIn("--valuation-config", json.loads(err.strip().splitlines()[-1])["message"])


def _base_cell(correlation, nu, n_paths: int = 2000):
    config = load_config(SCENARIOS / "base_nu2_020.yaml")
    index = next(i for i, corr, v in config.cells() if corr == tuple(correlation) and v == 0.01)
    model = build_model(config, tuple(correlation), nu)
    return config, model, calculate_adjustment(model, n_paths, cell_seed(config.monte_carlo.seed, index), config.monte_carlo.settings)


def _independent_payer_bp(config, model, substeps: int = 24) -> float:
    """Payer adjustment of an independent cell with a deterministic reference intensity.

    The residual CDS after a counterparty default at ``tau`` is then the
    forward contract on the market curve at the next coupon date, so the
    adjustment reduces to a sum over coupon periods.
    """
    q0, q1, q2 = (market_curves(config)[role].survival for role in ROLES)
    contract = model.contract.with_direction("receiver")
    step = config.monte_carlo.settings.time_step
    dates = np.concatenate([[contract.t_start], contract.payment_times])
    total = 0.0
    for start, end in zip(dates[:-1], dates[1:]):
        if end >= contract.t_end:
            break
        s = np.linspace(start, end, substeps + 1)
        mid = 0.5 * (s[1:] + s[:-1])
        weight = float(np.sum((q2(s[:-1]) - q2(s[1:])) * q0(mid) * q1(mid)))
        forward = residual_cds_value(contract, end, lambda t, e=end: q1(t) / q1(e), model.discount, step)
        total += weight * float(model.discount.factor(end)) * max(-forward, 0.0)
    return model.lgd[2] * total * 1e4


class ShippedScenarioTests(unittest.TestCase):
    def test_independent_cell_matches_forward_valuation(self) -> None:
        config, model, result = _base_cell((0.0, 0.0, 0.0), 0.0)
        expected = _independent_payer_bp(config, model)
        self.assertGreater(expected, 0.2)
        self.assertLess(expected, 1.5)
        self.assertLessEqual(abs(result.payer_cva - expected), 3.0 * result.payer_se + 0.05)
        self.assertEqual(result.receiver_cva, 0.0)

    def test_low_volatility_independent_cell_stays_near_forward(self) -> None:
        config, model, result = _base_cell((0.0, 0.0, 0.0), 0.01)
        expected = _independent_payer_bp(config, build_model(config, (0.0, 0.0, 0.0), 0.0))
        self.assertLessEqual(abs(result.payer_cva - expected), 3.0 * result.payer_se + 0.3 * expected)

    def test_wrong_way_cell_reduced_paths(self) -> None:
        _, _, result = _base_cell((0.0, 0.0, 0.9), 0.01)
        band = 3.0 * float(np.hypot(result.payer_se, 6.1))
        self.assertLessEqual(abs(result.payer_cva - 68.4), band, f"{result.payer_cva:.2f} (band {band:.2f})")
        self.assertLess(abs(result.receiver_cva), 0.1 + 3.0 * result.receiver_se)

    def test_mark_to_market_signs_reduced_paths(self) -> None:
        inception = load_config(SCENARIOS / "mtm_shell_2006.yaml")
        valuation = load_config(SCENARIOS / "mtm_shell_2008.yaml").with_overrides(n_paths=500)
        valuation = replace(valuation, sweep=SweepConfig(((0.0, 0.0, 0.0),), (0.01,), valuation.sweep.vary))
        frame = pipeline.run_mtm(inception, valuation).set_index("direction")
        self.assertTrue((frame["error"] == "").all(), frame["error"].tolist())
        payer, receiver = frame.loc["payer"], frame.loc["receiver"]
        self.assertAlmostEqual(payer["risk_free_bp"], 84.2, delta=3.0)
        self.assertEqual(receiver["risk_free_bp"], -payer["risk_free_bp"])
        self.assertGreater(payer["mtm_bp"], 0.0)
        self.assertLess(payer["mtm_bp"], payer["risk_free_bp"])
        self.assertLess(receiver["mtm_bp"], 0.0)


if __name__ == "__main__":
    unittest.main()
