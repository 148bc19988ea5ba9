"""Batch front end: breakeven tables, CVA sweeps, MTM runs and curve dumps.

Every ``run_*`` function returns a pandas DataFrame with one row per
configured cell. A failing cell is logged, its message lands in the ``error``
column and the run moves on. ``main`` wires the command line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .cdspricer import CdsContract, breakeven_spread
from .creditcurve import SurvivalCurve, cir_implied_curve
from .cvaengine import calculate_adjustment, mark_to_market
from .runtime import ENGINE_VERSION, FULL_N_PATHS
from .scenario import (
    PRESET_LGD,
    PRESETS,
    ROLES,
    ConfigError,
    ScenarioConfig,
    build_model,
    discount_curve,
    elapsed_years,
    load_config,
    market_curve,
    market_curves,
)
from .utils import cell_seed

log = logging.getLogger("cds_cva")

CVA_COLUMNS = ["r01", "r02", "r12", "nu1", "payer_bp", "payer_se", "receiver_bp", "receiver_se", "error"]
MTM_COLUMNS = ["r01", "r02", "r12", "nu1", "direction", "mtm_bp", "mtm_se", "risk_free_bp", "error"]
BREAKEVEN_COLUMNS = ["preset", "tenor_years", "lgd", "spread_bp", "error"]
BOOTSTRAP_COLUMNS = ["name", "t", "hazard", "survival"]
FLOAT_FORMAT = "%.6f"
CURVE_DUMP_STEP = 0.25


def _with_meta(frame: pd.DataFrame, config: ScenarioConfig, command: str, **extra: Any) -> pd.DataFrame:
    frame.attrs["meta"] = {
        "command": command,
        "seed": config.monte_carlo.seed,
        "n_paths": config.monte_carlo.n_paths,
        "engine_version": ENGINE_VERSION,
        "config_hash": config.config_hash(),
        "sweep_vary": config.sweep.vary,
        **extra,
    }
    return frame


def run_breakeven(config: ScenarioConfig) -> pd.DataFrame:
    """Break-even spreads (bp) of the CIR-implied preset curves per tenor."""
    if config.breakeven is None:
        raise ConfigError(config.path, "is required for the breakeven command", key="breakeven")
    terms = config.breakeven
    disc = discount_curve(config)
    rows: List[Dict[str, Any]] = []
    log.info("BREAKEVEN: start (%s presets x %s tenors)", len(terms.presets), len(terms.tenors))
    for preset in terms.presets:
        curve = cir_implied_curve(PRESETS[preset], preset)
        lgd = PRESET_LGD[preset] if terms.lgd is None else terms.lgd
        for tenor in terms.tenors:
            row: Dict[str, Any] = {"preset": preset, "tenor_years": tenor, "lgd": lgd, "spread_bp": np.nan, "error": ""}
            try:
                contract = CdsContract(0.0, tenor, 0.0, lgd, frequency=terms.frequency)
                row["spread_bp"] = breakeven_spread(contract, curve, disc) * 1e4
            except Exception as err:
                log.exception("BREAKEVEN: %s %sy failed", preset, tenor)
                row["error"] = f"{type(err).__name__}: {err}"
            rows.append(row)
    log.info("BREAKEVEN: done")
    return _with_meta(pd.DataFrame(rows, columns=BREAKEVEN_COLUMNS), config, "breakeven")


def _cva_cell(config: ScenarioConfig, curves: Dict[str, Any], index: int, correlation, nu) -> Dict[str, Any]:
    mc = config.monte_carlo
    row: Dict[str, Any] = dict(zip(("r01", "r02", "r12"), correlation))
    row["nu1"] = config.swept_nu(nu)
    row.update(payer_bp=np.nan, payer_se=np.nan, receiver_bp=np.nan, receiver_se=np.nan, error="")
    try:
        model = build_model(config, correlation, nu, curves)
        result = calculate_adjustment(model, mc.n_paths, cell_seed(mc.seed, index), mc.settings)
        row.update(
            payer_bp=result.payer_cva,
            payer_se=result.payer_se,
            receiver_bp=result.receiver_cva,
            receiver_se=result.receiver_se,
        )
    except Exception as err:
        log.exception("CVA sweep: cell %s failed", index)
        row["error"] = f"{type(err).__name__}: {err}"
    return row


def _map_cells(config: ScenarioConfig, worker, *args) -> List[Any]:
    """Run ``worker`` over the sweep cells; results come back in configured order."""
    cells = config.cells()
    settings = config.monte_carlo.settings
    if settings.n_jobs != 1 and len(cells) > 1:
        serial = replace(config, monte_carlo=replace(config.monte_carlo, settings=settings.updated(n_jobs=1)))
        return Parallel(n_jobs=settings.n_jobs)(
            delayed(worker)(serial, *args, index, corr, nu) for index, corr, nu in cells
        )
    out = []
    for index, corr, nu in cells:
        log.info("CELL: %s/%s r=%s nu=%s", index + 1, len(cells), corr, nu)
        out.append(worker(config, *args, index, corr, nu))
    return out


def run_cva_sweep(config: ScenarioConfig) -> pd.DataFrame:
    """One adjustment per (correlation triple, volatility) cell."""
    config.require_names()
    config.require_cells()
    curves = market_curves(config)
    log.info("CVA sweep: start (%s cells, %s paths)", len(config.cells()), config.monte_carlo.n_paths)
    rows = _map_cells(config, _cva_cell, curves)
    failed = sum(1 for row in rows if row["error"])
    log.info("CVA sweep: done (failed=%s)", failed)
    return _with_meta(pd.DataFrame(rows, columns=CVA_COLUMNS), config, "cva")


def _mtm_cell(
    config: ScenarioConfig,
    inception: ScenarioConfig,
    curves_t0: Dict[str, Any],
    curves_t1: Dict[str, Any],
    elapsed: float,
    index: int,
    correlation,
    nu,
) -> List[Dict[str, Any]]:
    mc = config.monte_carlo
    base: Dict[str, Any] = dict(zip(("r01", "r02", "r12"), correlation))
    base["nu1"] = config.swept_nu(nu)
    rows = [
        {**base, "direction": direction, "mtm_bp": np.nan, "mtm_se": np.nan, "risk_free_bp": np.nan, "error": ""}
        for direction in ("payer", "receiver")
    ]
    try:
        model_t0 = build_model(inception, correlation, nu, curves_t0)
        contract = model_t0.contract
        model_t1 = build_model(config, correlation, nu, curves_t1, spread=contract.spread)
        result = mark_to_market(model_t0, model_t1, contract, mc.n_paths, cell_seed(mc.seed, index), elapsed, mc.settings)
        rows[0].update(mtm_bp=result.payer_mtm, mtm_se=result.payer_se, risk_free_bp=-result.risk_free_mtm)
        rows[1].update(mtm_bp=result.receiver_mtm, mtm_se=result.receiver_se, risk_free_bp=result.risk_free_mtm)
    except Exception as err:
        log.exception("MTM: cell %s failed", index)
        for row in rows:
            row["error"] = f"{type(err).__name__}: {err}"
    return rows


def run_mtm(config_inception: ScenarioConfig, config_valuation: ScenarioConfig) -> pd.DataFrame:
    """Mark-to-market per sweep cell, payer and receiver rows.

    The sweep and Monte Carlo controls come from the valuation config; the
    contract spread is fixed at inception.
    """
    config_inception.require_names()
    config_valuation.require_names()
    config_valuation.require_cells()
    elapsed = elapsed_years(config_inception, config_valuation)
    curves_t0 = market_curves(config_inception)
    curves_t1 = market_curves(config_valuation)
    log.info("MTM: start (%s cells, elapsed=%.4fy)", len(config_valuation.cells()), elapsed)
    nested = _map_cells(config_valuation, _mtm_cell, config_inception, curves_t0, curves_t1, elapsed)
    rows = [row for pair in nested for row in pair]
    log.info("MTM: done (failed=%s)", sum(1 for row in rows if row["error"]) // 2)
    return _with_meta(
        pd.DataFrame(rows, columns=MTM_COLUMNS),
        config_valuation,
        "mtm",
        inception_hash=config_inception.config_hash(),
        elapsed_years=elapsed,
    )


def run_bootstrap(config: ScenarioConfig) -> pd.DataFrame:
    """Market survival curves of the configured names.

    Bootstrapped curves are dumped at their hazard knots, CIR-implied ones on
    a quarterly grid up to the contract maturity.
    """
    rows: List[Dict[str, Any]] = []
    horizon = config.contract.maturity if config.contract else 10.0
    for role in ROLES:
        if role not in config.names:
            continue
        curve = market_curve(config, role)
        label = config.names[role].label
        if isinstance(curve, SurvivalCurve):
            times = curve.times
        else:
            times = np.arange(0.0, horizon + 1e-9, CURVE_DUMP_STEP)
        hazard = np.atleast_1d(curve.hazard(times))
        survival = np.atleast_1d(curve.survival(times))
        rows.extend({"name": label, "t": t, "hazard": h, "survival": q} for t, h, q in zip(times, hazard, survival))
    if not rows:
        raise ConfigError(config.path, "no name blocks to bootstrap", key="names")
    return _with_meta(pd.DataFrame(rows, columns=BOOTSTRAP_COLUMNS), config, "bootstrap")


def write_table(frame: pd.DataFrame, out: Optional[str]) -> None:
    """CSV with a fixed float format; metadata goes to ``<out>.meta.json``."""
    text = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    meta = dict(frame.attrs.get("meta", {}))
    meta["created_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    meta_path = path.with_name(path.name + ".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    log.info("OUTPUT: %s rows -> %s", len(frame), path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cva_run.py", description="Bilateral CVA for CDS contracts.")
    parser.add_argument("command", choices=("breakeven", "cva", "mtm", "bootstrap"))
    parser.add_argument("--config", required=True, help="scenario YAML (inception config for mtm)")
    parser.add_argument("--valuation-config", help="scenario YAML at the valuation date (mtm only)")
    parser.add_argument("--seed", type=int, help="override monte_carlo.seed")
    parser.add_argument("--paths", type=int, help="override monte_carlo.n_paths")
    parser.add_argument("--out", help="CSV output path (stdout when omitted)")
    parser.add_argument("--full", action="store_true", help=f"use {FULL_N_PATHS} paths")
    return parser


def _load(path: str, args: argparse.Namespace) -> ScenarioConfig:
    n_paths = args.paths if args.paths is not None else (FULL_N_PATHS if args.full else None)
    return load_config(path).with_overrides(n_paths=n_paths, seed=args.seed)


def _run(args: argparse.Namespace) -> pd.DataFrame:
    config = _load(args.config, args)
    if args.command == "breakeven":
        return run_breakeven(config)
    if args.command == "cva":
        return run_cva_sweep(config)
    if args.command == "bootstrap":
        return run_bootstrap(config)
    if not args.valuation_config:
        raise ConfigError(None, "mtm needs --valuation-config", key="--valuation-config")
    return run_mtm(config, _load(args.valuation_config, args))


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; 0 on success, 2 with a JSON error line on stderr otherwise."""
    args = build_parser().parse_args(argv)
    try:
        frame = _run(args)
        write_table(frame, args.out)
    except Exception as err:
        log.debug("CLI: %s failed", args.command, exc_info=True)
        summary = {
            "error": type(err).__name__,
            "message": str(err),
            "where": getattr(err, "path", None) or args.config,
        }
        if getattr(err, "line", None):
            summary["line"] = err.line
        sys.stderr.write(json.dumps(summary) + "\n")
        return 2
    return 0
