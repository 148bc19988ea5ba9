"""Command-line entry point for the CVA engine.

``python cva_run.py cva --config scenarios/base_nu2_020.yaml --out out/base.csv``
runs one scenario sweep. The commands live in ``cds_cva.pipeline``; this file
loads ``.env``, sets up logging and re-exports the helpers notebooks use.
"""

from __future__ import annotations

import logging
import os
import sys

try:
    from dotenv import load_dotenv
except ModuleNotFoundError:  # Allows tests/imports before `pip install -r requirements.txt`.
    def load_dotenv(*_args, **_kwargs):
        return False

load_dotenv()
logging.basicConfig(
    format="%(asctime)s - %(levelname)s - %(message)s",
    level=os.getenv("CVA_LOG_LEVEL", "INFO").upper(),
)
log = logging.getLogger("cds_cva")

from cds_cva.cdspricer import CdsContract, breakeven_spread, cds_price, residual_cds_value
from cds_cva.creditcurve import bootstrap_hazard, read_quote_csv
from cds_cva.cvaengine import calculate_adjustment, mark_to_market, merge_adjustments
from cds_cva.pipeline import (
    build_parser,
    main,
    run_bootstrap,
    run_breakeven,
    run_cva_sweep,
    run_mtm,
    write_table,
)
from cds_cva.scenario import build_model, load_config


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        log.info("Stopped.")
