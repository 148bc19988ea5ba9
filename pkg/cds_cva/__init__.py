"""Bilateral counterparty valuation adjustment for CDS contracts."""

from .cdspricer import CdsContract, breakeven_spread, cds_price
from .cvaengine import ScenarioModel, calculate_adjustment, mark_to_market

__all__ = [
    "CdsContract",
    "ScenarioModel",
    "breakeven_spread",
    "calculate_adjustment",
    "cds_price",
    "load_config",
    "mark_to_market",
]


def __getattr__(name: str):
    """Load the YAML-backed scenario layer only when callers ask for it."""
    if name == "load_config":
        from .scenario import load_config

        return load_config
    raise AttributeError(name)
