"""Runtime policy for CVA runs.

Operational choices live here in one place: numerical grid defaults, how many
paths share one random stream, how many workers a run may use, and which
environment variables override those defaults. Scenario files override the
environment field by field (see ``scenario.py``).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from typing import Any, Optional


ENGINE_VERSION = "1.0.0"

# Simulation grid for intensity paths and default-time inversion.
DEFAULT_SIM_STEP = 1.0 / 48.0
# Conditional-survival quadrature: u-grid fineness, residual-CDS time step and
# the standardised range covered by the integrated-intensity CDF grid.
DEFAULT_U_STEP = 1.0 / 400.0
DEFAULT_TIME_STEP = 1.0 / 52.0
DEFAULT_X_MAX_STD = 12.0
DEFAULT_CDF_POINTS = 241

# Paths per random stream. Results only depend on (seed, n_paths, block size),
# never on how blocks are spread over workers.
DEFAULT_BLOCK_SIZE = 250
DEFAULT_N_JOBS = 1

DEFAULT_DISCOUNT_RATE = 0.03
DESK_N_PATHS = 10_000
FULL_N_PATHS = 100_000

VALUATION_MODES = ("coupon", "default")


def env_pick(*names: str, default: str = "") -> str:
    """Return the first non-empty env value from a list of aliases."""
    for name in names:
        value = os.getenv(name)
        if value is not None and value.strip():
            return value
    return default


def env_float(*names: str, default: float) -> float:
    raw = env_pick(*names)
    if not raw:
        return default
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"{names[0]}: expected a number, got {raw!r}") from None


def env_int(*names: str, default: int) -> int:
    raw = env_pick(*names)
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{names[0]}: expected an integer, got {raw!r}") from None


@dataclass(frozen=True)
class EngineSettings:
    """Numerical knobs of the Monte Carlo engine."""

    sim_step: float = DEFAULT_SIM_STEP
    u_step: float = DEFAULT_U_STEP
    time_step: float = DEFAULT_TIME_STEP
    x_max_std: float = DEFAULT_X_MAX_STD
    cdf_points: int = DEFAULT_CDF_POINTS
    block_size: int = DEFAULT_BLOCK_SIZE
    n_jobs: int = DEFAULT_N_JOBS
    valuation: str = "coupon"

    def __post_init__(self) -> None:
        for name in ("sim_step", "u_step", "time_step"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must be in (0, 1] years, got {value!r}")
        if self.x_max_std < 4.0:
            raise ValueError(f"x_max_std must be >= 4, got {self.x_max_std!r}")
        if self.cdf_points < 11:
            raise ValueError(f"cdf_points must be >= 11, got {self.cdf_points!r}")
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size!r}")
        if self.n_jobs == 0:
            raise ValueError("n_jobs must be non-zero")
        if self.valuation not in VALUATION_MODES:
            raise ValueError(f"valuation must be one of {VALUATION_MODES}, got {self.valuation!r}")

    @classmethod
    def from_env(cls) -> "EngineSettings":
        """Defaults overridden by CVA_* environment variables."""
        return cls(
            sim_step=env_float("CVA_SIM_STEP", default=DEFAULT_SIM_STEP),
            block_size=env_int("CVA_BLOCK_SIZE", default=DEFAULT_BLOCK_SIZE),
            n_jobs=env_int("CVA_N_JOBS", default=DEFAULT_N_JOBS),
            valuation=env_pick("CVA_VALUATION", default="coupon").strip(),
        )

    def updated(self, **overrides: Optional[Any]) -> "EngineSettings":
        """Copy with every non-None override applied."""
        known = {item.name for item in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise TypeError(f"unknown engine settings: {sorted(unknown)}")
        return replace(self, **{key: value for key, value in overrides.items() if value is not None})


def default_discount_rate() -> float:
    return env_float("CVA_DISCOUNT_RATE", default=DEFAULT_DISCOUNT_RATE)
