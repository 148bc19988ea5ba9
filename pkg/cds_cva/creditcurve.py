"""Market curves: CDS quotes, hazard bootstrap, survival and discounting."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from .intensity import CirParams, cir_survival

log = logging.getLogger("cds_cva")

QUOTE_COLUMNS = ("tenor_years", "spread_bp")
ROOT_TOL = 1e-10
MAX_HAZARD = 50.0


class ArbitrageError(ValueError):
    """A quoted tenor can only be repriced with a negative hazard rate."""

    def __init__(self, tenor: float, message: str) -> None:
        super().__init__(f"tenor {tenor:g}y: {message}")
        self.tenor = tenor


@dataclass(frozen=True)
class CdsQuoteCurve:
    tenors: Tuple[float, ...]
    spreads_bp: Tuple[float, ...]
    lgd: float
    name: str = ""

    def __post_init__(self) -> None:
        tenors = tuple(float(t) for t in self.tenors)
        spreads = tuple(float(s) for s in self.spreads_bp)
        if not tenors or len(tenors) != len(spreads):
            raise ValueError(f"{self.name or 'quotes'}: need matching, non-empty tenors and spreads")
        if tenors[0] <= 0.0 or any(b <= a for a, b in zip(tenors, tenors[1:])):
            raise ValueError(f"{self.name or 'quotes'}: tenors must be positive and strictly increasing")
        if any(not math.isfinite(s) or s < 0.0 for s in spreads):
            raise ValueError(f"{self.name or 'quotes'}: spreads must be finite and >= 0")
        if not 0.0 <= self.lgd <= 1.0:
            raise ValueError(f"{self.name or 'quotes'}: LGD must lie in [0, 1], got {self.lgd!r}")
        object.__setattr__(self, "tenors", tenors)
        object.__setattr__(self, "spreads_bp", spreads)
        object.__setattr__(self, "lgd", float(self.lgd))

    @classmethod
    def from_pairs(cls, quotes: Iterable[Tuple[float, float]], lgd: float, name: str = "") -> "CdsQuoteCurve":
        pairs = list(quotes)
        return cls(tuple(t for t, _ in pairs), tuple(s for _, s in pairs), lgd, name)

    @property
    def quotes(self):
        return list(zip(self.tenors, self.spreads_bp))


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    """Piecewise-linear hazard through ``(times, hazards)``; flat after the last knot."""

    times: np.ndarray
    hazards: np.ndarray
    name: str = ""

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        hazards = np.asarray(self.hazards, dtype=float)
        if times.ndim != 1 or times.size < 2 or times.shape != hazards.shape:
            raise ValueError("hazard knots must be two matching 1-D arrays with at least two points")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0.0):
            raise ValueError("hazard knots must start at 0 and be strictly increasing")
        if np.any(hazards < 0.0):
            raise ValueError("hazard rates must be >= 0 at every knot")
        widths = np.diff(times)
        cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (hazards[1:] + hazards[:-1]) * widths)])
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "hazards", hazards)
        object.__setattr__(self, "_cumulative", cumulative)

    @classmethod
    def flat(cls, hazard: float, name: str = "") -> "SurvivalCurve":
        return cls(np.array([0.0, 1.0]), np.array([hazard, hazard]), name)

    def hazard(self, t):
        value = np.interp(np.asarray(t, dtype=float), self.times, self.hazards)
        return float(value) if np.ndim(value) == 0 else value

    def integrated_hazard(self, t):
        t = np.asarray(t, dtype=float)
        times, hazards, cumulative = self.times, self.hazards, self._cumulative
        idx = np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 1)
        start = times[idx]
        dt = t - start
        base = cumulative[idx] + hazards[idx] * dt
        inner = idx < times.size - 1
        nxt = np.minimum(idx + 1, times.size - 1)
        width = np.where(inner, times[nxt] - start, 1.0)
        slope = np.where(inner, (hazards[nxt] - hazards[idx]) / width, 0.0)
        value = base + 0.5 * slope * dt * dt
        return float(value) if value.ndim == 0 else value

    def survival(self, t):
        value = np.exp(-np.asarray(self.integrated_hazard(t)))
        return float(value) if value.ndim == 0 else value

    def average_hazard(self, t: float) -> float:
        return float(self.integrated_hazard(t)) / t


@dataclass(frozen=True)
class CirImpliedCurve:
    """Market curve read off the CIR closed form of a parameter set."""

    params: CirParams
    name: str = ""

    def survival(self, t):
        return cir_survival(self.params, t)

    def hazard(self, t, eps: float = 1e-5):
        t = np.asarray(t, dtype=float)
        lo = np.maximum(t - eps, 0.0)
        hi = t + eps
        value = (np.log(self.survival(lo)) - np.log(self.survival(hi))) / (hi - lo)
        return float(value) if np.ndim(value) == 0 else value


@dataclass(frozen=True, eq=False)
class DiscountCurve:
    """Flat continuously-compounded rate, or log-linear interpolation of a factor table."""

    rate: Optional[float] = None
    times: Optional[np.ndarray] = None
    factors: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if (self.rate is None) == (self.times is None):
            raise ValueError("discount curve needs either a flat rate or a factor table")
        if self.rate is not None:
            if not math.isfinite(self.rate):
                raise ValueError(f"discount rate must be finite, got {self.rate!r}")
            return
        times = np.asarray(self.times, dtype=float)
        factors = np.asarray(self.factors, dtype=float)
        if times.shape != factors.shape or times.ndim != 1 or times.size == 0:
            raise ValueError("discount table needs matching 1-D times and factors")
        if times[0] != 0.0:
            times = np.concatenate([[0.0], times])
            factors = np.concatenate([[1.0], factors])
        if factors[0] != 1.0 or np.any(np.diff(times) <= 0.0) or np.any(factors <= 0.0):
            raise ValueError("discount table must start at D(0,0)=1 with increasing times and positive factors")
        if np.any(np.diff(factors) > 0.0):
            raise ValueError("discount factors must be non-increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "factors", factors)

    @classmethod
    def flat(cls, rate: float) -> "DiscountCurve":
        return cls(rate=float(rate))

    @classmethod
    def from_table(cls, times: Sequence[float], factors: Sequence[float]) -> "DiscountCurve":
        return cls(times=np.asarray(times, dtype=float), factors=np.asarray(factors, dtype=float))

    def factor(self, t):
        """``D(0, t)``."""
        t = np.asarray(t, dtype=float)
        if self.rate is not None:
            value = np.exp(-self.rate * t)
        else:
            log_factors = np.log(self.factors)
            if self.times.size > 1:
                tail_rate = (log_factors[-2] - log_factors[-1]) / (self.times[-1] - self.times[-2])
            else:
                tail_rate = 0.0
            inside = np.interp(t, self.times, log_factors)
            value = np.exp(np.where(t > self.times[-1], log_factors[-1] - tail_rate * (t - self.times[-1]), inside))
        return float(value) if value.ndim == 0 else value

    def discount(self, t1, t2):
        """``D(t1, t2) = D(0, t2) / D(0, t1)``."""
        value = np.asarray(self.factor(t2)) / np.asarray(self.factor(t1))
        return float(value) if value.ndim == 0 else value


def survival(curve, t):
    """``Q(tau > t)`` for any curve exposing ``survival``."""
    if np.any(np.asarray(t) < 0.0):
        raise ValueError("survival time must be >= 0")
    return curve.survival(t)


def discount(curve: DiscountCurve, t1, t2):
    if np.any(np.asarray(t1) < 0.0) or np.any(np.asarray(t2) < np.asarray(t1)):
        raise ValueError("discount needs 0 <= t1 <= t2")
    return curve.discount(t1, t2)


def cir_implied_curve(params: CirParams, name: str = "") -> CirImpliedCurve:
    return CirImpliedCurve(params, name)


def _with_knot(times: list, hazards: list, tenor: float, hazard: float) -> SurvivalCurve:
    if not hazards:
        return SurvivalCurve(np.array([0.0, tenor]), np.array([hazard, hazard]))
    return SurvivalCurve(np.array(times + [tenor]), np.array(hazards + [hazard]))


def bootstrap_hazard(
    curve: CdsQuoteCurve, disc: DiscountCurve, step: float = 1.0 / 52.0, frequency: int = 4
) -> SurvivalCurve:
    """Piecewise-linear hazard knots at the quote tenors repricing every quote to zero.

    The first segment is flat. Each later knot is solved with the earlier ones
    frozen.
    """
    from .cdspricer import CdsContract, cds_legs

    if curve.lgd <= 0.0:
        raise ValueError(f"{curve.name or 'quotes'}: bootstrap needs LGD > 0")
    times: list = [0.0]
    hazards: list = []
    for tenor, spread_bp in curve.quotes:
        spread = spread_bp * 1e-4
        contract = CdsContract(0.0, tenor, spread, curve.lgd, frequency=frequency)

        def value(h: float) -> float:
            trial = _with_knot(times, hazards, tenor, h)
            annuity, protection = cds_legs(contract, trial.survival, disc, step)
            return spread * annuity - curve.lgd * protection

        at_zero = value(0.0)
        if abs(at_zero) <= ROOT_TOL:
            knot = 0.0
        elif at_zero < 0.0:
            raise ArbitrageError(tenor, f"{curve.name or 'quotes'} needs a negative hazard to reprice {spread_bp:g} bp")
        else:
            upper = max(2.0 * spread / curve.lgd, 1e-3)
            while value(upper) > 0.0:
                upper *= 2.0
                if upper > MAX_HAZARD:
                    raise ArbitrageError(tenor, f"{curve.name or 'quotes'}: no hazard below {MAX_HAZARD} reprices the quote")
            knot = brentq(value, 0.0, upper, xtol=1e-14, maxiter=200)
        residual = value(knot)
        if abs(residual) > ROOT_TOL:
            log.warning("BOOTSTRAP: %s tenor %sy residual %.2e", curve.name or "quotes", tenor, residual)
        if not hazards:
            hazards.append(knot)
        times.append(tenor)
        hazards.append(knot)
    return SurvivalCurve(np.array(times), np.array(hazards), curve.name)


def read_quote_csv(path, lgd: float, name: Optional[str] = None) -> CdsQuoteCurve:
    """Load ``tenor_years,spread_bp`` quotes from a CSV file with a header."""
    path = Path(path)
    frame = pd.read_csv(path)
    missing = [column for column in QUOTE_COLUMNS if column not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
    frame = frame.loc[:, list(QUOTE_COLUMNS)].astype(float)
    return CdsQuoteCurve(
        tuple(frame["tenor_years"]),
        tuple(frame["spread_bp"]),
        lgd,
        name or path.stem,
    )
