"""Running-spread CDS valuation on deterministic or conditional survival curves."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np

from .creditcurve import DiscountCurve

DIRECTIONS = ("receiver", "payer")
DEFAULT_LEG_STEP = 1.0 / 52.0
SURVIVAL_TOL = 1e-8
GRID_TOL = 1e-12


class ZeroAnnuityError(ZeroDivisionError):
    """Premium leg has no value, so no running spread can balance protection."""


@dataclass(frozen=True)
class CdsContract:
    """Running CDS on the reference name, notional 1.

    Coupon dates roll back from ``t_end`` every ``1/frequency`` years; the
    first period may be a short stub.
    """

    t_start: float
    t_end: float
    spread: float
    lgd: float
    direction: str = "receiver"
    frequency: int = 4

    def __post_init__(self) -> None:
        for field in ("t_start", "t_end", "spread", "lgd"):
            value = float(getattr(self, field))
            if not math.isfinite(value):
                raise ValueError(f"contract {field} must be finite, got {value!r}")
            object.__setattr__(self, field, value)
        if self.t_start < 0.0 or self.t_end <= self.t_start:
            raise ValueError(f"contract needs 0 <= T_a < T_b, got ({self.t_start}, {self.t_end})")
        if self.spread < 0.0:
            raise ValueError(f"contract spread must be >= 0, got {self.spread!r}")
        if not 0.0 <= self.lgd <= 1.0:
            raise ValueError(f"contract LGD must lie in [0, 1], got {self.lgd!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"contract direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if int(self.frequency) < 1:
            raise ValueError(f"coupon frequency must be >= 1, got {self.frequency!r}")
        object.__setattr__(self, "frequency", int(self.frequency))

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "receiver" else -1.0

    @property
    def payment_times(self) -> np.ndarray:
        length = self.t_end - self.t_start
        n = max(1, int(math.ceil(length * self.frequency - 1e-9)))
        times = self.t_end - np.arange(n - 1, -1, -1) / self.frequency
        return times[times > self.t_start + GRID_TOL]

    @property
    def accruals(self) -> np.ndarray:
        times = self.payment_times
        return np.diff(np.concatenate([[self.t_start], times]))

    def with_spread(self, spread: float) -> "CdsContract":
        return replace(self, spread=spread)

    def with_direction(self, direction: str) -> "CdsContract":
        return replace(self, direction=direction)


def _survival_fn(surv) -> Callable:
    if hasattr(surv, "survival"):
        return surv.survival
    if callable(surv):
        return surv
    raise TypeError(f"survival input must be callable or expose .survival, got {type(surv).__name__}")


def _leg_grid(contract: CdsContract, start: float, step: float):
    """Integration knots from ``start`` to ``T_b``.

    Returns the knots, the accrual anchor of every cell, the knot index of each
    live coupon date and the accruals of those coupons.
    """
    coupons = contract.payment_times
    accruals = contract.accruals
    begins = np.concatenate([[contract.t_start], coupons[:-1]])
    knots = [start]
    anchors = []
    coupon_index = []
    live_accruals = []
    for begin, end, alpha in zip(begins, coupons, accruals):
        if end <= start + GRID_TOL:
            continue
        lo = max(begin, start)
        n = max(1, int(math.ceil((end - lo) / step - 1e-9)))
        knots.extend(np.linspace(lo, end, n + 1)[1:])
        anchors.extend([begin] * n)
        coupon_index.append(len(knots) - 1)
        live_accruals.append(alpha)
    return (
        np.asarray(knots, dtype=float),
        np.asarray(anchors, dtype=float),
        np.asarray(coupon_index, dtype=int),
        np.asarray(live_accruals, dtype=float),
    )


def _legs_on_grid(grid, q: np.ndarray, disc: DiscountCurve, origin: float) -> Tuple[float, float]:
    knots, anchors, coupon_index, accruals = grid
    default_mass = q[:-1] - q[1:]
    mids = 0.5 * (knots[:-1] + knots[1:])
    d_mid = np.asarray(disc.discount(origin, mids))
    pay_times = knots[coupon_index]
    coupon_part = float(np.sum(accruals * np.asarray(disc.discount(origin, pay_times)) * q[coupon_index]))
    accrual_part = float(np.sum(d_mid * (mids - anchors) * default_mass))
    protection = float(np.sum(d_mid * default_mass))
    return coupon_part + accrual_part, protection


def cds_legs(
    contract: CdsContract,
    surv,
    disc: DiscountCurve,
    step: float = DEFAULT_LEG_STEP,
    t0: Optional[float] = None,
) -> Tuple[float, float]:
    """Premium annuity (per unit spread) and protection leg (per unit LGD).

    Without ``t0`` the legs run over ``(T_a, T_b]`` discounted to 0. With
    ``t0`` they run over ``(max(T_a, t0), T_b]`` discounted to ``t0``.
    """
    if step <= 0.0:
        raise ValueError(f"leg integration step must be > 0, got {step!r}")
    survival_at = _survival_fn(surv)
    origin = 0.0 if t0 is None else float(t0)
    start = contract.t_start if t0 is None else max(contract.t_start, origin)
    grid = _leg_grid(contract, start, step)
    q = np.asarray(survival_at(grid[0]), dtype=float)
    return _legs_on_grid(grid, q, disc, origin)


def cds_price(contract: CdsContract, surv, disc: DiscountCurve, step: float = DEFAULT_LEG_STEP) -> float:
    """Receiver value ``S * annuity - LGD * protection``; payer is its negative."""
    annuity, protection = cds_legs(contract, surv, disc, step)
    return contract.sign * (contract.spread * annuity - contract.lgd * protection)


def breakeven_spread(contract: CdsContract, surv, disc: DiscountCurve, step: float = DEFAULT_LEG_STEP) -> float:
    annuity, protection = cds_legs(contract, surv, disc, step)
    if annuity <= 0.0:
        raise ZeroAnnuityError(f"premium leg annuity is {annuity!r} on ({contract.t_start}, {contract.t_end}]")
    return contract.lgd * protection / annuity


def residual_cds_value(
    contract: CdsContract,
    T_j: float,
    cond_surv,
    disc: DiscountCurve,
    step: float = DEFAULT_LEG_STEP,
) -> float:
    """Value at ``T_j`` of the remaining legs under ``t -> Q(tau_1 > t | G_Tj)``."""
    if not contract.t_start - GRID_TOL <= T_j < contract.t_end:
        raise ValueError(f"residual valuation time {T_j!r} outside [T_a, T_b)")
    survival_at = _survival_fn(cond_surv)
    grid = _leg_grid(contract, max(contract.t_start, T_j), step)
    q = np.asarray(survival_at(grid[0]), dtype=float)
    if abs(q[0] - 1.0) > SURVIVAL_TOL:
        raise ValueError(f"conditional survival must equal 1 at T_j, got {q[0]!r}")
    if np.any(np.diff(q) > SURVIVAL_TOL) or np.any(q < -SURVIVAL_TOL) or np.any(q > 1.0 + SURVIVAL_TOL):
        raise ValueError("conditional survival must be a non-increasing probability curve")
    annuity, protection = _legs_on_grid(grid, q, disc, float(T_j))
    return contract.sign * (contract.spread * annuity - contract.lgd * protection)
