"""Shifted CIR default intensities.

Each name's intensity is ``lambda(t) = y(t) + psi(t)`` where ``y`` is a CIR
diffusion and ``psi`` a deterministic shift chosen so that model survival
probabilities reproduce a market curve. This module samples ``y`` exactly
through its noncentral chi-square transition, prices ``E[exp(-Y(t))]`` in
closed form, calibrates the integrated shift ``Psi`` and recovers the law of
the integrated process ``Y`` from its characteristic function.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np

log = logging.getLogger("cds_cva")

# Below this volatility the closed forms switch to the deterministic ODE limit;
# the chi-square parameterisation divides by nu**2.
NU_EPS = 1e-5
CF_OMEGA_MAX = 40.0
CF_TAIL_TOL = 1e-6
X_STD_MAX = 12.0
DETERMINISTIC_STD = 1e-12
SERIES_THRESHOLD = 1e-2


class CdfInversionError(RuntimeError):
    """The characteristic function has not decayed at the truncation frequency."""

    def __init__(self, horizon: float, y0: float, tail_modulus: float) -> None:
        super().__init__(
            f"integrated CIR CDF inversion not converged: horizon={horizon:g} y0={y0:g} "
            f"|phi(omega_max)|={tail_modulus:.3e}"
        )
        self.horizon = horizon
        self.y0 = y0
        self.tail_modulus = tail_modulus


@dataclass(frozen=True)
class CirParams:
    """CIR parameter vector ``(y0, kappa, mu, nu)`` of one name."""

    y0: float
    kappa: float
    mu: float
    nu: float

    def __post_init__(self) -> None:
        for name in ("y0", "kappa", "mu", "nu"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"CIR {name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if self.kappa <= 0.0:
            raise ValueError(f"CIR kappa must be > 0, got {self.kappa!r}")
        for name in ("y0", "mu", "nu"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"CIR {name} must be >= 0, got {getattr(self, name)!r}")

    @property
    def feller(self) -> bool:
        """True when the origin is inaccessible (2 kappa mu > nu^2); not required."""
        return 2.0 * self.kappa * self.mu > self.nu**2

    @property
    def deterministic(self) -> bool:
        return self.nu < NU_EPS

    def with_nu(self, nu: float) -> "CirParams":
        return replace(self, nu=nu)

    def mean(self, t):
        """E[y(t)]."""
        t = np.asarray(t, dtype=float)
        return self.mu + (self.y0 - self.mu) * np.exp(-self.kappa * t)

    def variance(self, t):
        """Var[y(t)]."""
        t = np.asarray(t, dtype=float)
        decay = np.exp(-self.kappa * t)
        return (
            self.y0 * self.nu**2 / self.kappa * (decay - decay**2)
            + self.mu * self.nu**2 / (2.0 * self.kappa) * (1.0 - decay) ** 2
        )


@dataclass(frozen=True)
class IntensityPath:
    """One simulated intensity path on a time grid."""

    grid: np.ndarray
    y_values: np.ndarray
    Y_values: np.ndarray
    Lambda_values: np.ndarray

    def Lambda_at(self, t: float) -> float:
        return float(np.interp(t, self.grid, self.Lambda_values))

    def y_at(self, t: float) -> float:
        return float(np.interp(t, self.grid, self.y_values))


@dataclass(frozen=True, eq=False)
class ShiftedIntensityModel:
    """CIR parameters plus the integrated shift ``Psi`` stored at knots.

    ``Psi`` is piecewise linear between knots and continues beyond the last
    knot with the slope of the last segment.
    """

    params: CirParams
    knot_times: np.ndarray
    knot_psi: np.ndarray
    negative_shift: bool = False
    name: str = ""

    def __post_init__(self) -> None:
        times = np.asarray(self.knot_times, dtype=float)
        psi = np.asarray(self.knot_psi, dtype=float)
        if times.ndim != 1 or times.size < 2 or times.shape != psi.shape:
            raise ValueError("shift knots must be two matching 1-D arrays with at least two points")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0.0):
            raise ValueError("shift knots must start at 0 and be strictly increasing")
        if psi[0] != 0.0:
            raise ValueError("integrated shift must vanish at t=0")
        object.__setattr__(self, "knot_times", times)
        object.__setattr__(self, "knot_psi", psi)

    @classmethod
    def unshifted(cls, params: CirParams, horizon: float, name: str = "") -> "ShiftedIntensityModel":
        return cls(params, np.array([0.0, float(horizon)]), np.zeros(2), name=name)

    @property
    def horizon(self) -> float:
        return float(self.knot_times[-1])

    def psi(self, t):
        t = np.asarray(t, dtype=float)
        times, psi = self.knot_times, self.knot_psi
        slope = (psi[-1] - psi[-2]) / (times[-1] - times[-2])
        inside = np.interp(t, times, psi)
        value = np.where(t > times[-1], psi[-1] + slope * (t - times[-1]), inside)
        return float(value) if value.ndim == 0 else value

    def survival(self, t):
        """Model survival ``exp(-Psi(t)) * P_CIR(0, t)``."""
        value = np.exp(-np.asarray(self.psi(t))) * np.asarray(cir_survival(self.params, t))
        return float(value) if np.ndim(value) == 0 else value


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("time grid must be a non-empty 1-D array")
    if grid[0] != 0.0:
        raise ValueError("time grid must start at 0")
    if np.any(np.diff(grid) <= 0.0):
        raise ValueError("time grid must be strictly increasing")
    return grid


def _noncentral_chisquare(rng: np.random.Generator, df: float, nonc: np.ndarray) -> np.ndarray:
    if df > 0.0:
        return rng.noncentral_chisquare(df, nonc)
    # Zero degrees of freedom: Poisson mixture of central chi-squares.
    counts = rng.poisson(0.5 * nonc)
    return 2.0 * rng.gamma(counts.astype(float))


def simulate_cir_paths(
    params: CirParams, grid, rng: np.random.Generator, n_paths: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Sample ``(y, Y)`` arrays of shape ``(n_paths, len(grid))`` exactly on the grid.

    ``Y`` integrates ``y`` with the trapezoidal rule.
    """
    grid = _check_grid(grid)
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths!r}")
    y = np.empty((n_paths, grid.size))
    y[:, 0] = params.y0
    steps = np.diff(grid)
    kappa, mu, nu = params.kappa, params.mu, params.nu
    if nu == 0.0:
        for k, dt in enumerate(steps):
            y[:, k + 1] = mu + (y[:, k] - mu) * math.exp(-kappa * dt)
    else:
        df = 4.0 * kappa * mu / nu**2
        for k, dt in enumerate(steps):
            decay = math.exp(-kappa * dt)
            scale = nu**2 * (1.0 - decay) / (4.0 * kappa)
            y[:, k + 1] = scale * _noncentral_chisquare(rng, df, y[:, k] * decay / scale)
    Y = np.zeros_like(y)
    if steps.size:
        Y[:, 1:] = np.cumsum(0.5 * (y[:, 1:] + y[:, :-1]) * steps, axis=1)
    return y, Y


def simulate_cir_path(
    params: CirParams,
    grid,
    rng: np.random.Generator,
    shift: Optional[ShiftedIntensityModel] = None,
) -> IntensityPath:
    grid = _check_grid(grid)
    y, Y = simulate_cir_paths(params, grid, rng, 1)
    psi = np.asarray(shift.psi(grid)) if shift is not None else np.zeros_like(grid)
    return IntensityPath(grid, y[0], Y[0], Y[0] + psi)


def _log_laplace(kappa: float, mu: float, nu: float, y0, s, h):
    """``log E[exp(-s Y(h)) | y(0)=y0]`` for integrated CIR; ``s`` may be complex."""
    s = np.asarray(s, dtype=complex)
    h = np.asarray(h, dtype=float)
    if nu < NU_EPS:
        mean = mu * h + (np.asarray(y0) - mu) * (-np.expm1(-kappa * h)) / kappa
        return -s * mean
    gamma = np.sqrt(kappa**2 + 2.0 * nu**2 * s)
    decay = np.exp(-gamma * h)
    one_minus = 1.0 - decay
    denom = (gamma + kappa) * one_minus + 2.0 * gamma * decay
    log_a = (2.0 * kappa * mu / nu**2) * (np.log(2.0 * gamma / denom) + 0.5 * (kappa - gamma) * h)
    b = 2.0 * s * one_minus / denom
    return log_a - b * y0


def cir_survival(params: CirParams, t):
    """``P_CIR(0, t) = E[exp(-Y(t))]`` from the CIR bond-price closed form."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0):
        raise ValueError("survival time must be >= 0")
    value = np.exp(np.real(_log_laplace(params.kappa, params.mu, params.nu, params.y0, 1.0, t_arr)))
    return float(value) if value.ndim == 0 else value


def integrated_cir_mean_var(params: CirParams, horizon, y0: Optional[float] = None):
    """Mean and variance of ``Y(horizon)`` started from ``y0`` (default ``params.y0``)."""
    y_start = params.y0 if y0 is None else float(y0)
    kappa, mu, nu = params.kappa, params.mu, params.nu
    h = np.asarray(horizon, dtype=float)
    a = kappa * h
    e1 = np.exp(-a)
    e2 = np.exp(-2.0 * a)
    mean = mu * h + (y_start - mu) * (-np.expm1(-a)) / kappa
    small = a < SERIES_THRESHOLD
    g1 = np.where(small, a**3 * (1.0 / 3.0 - a / 3.0 + 11.0 * a * a / 60.0), 1.0 - e2 - 2.0 * a * e1)
    g2 = np.where(small, a**4 * (1.0 / 6.0 - 2.0 * a / 15.0), 2.0 * a - 5.0 + 4.0 * e1 + e2 + 4.0 * a * e1)
    var = np.maximum(nu**2 * (y_start * g1 + 0.5 * mu * g2) / kappa**3, 0.0)
    if mean.ndim == 0:
        return float(mean), float(var)
    return mean, var


def bohman_frequencies(x_std_max: float = X_STD_MAX, omega_max: float = CF_OMEGA_MAX) -> Tuple[float, np.ndarray]:
    eta = 2.0 * math.pi / (2.0 * x_std_max + 2.0)
    n_terms = int(math.ceil(omega_max / eta))
    return eta, eta * np.arange(1, n_terms + 1)


def standardised_cf(params: CirParams, y0: float, horizon: float, mean: float, std: float, omega: np.ndarray):
    """Characteristic function of ``(Y(horizon) - mean) / std`` at ``omega``."""
    log_phi = _log_laplace(params.kappa, params.mu, params.nu, y0, -1j * omega / std, horizon)
    return np.exp(log_phi - 1j * omega * mean / std)


def check_cf_tail(phi, horizon, y0: float, strict: bool = True) -> float:
    """Largest ``|phi|`` at the truncation frequency over the rows of ``phi``.

    Above ``CF_TAIL_TOL`` the inversion series is truncated early: ``strict``
    raises ``CdfInversionError``, otherwise the level is logged at DEBUG.
    """
    last = np.abs(np.atleast_2d(phi)[:, -1])
    tail = float(last.max())
    if tail > CF_TAIL_TOL:
        horizons = np.broadcast_to(np.ravel(np.asarray(horizon, dtype=float)), last.shape)
        worst = float(horizons[int(last.argmax())])
        if strict:
            raise CdfInversionError(worst, y0, tail)
        log.debug("CDF inversion: tail |phi|=%.2e at horizon=%s", tail, worst)
    return tail


def _monotone_clip(values: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(np.clip(values, 0.0, 1.0), axis=-1)


class IntegratedCdfGrid:
    """Bohman inversion on a fixed standardised grid ``z`` in ``[-x_std_max, x_std_max]``.

    The kernel only depends on the grid, so one instance serves every horizon
    and starting level.
    """

    def __init__(self, n_points: int = 241, x_std_max: float = X_STD_MAX, omega_max: float = CF_OMEGA_MAX) -> None:
        self.z = np.linspace(-x_std_max, x_std_max, n_points)
        self.eta, self.omega = bohman_frequencies(x_std_max, omega_max)
        orders = np.arange(1, self.omega.size + 1)
        self._kernel = np.exp(-1j * np.outer(self.omega, self.z)) / (math.pi * orders)[:, None]

    def cdf(self, phi: np.ndarray) -> np.ndarray:
        """CDF of the standardised variable at ``self.z`` given its CF at ``self.omega``."""
        values = 0.5 + self.eta * self.z / (2.0 * math.pi) - np.imag(phi @ self._kernel)
        return _monotone_clip(values)


def integrated_cir_cdf(
    params: CirParams,
    horizon: float,
    x,
    y0: Optional[float] = None,
    strict: bool = True,
    x_std_max: float = X_STD_MAX,
    omega_max: float = CF_OMEGA_MAX,
):
    """``Q(Y(horizon) <= x)`` by numerical inversion of the characteristic function.

    Levels beyond ``x_std_max`` standard deviations from the mean map to 0 or
    1. With ``strict`` an undecayed characteristic function at ``omega_max``
    raises ``CdfInversionError``; otherwise the series is used as is.
    """
    if horizon <= 0.0:
        raise ValueError(f"horizon must be > 0, got {horizon!r}")
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0.0):
        raise ValueError("integrated intensity level must be >= 0")
    y_start = params.y0 if y0 is None else float(y0)
    mean, var = integrated_cir_mean_var(params, horizon, y_start)
    std = math.sqrt(var)
    flat = x_arr.reshape(-1)
    if params.deterministic or std <= DETERMINISTIC_STD * max(mean, 1.0):
        values = (flat >= mean).astype(float)
    else:
        eta, omega = bohman_frequencies(x_std_max, omega_max)
        phi = standardised_cf(params, y_start, horizon, mean, std, omega)
        check_cf_tail(phi, horizon, y_start, strict)
        z = (flat - mean) / std
        values = np.where(z >= x_std_max, 1.0, 0.0)
        inside = np.abs(z) < x_std_max
        if np.any(inside):
            zi = z[inside]
            orders = np.arange(1, omega.size + 1)
            series = np.imag(np.exp(-1j * np.outer(zi, omega)) @ (phi / (math.pi * orders)))
            values[inside] = 0.5 + eta * zi / (2.0 * math.pi) - series
        order = np.argsort(flat, kind="stable")
        values[order] = _monotone_clip(values[order])
    values = values.reshape(x_arr.shape)
    return float(values) if values.ndim == 0 else values


def calibrate_shift(
    params: CirParams,
    market_survival: Callable[[np.ndarray], np.ndarray],
    horizon: float,
    step: float = 1.0 / 48.0,
    name: str = "",
) -> ShiftedIntensityModel:
    """Integrated shift ``Psi(t) = log(P_CIR(0,t) / Q_market(t))`` on a knot grid.

    Negative instantaneous shifts are permitted and flagged on the model.
    """
    if horizon <= 0.0:
        raise ValueError(f"calibration horizon must be > 0, got {horizon!r}")
    n_steps = max(1, int(math.ceil(horizon / step - 1e-9)))
    knots = np.linspace(0.0, horizon, n_steps + 1)
    q_market = np.asarray(market_survival(knots), dtype=float)
    if abs(q_market[0] - 1.0) > 1e-12:
        raise ValueError(f"market survival must equal 1 at t=0, got {q_market[0]!r}")
    if np.any(q_market <= 0.0):
        raise ValueError("market survival must stay strictly positive on the calibration horizon")
    if np.any(np.diff(q_market) > 1e-12):
        raise ValueError("market survival must be non-increasing")
    psi = np.log(np.asarray(cir_survival(params, knots))) - np.log(q_market)
    psi[0] = 0.0
    negative = bool(np.any(np.diff(psi) < -1e-12))
    if negative:
        log.warning(
            "SHIFT: negative psi for %s (min Psi=%.3e); market curve sits above CIR-implied survival",
            name or "name",
            float(psi.min()),
        )
    return ShiftedIntensityModel(params, knots, psi, negative_shift=negative, name=name)
