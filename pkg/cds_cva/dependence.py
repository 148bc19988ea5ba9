"""Trivariate Gaussian copula over the default-trigger uniforms.

Name indices: investor 0, reference 1, counterparty 2. Besides sampling, the
module provides the copula partial derivatives and the two conditional laws
of the reference trigger given that either the counterparty (index 2) or the
investor (index 0) defaulted first while the other two names were alive.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.special import log_ndtr, ndtr, ndtri

log = logging.getLogger("cds_cva")

Z_MAX = 37.0
RHO_EPS = 1e-12
STD_EPS = 1e-10
CLAMP_TOL = 1e-9
DENOMINATOR_EPS = 1e-14

# Gauss-Legendre half rules (nodes, weights) for 6, 12 and 20 points.
_GL6 = (
    np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970]),
    np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
)
_GL12 = (
    np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
              0.5873179542866171, 0.3678314989981802, 0.1252334085114692]),
    np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
              0.2031674267230659, 0.2334925365383547, 0.2491470458134029]),
)
_GL20 = (
    np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
              0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
              0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
              0.07652652113349733]),
    np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
              0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
              0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
              0.1527533871307259]),
)


class NotPositiveSemidefiniteError(ValueError):
    pass


class DegenerateConditioningError(ArithmeticError):
    """The conditioning event has (numerically) zero probability."""

    def __init__(self, state: "ConditioningState", denominator: float) -> None:
        super().__init__(f"degenerate conditioning: denominator={denominator:.3e} state={state}")
        self.state = state
        self.denominator = denominator


@dataclass(frozen=True)
class CopulaSpec:
    """Pairwise correlations of the trivariate Gaussian copula."""

    r01: float
    r02: float
    r12: float

    def __post_init__(self) -> None:
        for name in ("r01", "r02", "r12"):
            value = float(getattr(self, name))
            if not -1.0 <= value <= 1.0:
                raise ValueError(f"correlation {name} must lie in [-1, 1], got {value!r}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "_factor", _psd_factor(self.matrix))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[1.0, self.r01, self.r02], [self.r01, 1.0, self.r12], [self.r02, self.r12, 1.0]]
        )

    @property
    def factor(self) -> np.ndarray:
        """Lower factor ``L`` with ``L @ L.T == matrix``."""
        return self._factor

    def corr(self, i: int, j: int) -> float:
        if i == j:
            return 1.0
        return {frozenset((0, 1)): self.r01, frozenset((0, 2)): self.r02, frozenset((1, 2)): self.r12}[
            frozenset((i, j))
        ]

    def swapped(self) -> "CopulaSpec":
        """Relabel investor and counterparty."""
        return CopulaSpec(self.r12, self.r02, self.r01)


def _psd_factor(matrix: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        values, vectors = np.linalg.eigh(matrix)
        if values.min() < -1e-10:
            raise NotPositiveSemidefiniteError(
                f"correlation matrix is not positive semidefinite (min eigenvalue {values.min():.3e})"
            ) from None
        return vectors * np.sqrt(np.clip(values, 0.0, None))


@dataclass(frozen=True)
class TriggerSample:
    """Trigger uniforms ``u_i`` and unit exponentials ``xi_i = -log(1 - u_i)``."""

    u0: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    xi0: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray

    def u(self, index: int):
        return (self.u0, self.u1, self.u2)[index]

    def xi(self, index: int):
        return (self.xi0, self.xi1, self.xi2)[index]

    def swapped(self) -> "TriggerSample":
        return TriggerSample(self.u2, self.u1, self.u0, self.xi2, self.xi1, self.xi0)

    def at(self, row: int) -> "TriggerSample":
        return TriggerSample(*(float(np.asarray(value)[row]) for value in
                               (self.u0, self.u1, self.u2, self.xi0, self.xi1, self.xi2)))


@dataclass(frozen=True)
class ConditioningState:
    """Trigger of the first defaulter and the survivors' barriers at valuation."""

    u_cond: float
    ubar_other: float
    ubar_ref: float

    def __post_init__(self) -> None:
        for name in ("u_cond", "ubar_other", "ubar_ref"):
            value = float(getattr(self, name))
            if not 0.0 <= value < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {value!r}")
            object.__setattr__(self, name, value)


def _z(u) -> np.ndarray:
    return np.clip(ndtri(np.asarray(u, dtype=float)), -Z_MAX, Z_MAX)


def sample_triggers(spec: CopulaSpec, rng: np.random.Generator, size: Optional[int] = None) -> TriggerSample:
    """Draw trigger uniforms from the Gaussian copula (Cholesky, then Phi)."""
    n = 1 if size is None else int(size)
    normals = rng.standard_normal((n, 3)) @ spec.factor.T
    u = np.clip(ndtr(normals), np.finfo(float).tiny, np.nextafter(1.0, 0.0))
    xi = -log_ndtr(-normals)
    if size is None:
        return TriggerSample(*(float(value) for value in (*u[0], *xi[0])))
    return TriggerSample(u[:, 0], u[:, 1], u[:, 2], xi[:, 0], xi[:, 1], xi[:, 2])


def _bvn_upper(h: np.ndarray, k: np.ndarray, r: float) -> np.ndarray:
    """``P(X > h, Y > k)`` for standard normals with correlation ``r`` (Genz)."""
    if r == 0.0:
        return ndtr(-h) * ndtr(-k)
    two_pi = 2.0 * math.pi
    abs_r = abs(r)
    nodes, weights = _GL6 if abs_r < 0.3 else _GL12 if abs_r < 0.75 else _GL20
    x = np.concatenate([1.0 - nodes, 1.0 + nodes])
    w = np.concatenate([weights, weights])
    hk = h * k
    if abs_r < 0.925:
        hs = 0.5 * (h * h + k * k)
        asr = 0.5 * math.asin(r)
        sn = np.sin(asr * x)
        terms = np.exp((sn * hk[..., None] - hs[..., None]) / (1.0 - sn**2)) @ w
        return terms * asr / two_pi + ndtr(-h) * ndtr(-k)
    if r < 0.0:
        k = -k
        hk = -hk
    bvn = np.zeros_like(h)
    if abs_r < 1.0:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            a_sq = 1.0 - r * r
            a = math.sqrt(a_sq)
            bs = (h - k) ** 2
            asr = -0.5 * (bs / a_sq + hk)
            c = (4.0 - hk) / 8.0
            d = (12.0 - hk) / 80.0
            bvn = np.where(
                asr > -100.0,
                a * np.exp(asr) * (1.0 - c * (bs - a_sq) * (1.0 - d * bs) / 3.0 + c * d * a_sq**2),
                0.0,
            )
            b = np.sqrt(bs)
            sp = math.sqrt(two_pi) * ndtr(-b / a)
            bvn = np.where(hk > -100.0, bvn - np.exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0), bvn)
            half = 0.5 * a
            xs = (half * x) ** 2
            asr_x = -0.5 * (bs[..., None] / xs + hk[..., None])
            keep = asr_x > -100.0
            sp_x = 1.0 + c[..., None] * xs * (1.0 + 5.0 * d[..., None] * xs)
            rs = np.sqrt(1.0 - xs)
            ep = np.exp(-0.5 * hk[..., None] * xs / (1.0 + rs) ** 2) / rs
            integrand = np.where(keep, np.exp(np.where(keep, asr_x, 0.0)) * (sp_x - ep), 0.0)
            bvn = (half * (integrand @ w) - bvn) / two_pi
    if r > 0.0:
        return bvn + ndtr(-np.maximum(h, k))
    tail = np.where(h < 0.0, ndtr(k) - ndtr(h), ndtr(-h) - ndtr(-k))
    return np.where(h >= k, -bvn, tail - bvn)


def bvn_cdf(h, k, r: float):
    """Bivariate standard normal CDF ``P(X <= h, Y <= k)`` with correlation ``r``."""
    h_arr, k_arr = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float))
    shape = h_arr.shape
    h_arr = np.clip(h_arr, -Z_MAX, Z_MAX).reshape(-1)
    k_arr = np.clip(k_arr, -Z_MAX, Z_MAX).reshape(-1)
    value = np.clip(_bvn_upper(-h_arr, -k_arr, float(np.clip(r, -1.0, 1.0))), 0.0, 1.0).reshape(shape)
    return float(value) if value.ndim == 0 else value


def bivariate_copula(rho: float, u_i, u_j):
    return bvn_cdf(_z(u_i), _z(u_j), rho)


def bivariate_copula_partial(rho: float, u_i, u_j):
    """``dC_rho(u_i, u_j)/du_j``: conditional CDF of ``U_i`` given ``U_j = u_j``."""
    u_i = np.asarray(u_i, dtype=float)
    u_j = np.asarray(u_j, dtype=float)
    if rho >= 1.0 - RHO_EPS:
        value = (u_i >= u_j).astype(float)
    elif rho <= -1.0 + RHO_EPS:
        value = (u_i >= 1.0 - u_j).astype(float)
    else:
        value = ndtr((_z(u_i) - rho * _z(u_j)) / math.sqrt(1.0 - rho * rho))
    return float(value) if value.ndim == 0 else value


def _conditional_bvn(spec: CopulaSpec, z_other, z_ref, z_cond, cond_index: int):
    """``P(Z_other <= z_other, Z_1 <= z_ref | Z_cond = z_cond)``."""
    other = 2 - cond_index
    r_oc = spec.corr(other, cond_index)
    r_rc = spec.corr(1, cond_index)
    r_or = spec.corr(other, 1)
    s_o = math.sqrt(max(1.0 - r_oc * r_oc, 0.0))
    s_r = math.sqrt(max(1.0 - r_rc * r_rc, 0.0))
    z_other, z_ref, z_cond = np.broadcast_arrays(
        np.asarray(z_other, dtype=float), np.asarray(z_ref, dtype=float), np.asarray(z_cond, dtype=float)
    )
    m_o = r_oc * z_cond
    m_r = r_rc * z_cond
    if s_o < STD_EPS and s_r < STD_EPS:
        return ((m_o <= z_other) & (m_r <= z_ref)).astype(float)
    if s_o < STD_EPS:
        return (m_o <= z_other) * ndtr((z_ref - m_r) / s_r)
    if s_r < STD_EPS:
        return (m_r <= z_ref) * ndtr((z_other - m_o) / s_o)
    rho = float(np.clip((r_or - r_oc * r_rc) / (s_o * s_r), -1.0, 1.0))
    return np.asarray(bvn_cdf((z_other - m_o) / s_o, (z_ref - m_r) / s_r, rho))


def trivariate_copula_partial(spec: CopulaSpec, u_other, u1, u_cond, cond_index: int):
    """``dC_R(u0, u1, u2)/du_cond`` with ``u_other`` the non-reference survivor's coordinate.

    ``cond_index`` 2 means ``u_other`` is the investor coordinate ``u0``;
    ``cond_index`` 0 means it is the counterparty coordinate ``u2``.
    """
    if cond_index not in (0, 2):
        raise ValueError(f"cond_index must be 0 or 2, got {cond_index!r}")
    value = np.asarray(_conditional_bvn(spec, _z(u_other), _z(u1), _z(u_cond), cond_index))
    return float(value) if value.ndim == 0 else value


def trivariate_copula(spec: CopulaSpec, u0: float, u1: float, u2: float) -> float:
    """``C_R(u0, u1, u2)`` by 1-D quadrature of the conditional bivariate CDF over ``z2``."""
    z0, z1, z2 = float(_z(u0)), float(_z(u1)), float(_z(u2))

    def integrand(s: float) -> float:
        density = math.exp(-0.5 * s * s) / math.sqrt(2.0 * math.pi)
        return density * float(_conditional_bvn(spec, z0, z1, s, 2))

    value, _err = quad(integrand, -np.inf, z2, epsabs=1e-13, epsrel=1e-12, limit=200)
    return min(max(value, 0.0), 1.0)


def _conditional_ref_cdf(spec: CopulaSpec, u1, state: ConditioningState, cond_index: int):
    other = 2 - cond_index
    r_ref = spec.corr(1, cond_index)
    r_other = spec.corr(other, cond_index)
    uc = state.u_cond
    ref_barrier = bivariate_copula_partial(r_ref, state.ubar_ref, uc)
    joint_barrier = trivariate_copula_partial(spec, state.ubar_other, state.ubar_ref, uc, cond_index)
    denominator = 1.0 - bivariate_copula_partial(r_other, state.ubar_other, uc) - ref_barrier + joint_barrier
    if denominator <= DENOMINATOR_EPS:
        raise DegenerateConditioningError(state, denominator)
    u1 = np.asarray(u1, dtype=float)
    numerator = (
        bivariate_copula_partial(r_ref, u1, uc)
        - trivariate_copula_partial(spec, state.ubar_other, u1, uc, cond_index)
        - ref_barrier
        + joint_barrier
    )
    value = np.asarray(numerator / denominator)
    if np.any((value < -CLAMP_TOL) | (value > 1.0 + CLAMP_TOL)):
        log.debug("COPULA: conditional CDF outside [0,1] by more than %s (state=%s)", CLAMP_TOL, state)
    value = np.clip(value, 0.0, 1.0)
    value = np.where(u1 <= state.ubar_ref, 0.0, np.where(u1 >= 1.0, 1.0, value))
    return float(value) if value.ndim == 0 else value


def cond_copula_ref_given_cpty(spec: CopulaSpec, u1, state: ConditioningState):
    """Law of the reference trigger given the counterparty defaulted first."""
    return _conditional_ref_cdf(spec, u1, state, 2)


def cond_copula_ref_given_inv(spec: CopulaSpec, u1, state: ConditioningState):
    """Law of the reference trigger given the investor defaulted first."""
    return _conditional_ref_cdf(spec, u1, state, 0)
