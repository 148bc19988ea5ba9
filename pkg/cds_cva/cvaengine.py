"""Monte Carlo bilateral CVA for a CDS on the reference name.

Names are indexed 0 (investor), 1 (reference) and 2 (counterparty). A path
contributes only when one of the two parties defaults first, before maturity,
while the reference is still alive; the residual CDS is then valued under the
reference's conditional survival law and the option payoff is discounted back.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from .cdspricer import CdsContract, cds_price, residual_cds_value
from .creditcurve import DiscountCurve
from .dependence import (
    ConditioningState,
    CopulaSpec,
    DegenerateConditioningError,
    TriggerSample,
    cond_copula_ref_given_cpty,
    cond_copula_ref_given_inv,
    sample_triggers,
)
from .intensity import (
    DETERMINISTIC_STD,
    IntegratedCdfGrid,
    IntensityPath,
    ShiftedIntensityModel,
    check_cf_tail,
    integrated_cir_mean_var,
    simulate_cir_paths,
    standardised_cf,
)
from .runtime import EngineSettings
from .utils import block_ranges, cell_seed

log = logging.getLogger("cds_cva")

INVESTOR, REFERENCE, COUNTERPARTY = 0, 1, 2
EVENTS = ("A", "B", "C", "D", "E", "F")
BP = 1e4
TAIL_MASS_WARN = 1e-4
TIME_EPS = 1e-12
U_MAX = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True, eq=False)
class ScenarioModel:
    models: Tuple[ShiftedIntensityModel, ShiftedIntensityModel, ShiftedIntensityModel]
    copula: CopulaSpec
    lgd: Tuple[float, float, float]
    contract: CdsContract
    discount: DiscountCurve

    def __post_init__(self) -> None:
        models = tuple(self.models)
        lgd = tuple(float(value) for value in self.lgd)
        if len(models) != 3 or len(lgd) != 3:
            raise ValueError("scenario needs exactly three names (investor, reference, counterparty)")
        for index, value in enumerate(lgd):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"LGD of name {index} must lie in [0, 1], got {value!r}")
        if abs(lgd[REFERENCE] - self.contract.lgd) > 1e-12:
            raise ValueError(f"contract LGD {self.contract.lgd!r} differs from reference LGD {lgd[REFERENCE]!r}")
        horizon = min(model.horizon for model in models)
        if self.contract.t_end > horizon + 1e-9:
            raise ValueError(f"contract maturity {self.contract.t_end!r} beyond calibrated horizon {horizon!r}")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "lgd", lgd)

    @property
    def maturity(self) -> float:
        return self.contract.t_end

    def swapped(self) -> "ScenarioModel":
        """Investor and counterparty exchanged; the contract is unchanged."""
        return ScenarioModel(
            (self.models[2], self.models[1], self.models[0]),
            self.copula.swapped(),
            (self.lgd[2], self.lgd[1], self.lgd[0]),
            self.contract,
            self.discount,
        )

    def with_contract(self, contract: CdsContract) -> "ScenarioModel":
        return ScenarioModel(self.models, self.copula, self.lgd, contract, self.discount)


def classify_event(tau0: float, tau2: float, maturity: float) -> str:
    """Ordering of the investor and counterparty defaults against maturity."""
    if tau0 <= tau2:
        if tau2 <= maturity:
            return "A"
        return "B" if tau0 <= maturity else "E"
    if tau0 <= maturity:
        return "C"
    return "D" if tau2 <= maturity else "F"


@dataclass(frozen=True)
class DefaultDraw:
    triggers: TriggerSample
    paths: Tuple[IntensityPath, IntensityPath, IntensityPath]
    tau: Tuple[float, float, float]
    ordering: str

    def swapped(self, maturity: float) -> "DefaultDraw":
        tau = (self.tau[2], self.tau[1], self.tau[0])
        return DefaultDraw(
            self.triggers.swapped(),
            (self.paths[2], self.paths[1], self.paths[0]),
            tau,
            classify_event(tau[0], tau[2], maturity),
        )


def simulation_grid(maturity: float, step: float) -> np.ndarray:
    n_steps = max(1, int(math.ceil(maturity / step - 1e-9)))
    return np.linspace(0.0, maturity, n_steps + 1)


def _first_passage(grid: np.ndarray, Lambda: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """First time each row of ``Lambda`` reaches ``xi``, linear inside the cell; inf if never."""
    hit = Lambda >= xi[:, None]
    crossed = hit.any(axis=1)
    k = np.argmax(hit, axis=1)
    tau = np.full(xi.shape, np.inf)
    rows = np.nonzero(crossed)[0]
    if rows.size:
        kk = k[rows]
        at_start = kk == 0
        prev = np.maximum(kk - 1, 0)
        lo, hi = Lambda[rows, prev], Lambda[rows, kk]
        width = np.where(at_start, 1.0, hi - lo)
        frac = np.where(at_start, 0.0, (xi[rows] - lo) / width)
        tau[rows] = np.where(at_start, grid[0], grid[prev] + frac * (grid[kk] - grid[prev]))
    return tau


@dataclass(frozen=True, eq=False)
class DefaultBatch:
    """Vectorised draws for a block of paths; ``draw(i)`` views one path."""

    grid: np.ndarray
    triggers: TriggerSample
    y: np.ndarray
    Y: np.ndarray
    Lambda: np.ndarray
    tau: np.ndarray
    maturity: float

    def __len__(self) -> int:
        return self.tau.shape[1]

    def ordering(self, row: int) -> str:
        return classify_event(self.tau[0, row], self.tau[2, row], self.maturity)

    def draw(self, row: int) -> DefaultDraw:
        paths = tuple(
            IntensityPath(self.grid, self.y[name, row], self.Y[name, row], self.Lambda[name, row]) for name in range(3)
        )
        tau = tuple(float(value) for value in self.tau[:, row])
        return DefaultDraw(self.triggers.at(row), paths, tau, classify_event(tau[0], tau[2], self.maturity))


def draw_default_batch(
    model: ScenarioModel, rng: np.random.Generator, size: int, settings: Optional[EngineSettings] = None
) -> DefaultBatch:
    """Triggers first, then the intensity paths of names 0, 1, 2 in that order."""
    settings = settings or EngineSettings()
    grid = simulation_grid(model.maturity, settings.sim_step)
    triggers = sample_triggers(model.copula, rng, size)
    ys, Ys, Lambdas, taus = [], [], [], []
    for name, shifted in enumerate(model.models):
        y, Y = simulate_cir_paths(shifted.params, grid, rng, size)
        Lambda = Y + np.asarray(shifted.psi(grid))[None, :]
        ys.append(y)
        Ys.append(Y)
        Lambdas.append(Lambda)
        taus.append(_first_passage(grid, Lambda, np.asarray(triggers.xi(name), dtype=float)))
    return DefaultBatch(grid, triggers, np.stack(ys), np.stack(Ys), np.stack(Lambdas), np.stack(taus), model.maturity)


def draw_default_times(
    model: ScenarioModel, rng: np.random.Generator, settings: Optional[EngineSettings] = None
) -> DefaultDraw:
    return draw_default_batch(model, rng, 1, settings).draw(0)


def valuation_time(contract: CdsContract, tau_first: float, mode: str = "coupon") -> float:
    """Time at which the residual CDS is valued after the first default.

    ``coupon`` takes the first of ``T_a`` and the coupon dates at or after the
    default; ``default`` takes the default time itself, floored at ``T_a``.
    """
    if mode == "default":
        return max(float(tau_first), contract.t_start)
    dates = np.concatenate([[contract.t_start], contract.payment_times])
    later = dates[dates >= tau_first - TIME_EPS]
    return float(later[0]) if later.size else math.inf


class ConditionalSurvival:
    """``t -> Q(tau_1 > t | G_Tv)`` on one path after the first default.

    The reference trigger law comes from the conditional copula on a uniform
    grid above the reference barrier. For ``t > Tv`` the integrated-intensity
    increment over ``(Tv, t]`` is integrated against it with the increment's
    CDF from ``cdf_grid``.
    """

    def __init__(
        self,
        model: ScenarioModel,
        draw: DefaultDraw,
        first_defaulter: int,
        valuation_time: float,
        settings: Optional[EngineSettings] = None,
        cdf_grid: Optional[IntegratedCdfGrid] = None,
    ) -> None:
        if first_defaulter not in (INVESTOR, COUNTERPARTY):
            raise ValueError(f"first defaulter must be 0 or 2, got {first_defaulter!r}")
        settings = settings or EngineSettings()
        self.settings = settings
        self.cdf_grid = cdf_grid or IntegratedCdfGrid(settings.cdf_points, settings.x_max_std)
        self.valuation_time = float(valuation_time)
        self.model = model.models[REFERENCE]
        other = 2 - first_defaulter
        ref_path = draw.paths[REFERENCE]
        lam_ref = max(ref_path.Lambda_at(self.valuation_time), 0.0)
        lam_other = max(draw.paths[other].Lambda_at(self.valuation_time), 0.0)
        self.state = ConditioningState(
            u_cond=float(draw.triggers.u(first_defaulter)),
            ubar_other=min(-math.expm1(-lam_other), U_MAX),
            ubar_ref=min(-math.expm1(-lam_ref), U_MAX),
        )
        self.y_start = max(ref_path.y_at(self.valuation_time), 0.0)
        self.psi_start = float(self.model.psi(self.valuation_time))

        n = max(2, int(round(1.0 / settings.u_step)))
        self.k_grid = np.arange(n + 1) / n
        u_grid = self.state.ubar_ref + (1.0 - self.state.ubar_ref) * self.k_grid
        conditional = cond_copula_ref_given_cpty if first_defaulter == COUNTERPARTY else cond_copula_ref_given_inv
        inner = np.asarray(conditional(model.copula, u_grid[1:-1], self.state), dtype=float)
        self.f_grid = np.maximum.accumulate(np.concatenate([[0.0], inner, [1.0]]))

    def default_law(self, excess) -> np.ndarray:
        """Probability that the reference trigger sits below a further ``excess`` of integrated intensity."""
        excess = np.asarray(excess, dtype=float)
        return np.interp(-np.expm1(-np.maximum(excess, 0.0)), self.k_grid, self.f_grid)

    def _future(self, times: np.ndarray) -> np.ndarray:
        params = self.model.params
        horizon = times - self.valuation_time
        shift = np.asarray(self.model.psi(times)) - self.psi_start
        mean, var = integrated_cir_mean_var(params, horizon, self.y_start)
        mean = np.atleast_1d(mean)
        std = np.sqrt(np.atleast_1d(var))
        out = 1.0 - self.default_law(mean + shift)
        random = (std > DETERMINISTIC_STD * np.maximum(mean, 1.0)) & (not params.deterministic)
        if np.any(random):
            grid = self.cdf_grid
            h, m, s = horizon[random][:, None], mean[random][:, None], std[random][:, None]
            phi = standardised_cf(params, self.y_start, h, m, s, grid.omega)
            check_cf_tail(phi, horizon[random], self.y_start, strict=False)
            cdf = grid.cdf(phi)
            x = m + s * grid.z[None, :] + shift[random][:, None]
            alive = 1.0 - self.default_law(x)
            mid_alive = 1.0 - self.default_law(0.5 * (x[:, 1:] + x[:, :-1]))
            lower, upper = cdf[:, 0], 1.0 - cdf[:, -1]
            value = lower * alive[:, 0] + np.sum(np.diff(cdf, axis=1) * mid_alive, axis=1) + upper * alive[:, -1]
            tail = lower + upper
            if np.any(tail > TAIL_MASS_WARN):
                log.warning("COND SURVIVAL: CDF tail mass %.2e beyond %s std", float(tail.max()), self.settings.x_max_std)
            out[random] = value
        return out

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        flat = t_arr.reshape(-1)
        values = np.ones_like(flat)
        later = flat > self.valuation_time + TIME_EPS
        if np.any(later):
            order = np.argsort(flat[later], kind="stable")
            future = np.clip(self._future(flat[later][order]), 0.0, 1.0)
            sorted_values = np.minimum.accumulate(future)
            block = np.empty_like(sorted_values)
            block[order] = sorted_values
            values[later] = block
        values = values.reshape(t_arr.shape)
        return float(values) if values.ndim == 0 else values

    survival = __call__


def conditional_ref_survival(
    model: ScenarioModel,
    draw: DefaultDraw,
    t,
    first_defaulter: int,
    settings: Optional[EngineSettings] = None,
    valuation_time: Optional[float] = None,
):
    """Reference survival to ``t`` given the information at the first default (or ``valuation_time``)."""
    at = draw.tau[first_defaulter] if valuation_time is None else valuation_time
    if not math.isfinite(at):
        raise ValueError(f"name {first_defaulter} has no default on this path")
    return ConditionalSurvival(model, draw, first_defaulter, at, settings)(t)


def adjust_at_default(
    model: ScenarioModel,
    draw: DefaultDraw,
    first_defaulter: int,
    settings: Optional[EngineSettings] = None,
    cdf_grid: Optional[IntegratedCdfGrid] = None,
) -> Tuple[float, float]:
    """(receiver, payer) contribution of a path whose first party default is ``first_defaulter``."""
    settings = settings or EngineSettings()
    contract = model.contract
    at = valuation_time(contract, draw.tau[first_defaulter], settings.valuation)
    if at >= contract.t_end:
        return 0.0, 0.0
    cond = ConditionalSurvival(model, draw, first_defaulter, at, settings, cdf_grid)
    residual = residual_cds_value(contract.with_direction("receiver"), at, cond, model.discount, settings.time_step)
    d = float(model.discount.factor(at))
    if first_defaulter == COUNTERPARTY:
        lgd = model.lgd[COUNTERPARTY]
        return lgd * d * max(residual, 0.0), lgd * d * max(-residual, 0.0)
    lgd = model.lgd[INVESTOR]
    return -lgd * d * max(-residual, 0.0), -lgd * d * max(residual, 0.0)


class PathContribution(NamedTuple):
    receiver: float
    payer: float
    first_defaulter: int
    degenerate: bool


def path_contributions(
    model: ScenarioModel,
    draw: DefaultDraw,
    settings: Optional[EngineSettings] = None,
    cdf_grid: Optional[IntegratedCdfGrid] = None,
) -> PathContribution:
    """Apply the ordering and reference-survival gates to one path."""
    tau0, tau1, tau2 = draw.tau
    if draw.ordering in ("C", "D") and tau1 > tau2:
        first = COUNTERPARTY
    elif draw.ordering in ("A", "B") and tau1 > tau0:
        first = INVESTOR
    else:
        return PathContribution(0.0, 0.0, -1, False)
    if model.lgd[first] == 0.0:
        return PathContribution(0.0, 0.0, first, False)
    try:
        receiver, payer = adjust_at_default(model, draw, first, settings, cdf_grid)
    except DegenerateConditioningError as err:
        log.debug("CVA path: degenerate conditioning %s", err)
        return PathContribution(0.0, 0.0, first, True)
    return PathContribution(receiver, payer, first, False)


@dataclass
class BlockTally:
    """Per-path contributions of one RNG block."""

    index: int
    receiver: np.ndarray
    payer: np.ndarray
    first: np.ndarray
    n_degenerate: int = 0

    @property
    def n(self) -> int:
        return int(self.receiver.size)


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(block),)))


def _run_block(model: ScenarioModel, seed: int, index: int, size: int, settings: EngineSettings) -> BlockTally:
    rng = block_rng(seed, index)
    batch = draw_default_batch(model, rng, size, settings)
    cdf_grid = IntegratedCdfGrid(settings.cdf_points, settings.x_max_std)
    receiver = np.zeros(size)
    payer = np.zeros(size)
    first = np.full(size, -1, dtype=np.int8)
    degenerate = 0
    for row in range(size):
        if batch.ordering(row) in ("E", "F"):
            continue
        part = path_contributions(model, batch.draw(row), settings, cdf_grid)
        receiver[row], payer[row], first[row] = part.receiver, part.payer, part.first_defaulter
        degenerate += int(part.degenerate)
    return BlockTally(index, receiver, payer, first, degenerate)


@dataclass(frozen=True)
class CvaResult:
    payer_cva: float
    receiver_cva: float
    payer_se: float
    receiver_se: float
    n_paths: int
    seed: int
    n_degenerate: int = 0
    counterparty_term: float = 0.0
    investor_term: float = 0.0
    tallies: Tuple[BlockTally, ...] = field(default=(), repr=False, compare=False)


def _mean_se(values: np.ndarray) -> Tuple[float, float]:
    n = values.size
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def _combine(tallies: Sequence[BlockTally], seed: int) -> CvaResult:
    ordered = sorted(tallies, key=lambda tally: tally.index)
    receiver = np.concatenate([tally.receiver for tally in ordered])
    payer = np.concatenate([tally.payer for tally in ordered])
    first = np.concatenate([tally.first for tally in ordered])
    n = receiver.size
    receiver_mean, receiver_se = _mean_se(receiver)
    payer_mean, payer_se = _mean_se(payer)
    degenerate = sum(tally.n_degenerate for tally in ordered)
    if degenerate:
        log.warning("CVA: %s of %s paths dropped on degenerate conditioning", degenerate, n)
    return CvaResult(
        payer_cva=payer_mean * BP,
        receiver_cva=receiver_mean * BP,
        payer_se=payer_se * BP,
        receiver_se=receiver_se * BP,
        n_paths=n,
        seed=seed,
        n_degenerate=degenerate,
        counterparty_term=math.fsum(receiver[first == COUNTERPARTY]) / n * BP,
        investor_term=math.fsum(receiver[first == INVESTOR]) / n * BP,
        tallies=tuple(ordered),
    )


def calculate_adjustment(
    model: ScenarioModel,
    n_paths: int,
    seed: int,
    settings: Optional[EngineSettings] = None,
    blocks: Optional[Iterable[int]] = None,
) -> CvaResult:
    """Payer and receiver adjustments in bp with standard errors.

    Paths are split into blocks of ``settings.block_size``; block ``b`` draws
    from its own stream spawned off ``seed``. ``blocks`` restricts the run to
    a subset of those blocks so sub-runs can be merged later.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths!r}")
    settings = settings or EngineSettings()
    ranges = block_ranges(int(n_paths), settings.block_size)
    if blocks is not None:
        wanted = set(int(b) for b in blocks)
        unknown = wanted - {index for index, _, _ in ranges}
        if unknown:
            raise ValueError(f"unknown block index(es) {sorted(unknown)} for {n_paths} paths")
        ranges = [item for item in ranges if item[0] in wanted]
    log.info("CVA: %s paths in %s block(s), seed=%s", sum(stop - start for _, start, stop in ranges), len(ranges), seed)
    if settings.n_jobs != 1 and len(ranges) > 1:
        tallies = Parallel(n_jobs=settings.n_jobs)(
            delayed(_run_block)(model, seed, index, stop - start, settings) for index, start, stop in ranges
        )
    else:
        tallies = [_run_block(model, seed, index, stop - start, settings) for index, start, stop in ranges]
    return _combine(tallies, seed)


def merge_adjustments(parts: Sequence[CvaResult]) -> CvaResult:
    """Combine sub-runs over disjoint blocks of the same seed."""
    if not parts:
        raise ValueError("nothing to merge")
    seeds = {part.seed for part in parts}
    if len(seeds) != 1:
        raise ValueError(f"cannot merge runs with different seeds {sorted(seeds)}")
    tallies: List[BlockTally] = [tally for part in parts for tally in part.tallies]
    indices = [tally.index for tally in tallies]
    if len(indices) != len(set(indices)):
        raise ValueError("sub-runs overlap in block indices")
    return _combine(tallies, parts[0].seed)


@dataclass(frozen=True)
class MtmResult:
    payer_mtm: float
    receiver_mtm: float
    payer_se: float
    receiver_se: float
    risk_free_mtm: float
    elapsed: float
    inception: CvaResult = field(repr=False)
    valuation: CvaResult = field(repr=False)


def mark_to_market(
    model_t0: ScenarioModel,
    model_t1: ScenarioModel,
    contract: CdsContract,
    n_paths: int,
    seed: int,
    elapsed: float,
    settings: Optional[EngineSettings] = None,
) -> MtmResult:
    """Change in risky CDS value from inception to valuation, in bp.

    Both models carry ``contract`` in their own time origin: the inception
    trade at ``T_a`` and a contract with the same terms starting at the
    valuation date. The inception value is carried forward with the discount
    factor over ``elapsed``. ``risk_free_mtm`` is the receiver view without
    counterparty risk.
    """
    if not elapsed > 0.0:
        raise ValueError(f"elapsed time must be > 0, got {elapsed!r}")
    for label, model in (("inception", model_t0), ("valuation", model_t1)):
        got = model.contract
        if abs(got.t_start - contract.t_start) > 1e-9 or abs(got.t_end - contract.t_end) > 1e-9:
            raise ValueError(
                f"{label} model contract ({got.t_start}, {got.t_end}) does not match "
                f"({contract.t_start}, {contract.t_end})"
            )
        if got.spread != contract.spread or got.lgd != contract.lgd:
            raise ValueError(f"{label} model contract must keep spread and LGD of the traded contract")
    if model_t0.lgd != model_t1.lgd:
        raise ValueError("LGDs must be the same at inception and valuation")

    receiver = contract.with_direction("receiver")
    rf0 = cds_price(receiver, model_t0.models[REFERENCE], model_t0.discount) * BP
    rf1 = cds_price(receiver, model_t1.models[REFERENCE], model_t1.discount) * BP
    carry = float(model_t0.discount.factor(elapsed))
    cva0 = calculate_adjustment(model_t0, n_paths, cell_seed(seed, 0), settings)
    cva1 = calculate_adjustment(model_t1, n_paths, cell_seed(seed, 1), settings)
    log.info("MTM: risk-free %.2f bp over %.4f years", rf1 - rf0 / carry, elapsed)
    return MtmResult(
        payer_mtm=(-rf1 - cva1.payer_cva) - (-rf0 - cva0.payer_cva) / carry,
        receiver_mtm=(rf1 - cva1.receiver_cva) - (rf0 - cva0.receiver_cva) / carry,
        payer_se=math.hypot(cva1.payer_se, cva0.payer_se / carry),
        receiver_se=math.hypot(cva1.receiver_se, cva0.receiver_se / carry),
        risk_free_mtm=rf1 - rf0 / carry,
        elapsed=float(elapsed),
        inception=cva0,
        valuation=cva1,
    )
