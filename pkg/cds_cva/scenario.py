"""Scenario files: YAML schema, risk presets and model assembly.

A scenario file describes the three names, the contract, the Monte Carlo
controls and the sweep axes of one run. Validation errors name the dotted key
and the line in the file.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from .cdspricer import CdsContract, breakeven_spread
from .creditcurve import (
    CdsQuoteCurve,
    CirImpliedCurve,
    DiscountCurve,
    bootstrap_hazard,
    cir_implied_curve,
    read_quote_csv,
)
from .cvaengine import ScenarioModel
from .dates import parse_market_date, snapshot_date, year_fraction
from .dependence import CopulaSpec, NotPositiveSemidefiniteError
from .intensity import CirParams, calibrate_shift
from .runtime import DESK_N_PATHS, EngineSettings, default_discount_rate
from .utils import stable_hash

log = logging.getLogger("cds_cva")

ROLES = ("investor", "reference", "counterparty")

# Credit risk levels: CIR (y0, kappa, mu, nu) and LGD.
PRESETS: Dict[str, CirParams] = {
    "low": CirParams(0.00001, 0.9, 0.0001, 0.01),
    "middle": CirParams(0.01, 0.8, 0.02, 0.2),
    "high": CirParams(0.03, 0.5, 0.05, 0.5),
}
PRESET_LGD = {"low": 0.6, "middle": 0.65, "high": 0.7}

DEFAULT_SEED = 2009
DEFAULT_TENORS = tuple(float(t) for t in range(1, 11))
SETTINGS_KEYS = ("sim_step", "u_step", "time_step", "x_max_std", "cdf_points", "block_size", "valuation")
_MISSING = object()


class ConfigError(ValueError):
    """Invalid scenario file; carries the file, the dotted key and the line."""

    def __init__(self, path: Any, message: str, line: Optional[int] = None, key: str = "") -> None:
        where = f" (line {line})" if line else ""
        text = f"{key}: {message}{where}" if key else f"{message}{where}"
        super().__init__(text)
        self.path = str(path) if path is not None else None
        self.line = line
        self.key = key


def _line_index(node: Any, prefix: str = "", out: Optional[Dict[str, int]] = None) -> Dict[str, int]:
    """Map dotted keys (``a.b.0``) to 1-based lines from a composed YAML node tree."""
    out = {} if out is None else out
    if node is None:
        return out
    if prefix:
        out.setdefault(prefix, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            out[key] = key_node.start_mark.line + 1
            _line_index(value_node, key, out)
    elif isinstance(node, yaml.SequenceNode):
        for index, item in enumerate(node.value):
            _line_index(item, f"{prefix}.{index}", out)
    return out


class _Reader:
    """Typed access to the parsed mapping with key/line aware failures."""

    def __init__(self, path: Path, data: Dict[str, Any], lines: Dict[str, int]) -> None:
        self.path = path
        self.data = data
        self.lines = lines

    def fail(self, key: str, message: str) -> ConfigError:
        line = None
        prefix = key
        while prefix and line is None:
            line = self.lines.get(prefix)
            prefix = prefix.rpartition(".")[0]
        return ConfigError(self.path, message, line, key)

    def get(self, key: str, default: Any = None) -> Any:
        node: Any = self.data
        for part in key.split("."):
            if isinstance(node, dict) and part in node:
                node = node[part]
            elif isinstance(node, list) and part.isdigit() and int(part) < len(node):
                node = node[int(part)]
            else:
                return default
        return node

    def has(self, key: str) -> bool:
        return self.get(key, _MISSING) is not _MISSING

    def mapping(self, key: str, required: bool = False) -> Dict[str, Any]:
        value = self.get(key)
        if value is None:
            if required:
                raise self.fail(key, "is required")
            return {}
        if not isinstance(value, dict):
            raise self.fail(key, "must be a mapping")
        return value

    def number(
        self,
        key: str,
        default: Optional[float] = None,
        *,
        lo: Optional[float] = None,
        hi: Optional[float] = None,
        lo_open: bool = False,
        required: bool = False,
    ) -> Optional[float]:
        value = self.get(key)
        if value is None:
            if required:
                raise self.fail(key, "is required")
            return default
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.fail(key, f"must be a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise self.fail(key, "must be finite")
        if lo is not None and (value < lo or (lo_open and value == lo)):
            raise self.fail(key, f"must be {'>' if lo_open else '>='} {lo:g}, got {value:g}")
        if hi is not None and value > hi:
            raise self.fail(key, f"must be <= {hi:g}, got {value:g}")
        return value

    def integer(self, key: str, default: Optional[int] = None, *, lo: Optional[int] = None) -> Optional[int]:
        value = self.get(key)
        if value is None:
            return default
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.fail(key, f"must be an integer, got {value!r}")
        if lo is not None and value < lo:
            raise self.fail(key, f"must be >= {lo}, got {value}")
        return int(value)

    def sequence(self, key: str) -> Optional[List[Any]]:
        value = self.get(key)
        if value is None:
            return None
        if not isinstance(value, list):
            raise self.fail(key, "must be a list")
        return value


@dataclass(frozen=True)
class NameConfig:
    role: str
    params: CirParams
    lgd: float
    market: str = "cir"
    market_preset: Optional[str] = None
    quotes: Optional[CdsQuoteCurve] = None
    quotes_path: Optional[str] = None
    label: str = ""

    def canonical(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "cir": [self.params.y0, self.params.kappa, self.params.mu, self.params.nu],
            "lgd": self.lgd,
            "market": self.market,
        }
        if self.market_preset:
            payload["market_preset"] = self.market_preset
        if self.quotes is not None:
            payload["quotes"] = [list(pair) for pair in self.quotes.quotes]
        return payload


@dataclass(frozen=True)
class ContractConfig:
    start: float = 0.0
    maturity: float = 5.0
    spread_bp: Optional[float] = None
    frequency: int = 4


@dataclass(frozen=True)
class MonteCarloConfig:
    n_paths: int = DESK_N_PATHS
    seed: int = DEFAULT_SEED
    settings: EngineSettings = field(default_factory=EngineSettings)


@dataclass(frozen=True)
class SweepConfig:
    correlations: Tuple[Tuple[float, float, float], ...] = ()
    nu: Tuple[float, ...] = ()
    vary: str = "reference"


@dataclass(frozen=True)
class BreakevenConfig:
    tenors: Tuple[float, ...] = DEFAULT_TENORS
    presets: Tuple[str, ...] = ("low", "middle", "high")
    lgd: Optional[float] = None
    frequency: int = 4


@dataclass(frozen=True)
class DatesConfig:
    inception: Optional[date] = None
    valuation: Optional[date] = None


@dataclass(frozen=True)
class ScenarioConfig:
    path: Optional[str]
    names: Dict[str, NameConfig]
    contract: Optional[ContractConfig]
    discount_rate: float
    monte_carlo: MonteCarloConfig
    sweep: SweepConfig
    breakeven: Optional[BreakevenConfig] = None
    dates: DatesConfig = field(default_factory=DatesConfig)

    def canonical(self) -> Dict[str, Any]:
        """Resolved numeric inputs; the config hash is taken over this."""
        settings = self.monte_carlo.settings
        payload: Dict[str, Any] = {
            "names": {role: cfg.canonical() for role, cfg in sorted(self.names.items())},
            "discount_rate": self.discount_rate,
            "monte_carlo": {
                "n_paths": self.monte_carlo.n_paths,
                "seed": self.monte_carlo.seed,
                **{key: getattr(settings, key) for key in SETTINGS_KEYS},
            },
            "sweep": {
                "correlations": [list(c) for c in self.sweep.correlations],
                "nu": list(self.sweep.nu),
                "vary": self.sweep.vary,
            },
        }
        if self.contract is not None:
            payload["contract"] = {
                "start": self.contract.start,
                "maturity": self.contract.maturity,
                "spread_bp": "breakeven" if self.contract.spread_bp is None else self.contract.spread_bp,
                "frequency": self.contract.frequency,
            }
        if self.breakeven is not None:
            payload["breakeven"] = {
                "tenors": list(self.breakeven.tenors),
                "presets": list(self.breakeven.presets),
                "lgd": self.breakeven.lgd,
                "frequency": self.breakeven.frequency,
            }
        if self.dates.inception or self.dates.valuation:
            payload["dates"] = {"inception": self.dates.inception, "valuation": self.dates.valuation}
        return payload

    def config_hash(self) -> str:
        return stable_hash(self.canonical())

    def with_overrides(self, n_paths: Optional[int] = None, seed: Optional[int] = None) -> "ScenarioConfig":
        mc = self.monte_carlo
        if n_paths is not None:
            if n_paths < 1:
                raise ConfigError(self.path, f"n_paths must be >= 1, got {n_paths}", key="monte_carlo.n_paths")
            mc = replace(mc, n_paths=int(n_paths))
        if seed is not None:
            if seed < 0:
                raise ConfigError(self.path, f"seed must be >= 0, got {seed}", key="monte_carlo.seed")
            mc = replace(mc, seed=int(seed))
        return replace(self, monte_carlo=mc)

    def require_names(self) -> None:
        missing = [role for role in ROLES if role not in self.names]
        if missing:
            raise ConfigError(self.path, f"missing name block(s): {', '.join(missing)}", key="names")
        if self.contract is None:
            raise ConfigError(self.path, "is required for this command", key="contract")

    def require_cells(self) -> None:
        if not self.sweep.correlations:
            raise ConfigError(self.path, "no correlation given (correlation or sweep.correlations)", key="sweep")

    def cells(self) -> List[Tuple[int, Tuple[float, float, float], Optional[float]]]:
        """Sweep cells in configured order: correlations outer, volatilities inner."""
        nus: Sequence[Optional[float]] = self.sweep.nu or (None,)
        out = []
        for corr in self.sweep.correlations:
            for nu in nus:
                out.append((len(out), corr, nu))
        return out

    def swept_nu(self, nu: Optional[float]) -> float:
        if nu is not None:
            return nu
        return self.names[self.sweep.vary].params.nu


def _cir_block(reader: _Reader, key: str) -> Tuple[CirParams, Optional[str]]:
    raw = reader.get(key)
    if raw is None:
        raise reader.fail(key, "is required (preset name or {y0, kappa, mu, nu})")
    if isinstance(raw, str):
        if raw not in PRESETS:
            raise reader.fail(key, f"unknown preset {raw!r}; expected one of {sorted(PRESETS)}")
        return PRESETS[raw], raw
    if not isinstance(raw, dict):
        raise reader.fail(key, "must be a preset name or a mapping")
    unknown = set(raw) - {"y0", "kappa", "mu", "nu"}
    if unknown:
        raise reader.fail(key, f"unknown field(s) {sorted(unknown)}")
    values = {
        "y0": reader.number(f"{key}.y0", lo=0.0, required=True),
        "kappa": reader.number(f"{key}.kappa", lo=0.0, lo_open=True, required=True),
        "mu": reader.number(f"{key}.mu", lo=0.0, required=True),
        "nu": reader.number(f"{key}.nu", lo=0.0, required=True),
    }
    return CirParams(**values), None


def _name_block(reader: _Reader, role: str) -> NameConfig:
    key = f"names.{role}"
    block = reader.mapping(key, required=True)
    unknown = set(block) - {"cir", "lgd", "market", "label"}
    if unknown:
        raise reader.fail(key, f"unknown field(s) {sorted(unknown)}")
    params, preset = _cir_block(reader, f"{key}.cir")
    lgd = reader.number(f"{key}.lgd", lo=0.0, hi=1.0)
    if lgd is None:
        if preset is None:
            raise reader.fail(f"{key}.lgd", "is required when cir is not a preset")
        lgd = PRESET_LGD[preset]
    label = str(block.get("label") or role)
    market = block.get("market", "cir")
    if market == "cir":
        return NameConfig(role, params, lgd, "cir", label=label)
    if isinstance(market, str) and market in PRESETS:
        return NameConfig(role, params, lgd, "preset", market_preset=market, label=label)
    if not isinstance(market, dict) or len(market) != 1 or next(iter(market)) not in ("preset", "quotes"):
        raise reader.fail(f"{key}.market", "must be 'cir', {preset: name} or {quotes: file}")
    if "preset" in market:
        name = market["preset"]
        if name not in PRESETS:
            raise reader.fail(f"{key}.market.preset", f"unknown preset {name!r}")
        return NameConfig(role, params, lgd, "preset", market_preset=name, label=label)
    raw_path = market["quotes"]
    if not isinstance(raw_path, str) or not raw_path:
        raise reader.fail(f"{key}.market.quotes", "must be a file path")
    quote_path = Path(raw_path)
    if not quote_path.is_absolute():
        quote_path = reader.path.parent / quote_path
    if not quote_path.exists():
        raise reader.fail(f"{key}.market.quotes", f"file not found: {quote_path}")
    try:
        quotes = read_quote_csv(quote_path, lgd, name=label)
    except (ValueError, OSError) as err:
        raise reader.fail(f"{key}.market.quotes", str(err)) from err
    return NameConfig(role, params, lgd, "quotes", quotes=quotes, quotes_path=str(quote_path), label=label)


def _correlation(reader: _Reader, key: str) -> Tuple[float, float, float]:
    raw = reader.sequence(key)
    if raw is None or len(raw) != 3:
        raise reader.fail(key, "must be a triple [r01, r02, r12]")
    triple = tuple(reader.number(f"{key}.{i}", lo=-1.0, hi=1.0, required=True) for i in range(3))
    try:
        CopulaSpec(*triple)
    except NotPositiveSemidefiniteError as err:
        raise reader.fail(key, str(err)) from err
    return triple  # type: ignore[return-value]


def _monte_carlo(reader: _Reader) -> MonteCarloConfig:
    block = reader.mapping("monte_carlo")
    unknown = set(block) - {"n_paths", "seed"} - set(SETTINGS_KEYS) - {"n_jobs"}
    if unknown:
        raise reader.fail("monte_carlo", f"unknown field(s) {sorted(unknown)}")
    overrides: Dict[str, Any] = {
        "sim_step": reader.number("monte_carlo.sim_step", lo=0.0, lo_open=True, hi=1.0),
        "u_step": reader.number("monte_carlo.u_step", lo=0.0, lo_open=True, hi=1.0),
        "time_step": reader.number("monte_carlo.time_step", lo=0.0, lo_open=True, hi=1.0),
        "x_max_std": reader.number("monte_carlo.x_max_std", lo=4.0),
        "cdf_points": reader.integer("monte_carlo.cdf_points", lo=11),
        "block_size": reader.integer("monte_carlo.block_size", lo=1),
        "n_jobs": reader.integer("monte_carlo.n_jobs"),
    }
    valuation = block.get("valuation")
    if valuation is not None:
        if valuation not in ("coupon", "default"):
            raise reader.fail("monte_carlo.valuation", f"must be 'coupon' or 'default', got {valuation!r}")
        overrides["valuation"] = valuation
    try:
        settings = EngineSettings.from_env().updated(**overrides)
    except ValueError as err:
        raise reader.fail("monte_carlo", str(err)) from err
    return MonteCarloConfig(
        n_paths=reader.integer("monte_carlo.n_paths", DESK_N_PATHS, lo=1),
        seed=reader.integer("monte_carlo.seed", DEFAULT_SEED, lo=0),
        settings=settings,
    )


def _sweep(reader: _Reader) -> SweepConfig:
    block = reader.mapping("sweep")
    unknown = set(block) - {"correlations", "nu", "vary"}
    if unknown:
        raise reader.fail("sweep", f"unknown field(s) {sorted(unknown)}")
    correlations: List[Tuple[float, float, float]] = []
    raw = reader.sequence("sweep.correlations")
    if raw is not None:
        if not raw:
            raise reader.fail("sweep.correlations", "must not be empty")
        correlations = [_correlation(reader, f"sweep.correlations.{i}") for i in range(len(raw))]
    elif reader.has("correlation"):
        correlations = [_correlation(reader, "correlation")]
    nus: List[float] = []
    raw_nu = reader.sequence("sweep.nu")
    if raw_nu is not None:
        if not raw_nu:
            raise reader.fail("sweep.nu", "must not be empty")
        nus = [reader.number(f"sweep.nu.{i}", lo=0.0, required=True) for i in range(len(raw_nu))]
    vary = block.get("vary", "reference")
    if vary not in ROLES:
        raise reader.fail("sweep.vary", f"must be one of {ROLES}, got {vary!r}")
    return SweepConfig(tuple(correlations), tuple(nus), vary)


def _breakeven(reader: _Reader) -> Optional[BreakevenConfig]:
    block = reader.get("breakeven")
    if block is None:
        return None
    if not isinstance(block, dict):
        raise reader.fail("breakeven", "must be a mapping")
    tenors = DEFAULT_TENORS
    raw = reader.sequence("breakeven.tenors")
    if raw is not None:
        if not raw:
            raise reader.fail("breakeven.tenors", "must not be empty")
        tenors = tuple(reader.number(f"breakeven.tenors.{i}", lo=0.0, lo_open=True, required=True) for i in range(len(raw)))
    presets: Tuple[str, ...] = ("low", "middle", "high")
    raw = reader.sequence("breakeven.presets")
    if raw is not None:
        if not raw:
            raise reader.fail("breakeven.presets", "must not be empty")
        for i, name in enumerate(raw):
            if name not in PRESETS:
                raise reader.fail(f"breakeven.presets.{i}", f"unknown preset {name!r}")
        presets = tuple(raw)
    return BreakevenConfig(
        tenors=tenors,
        presets=presets,
        lgd=reader.number("breakeven.lgd", lo=0.0, hi=1.0),
        frequency=reader.integer("breakeven.frequency", 4, lo=1),
    )


def _contract(reader: _Reader) -> Optional[ContractConfig]:
    if reader.get("contract") is None:
        return None
    reader.mapping("contract")
    start = reader.number("contract.start", 0.0, lo=0.0)
    maturity = reader.number("contract.maturity", required=True, lo=0.0, lo_open=True)
    if maturity <= start:
        raise reader.fail("contract.maturity", f"must be after contract.start ({start:g})")
    spread = reader.get("contract.spread_bp", "breakeven")
    if spread == "breakeven":
        spread_bp = None
    else:
        spread_bp = reader.number("contract.spread_bp", lo=0.0)
    return ContractConfig(start, maturity, spread_bp, reader.integer("contract.frequency", 4, lo=1))


def _dates(reader: _Reader) -> DatesConfig:
    block = reader.mapping("dates")
    values = {}
    for key in ("inception", "valuation"):
        raw = block.get(key)
        if raw is None:
            values[key] = None
            continue
        parsed = parse_market_date(raw)
        if parsed is None:
            raise reader.fail(f"dates.{key}", f"unparseable date {raw!r}")
        values[key] = parsed
    return DatesConfig(**values)


def load_config(path) -> ScenarioConfig:
    """Parse and validate a scenario file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(path, f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise ConfigError(path, f"invalid YAML: {getattr(err, 'problem', err)}", mark.line + 1 if mark else None) from err
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path, "top level must be a mapping", 1)
    reader = _Reader(path, data, _line_index(root))
    unknown = set(data) - {"names", "contract", "discount_rate", "correlation", "monte_carlo", "sweep", "dates", "breakeven"}
    if unknown:
        key = sorted(unknown)[0]
        raise reader.fail(key, "unknown top-level key")

    names: Dict[str, NameConfig] = {}
    if reader.get("names") is not None:
        block = reader.mapping("names")
        for role in block:
            if role not in ROLES:
                raise reader.fail(f"names.{role}", f"unknown role; expected one of {ROLES}")
        names = {role: _name_block(reader, role) for role in ROLES if role in block}
    rate = reader.number("discount_rate")
    config = ScenarioConfig(
        path=str(path),
        names=names,
        contract=_contract(reader),
        discount_rate=default_discount_rate() if rate is None else rate,
        monte_carlo=_monte_carlo(reader),
        sweep=_sweep(reader),
        breakeven=_breakeven(reader),
        dates=_dates(reader),
    )
    _check_snapshots(config)
    log.info("CONFIG: %s loaded (hash=%s)", path.name, config.config_hash()[:12])
    return config


def _check_snapshots(config: ScenarioConfig) -> None:
    as_of = config.dates.valuation or config.dates.inception
    if as_of is None:
        return
    for name in config.names.values():
        taken = snapshot_date(name.quotes_path) if name.quotes_path else None
        if taken is not None and taken != as_of:
            log.warning("CONFIG: %s quotes dated %s, scenario dated %s", name.label, taken, as_of)


def discount_curve(config: ScenarioConfig) -> DiscountCurve:
    return DiscountCurve.flat(config.discount_rate)


def market_curve(config: ScenarioConfig, role: str):
    name = config.names[role]
    if name.market == "quotes":
        return bootstrap_hazard(name.quotes, discount_curve(config), frequency=config.contract.frequency if config.contract else 4)
    if name.market == "preset":
        return cir_implied_curve(PRESETS[name.market_preset], name.label)
    return CirImpliedCurve(name.params, name.label)


def market_curves(config: ScenarioConfig) -> Dict[str, Any]:
    return {role: market_curve(config, role) for role in config.names}


def elapsed_years(inception: ScenarioConfig, valuation: ScenarioConfig) -> float:
    start = inception.dates.inception
    end = valuation.dates.valuation
    if start is None:
        raise ConfigError(inception.path, "is required for mtm", key="dates.inception")
    if end is None:
        raise ConfigError(valuation.path, "is required for mtm", key="dates.valuation")
    elapsed = year_fraction(start, end)
    if elapsed <= 0.0:
        raise ConfigError(valuation.path, f"valuation date {end} is not after inception {start}", key="dates.valuation")
    return elapsed


def build_model(
    config: ScenarioConfig,
    correlation: Tuple[float, float, float],
    nu: Optional[float] = None,
    curves: Optional[Dict[str, Any]] = None,
    spread: Optional[float] = None,
) -> ScenarioModel:
    """Calibrate the three shifted-CIR names to their market curves and wire the contract.

    ``nu`` replaces the volatility of the swept name. ``spread`` (a fraction)
    overrides the contract spread; otherwise a break-even contract spread is
    priced off the reference market curve.
    """
    config.require_names()
    curves = curves if curves is not None else market_curves(config)
    terms = config.contract
    disc = discount_curve(config)
    reference = config.names["reference"]
    if spread is None:
        if terms.spread_bp is None:
            shape = CdsContract(terms.start, terms.maturity, 0.0, reference.lgd, frequency=terms.frequency)
            spread = breakeven_spread(shape, curves["reference"], disc)
        else:
            spread = terms.spread_bp * 1e-4
    contract = CdsContract(terms.start, terms.maturity, spread, reference.lgd, frequency=terms.frequency)
    step = config.monte_carlo.settings.sim_step
    models = []
    for role in ROLES:
        name = config.names[role]
        params = name.params.with_nu(nu) if (nu is not None and role == config.sweep.vary) else name.params
        models.append(calibrate_shift(params, curves[role].survival, terms.maturity, step, name.label))
    return ScenarioModel(
        tuple(models),
        CopulaSpec(*correlation),
        tuple(config.names[role].lgd for role in ROLES),
        contract,
        disc,
    )
