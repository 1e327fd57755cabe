#!/usr/bin/env python3
"""
Run configuration
YAML run documents with sections data / potential / estimator / tmc / removal /
pricing / exact / output, dotted command-line overrides, validation before any
computation, and a short hash used in output names.

Example:
    data:
      train_csv: train.csv
      test_csv: test.csv
    potential:
      name: logistic
    estimator:
      m: 100
      T_max: 5000
      schedule: {kind: inverse_power, b: 1.0}
    output:
      dir: results
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Mapping, Optional

import yaml

from .core import ConfigError
from .interpolate import ValueInterpolator
from .potentials import check_potential_spec

WORKERS_ENV = 'DISTVAL_WORKERS'
HASH_LENGTH = 12


# ============================================================================
# SECTIONS
# ============================================================================

@dataclass
class DataSection:
    train_csv: Optional[str] = None
    test_csv: Optional[str] = None
    valuate_csv: Optional[str] = None
    standardize: bool = True
    synthetic: Optional[Dict[str, Any]] = None
    synthetic_seed: int = 0
    test_size: int = 200
    valuate_size: Optional[int] = None


@dataclass
class PotentialSection:
    name: str = 'mean'
    params: Dict[str, Any] = field(default_factory=dict)

    def spec(self) -> Dict[str, Any]:
        out = dict(self.params)
        out['name'] = self.name
        return out


@dataclass
class EstimatorSection:
    m: int = 100
    T_max: int = 2000
    schedule: Dict[str, Any] = field(default_factory=lambda: {'kind': 'uniform'})
    subsample_p: float = 1.0
    window: int = 100
    threshold: float = 0.01
    seed: int = 0
    workers: Optional[int] = None
    interpolate: Dict[str, Any] = field(default_factory=dict)
    record_cardinalities: bool = False


@dataclass
class TmcSection:
    max_permutations: int = 1000
    truncation_tolerance: float = 0.01
    window: int = 100
    threshold: float = 0.01


@dataclass
class RemovalSection:
    values_csv: Optional[str] = None
    steps: int = 10
    orderings: List[str] = field(default_factory=lambda: ['by_value_desc', 'random'])
    seed: int = 0


@dataclass
class PricingSection:
    seller_csv: Optional[str] = None
    buyer_csv: Optional[str] = None
    sold_csv: Optional[str] = None
    synthetic: Optional[Dict[str, Any]] = None
    seller_size: int = 1000
    m: int = 100
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    steps: int = 10
    subsample_p: float = 1.0
    shift: Dict[str, Any] = field(default_factory=dict)


@dataclass
class ExactSection:
    fixture_csv: Optional[str] = None
    max_n: int = 12
    mc_oracle_draws: int = 200000
    tolerance: float = 1e-9
    instances: int = 50
    seed: int = 0


@dataclass
class OutputSection:
    dir: str = 'results'
    ledger: Optional[str] = None


SECTIONS = {
    'data': DataSection,
    'potential': PotentialSection,
    'estimator': EstimatorSection,
    'tmc': TmcSection,
    'removal': RemovalSection,
    'pricing': PricingSection,
    'exact': ExactSection,
    'output': OutputSection,
}

PATH_FIELDS = {
    'data': ('train_csv', 'test_csv', 'valuate_csv'),
    'removal': ('values_csv',),
    'pricing': ('seller_csv', 'buyer_csv', 'sold_csv'),
    'exact': ('fixture_csv',),
}


@dataclass
class RunConfig:
    data: DataSection
    potential: PotentialSection
    estimator: EstimatorSection
    tmc: TmcSection
    removal: RemovalSection
    pricing: PricingSection
    exact: ExactSection
    output: OutputSection
    base_dir: str = '.'

    def resolve(self, path: Optional[str]) -> Optional[str]:
        """A config path made absolute against the config file's directory"""
        if path is None:
            return None
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.base_dir, path))

    @property
    def output_dir(self) -> str:
        return self.resolve(self.output.dir)

    def to_dict(self) -> Dict[str, Any]:
        """Sections as written (paths unresolved), for hashing and provenance"""
        return {name: asdict(getattr(self, name)) for name in SECTIONS}


# ============================================================================
# LOADING
# ============================================================================

def parse_override_value(text: str) -> Any:
    """Command-line override values use YAML scalar syntax: 7, 0.5, true, [1, 2]"""
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        return text
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def apply_overrides(document: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    for dotted, value in overrides.items():
        parts = dotted.split('.')
        if len(parts) < 2 or parts[0] not in SECTIONS:
            raise ConfigError(f"override '{dotted}' must be <section>.<key> with section in {list(SECTIONS)}")
        node = document
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = {}
                node[part] = child
            if not isinstance(child, dict):
                raise ConfigError(f"override '{dotted}': '{part}' is not a section")
            node = child
        node[parts[-1]] = parse_override_value(value) if isinstance(value, str) else value
    return document


def _build_section(name: str, raw: Any):
    cls = SECTIONS[name]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: section must be a mapping")
    known = {f.name for f in fields(cls)}
    if name == 'potential':
        params = {k: v for k, v in raw.items() if k != 'name'}
        return cls(name=raw.get('name', 'mean'), params=params)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown config key")
    return cls(**raw)


def load_config(path: Optional[str], overrides: Mapping[str, Any] = None) -> RunConfig:
    """
    Load, override and validate a run config. `path` may be None to run from
    defaults and overrides alone (paths then resolve against the working directory).
    """
    document: Dict[str, Any] = {}
    base_dir = os.getcwd()
    if path is not None:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                document = yaml.safe_load(f) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except yaml.YAMLError as e:
            raise ConfigError(f"could not parse {path}: {e}")
        if not isinstance(document, dict):
            raise ConfigError(f"{path}: top level must be a mapping of sections")
        base_dir = os.path.dirname(os.path.abspath(path))

    unknown = sorted(set(document) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown config section")
    apply_overrides(document, overrides or {})

    try:
        sections = {name: _build_section(name, document.get(name)) for name in SECTIONS}
    except TypeError as e:
        raise ConfigError(f"malformed config: {e}")
    config = RunConfig(base_dir=base_dir, **sections)
    validate_config(config)
    return config


# ============================================================================
# VALIDATION
# ============================================================================

def _require(condition: bool, field_name: str, message: str):
    if not condition:
        raise ConfigError(f"{field_name}: {message}")


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def validate_config(config: RunConfig):
    """Check every field; the error names the dotted field"""
    data, est, tmc = config.data, config.estimator, config.tmc

    check_potential_spec(config.potential.spec())

    _require(_is_int(est.m) and est.m >= 1, 'estimator.m', f"must be an integer >= 1, got {est.m!r}")
    _require(_is_int(est.window) and est.window >= 1, 'estimator.window', "must be an integer >= 1")
    _require(_is_int(est.T_max) and est.T_max >= est.window, 'estimator.T_max',
             f"must be an integer >= estimator.window ({est.window}), got {est.T_max!r}")
    _require(_is_number(est.threshold) and 0 <= est.threshold < 1, 'estimator.threshold', "must be in [0, 1)")
    _require(_is_number(est.subsample_p) and 0 < est.subsample_p <= 1, 'estimator.subsample_p',
             "must be in (0, 1]")
    _require(_is_int(est.seed), 'estimator.seed', "must be an integer")
    _require(est.workers is None or (_is_int(est.workers) and est.workers >= 1), 'estimator.workers',
             "must be an integer >= 1")
    _require(isinstance(est.schedule, dict), 'estimator.schedule', "must be a mapping {kind, b?}")
    kind = est.schedule.get('kind', 'uniform')
    _require(kind in ('uniform', 'inverse_power'), 'estimator.schedule.kind',
             f"must be 'uniform' or 'inverse_power', got {kind!r}")
    if kind == 'inverse_power':
        b = est.schedule.get('b', 1.0)
        _require(_is_number(b) and b >= 0.5, 'estimator.schedule.b', f"must be a number >= 0.5, got {b!r}")
    ValueInterpolator.from_config(est.interpolate)
    _require(isinstance(est.record_cardinalities, bool), 'estimator.record_cardinalities',
             "must be true or false")

    _require(_is_int(tmc.max_permutations) and tmc.max_permutations >= 1, 'tmc.max_permutations',
             "must be an integer >= 1")
    _require(_is_number(tmc.truncation_tolerance) and tmc.truncation_tolerance >= 0,
             'tmc.truncation_tolerance', "must be >= 0")
    _require(_is_number(tmc.threshold) and 0 <= tmc.threshold < 1, 'tmc.threshold', "must be in [0, 1)")

    _require(_is_int(config.removal.steps) and config.removal.steps >= 2, 'removal.steps', "must be an integer >= 2")
    for ordering in config.removal.orderings:
        _require(ordering in ('by_value_desc', 'by_value_asc', 'random'), 'removal.orderings',
                 f"unknown ordering {ordering!r}")

    pricing = config.pricing
    _require(_is_int(pricing.m) and pricing.m >= 1, 'pricing.m', "must be an integer >= 1")
    _require(isinstance(pricing.seeds, list) and pricing.seeds and all(_is_int(s) for s in pricing.seeds),
             'pricing.seeds', "must be a non-empty list of integers")
    _require(_is_number(pricing.subsample_p) and 0 < pricing.subsample_p <= 1, 'pricing.subsample_p',
             "must be in (0, 1]")

    exact = config.exact
    _require(_is_int(exact.max_n) and exact.max_n >= 1, 'exact.max_n', "must be an integer >= 1")
    _require(_is_int(exact.mc_oracle_draws) and exact.mc_oracle_draws >= 1, 'exact.mc_oracle_draws',
             "must be an integer >= 1")
    _require(_is_number(exact.tolerance), 'exact.tolerance', "must be a number")
    _require(_is_int(exact.instances) and exact.instances >= 0, 'exact.instances', "must be an integer >= 0")

    if data.synthetic is not None:
        _require(isinstance(data.synthetic, dict), 'data.synthetic', "must be a mapping {kind, n, dim, ...}")
        _require(_is_int(data.synthetic.get('n')) and data.synthetic['n'] >= 1, 'data.synthetic.n',
                 "must be an integer >= 1")

    for section, names in PATH_FIELDS.items():
        for name in names:
            value = getattr(getattr(config, section), name)
            if value is None:
                continue
            _require(isinstance(value, str), f"{section}.{name}", "must be a path")
            _require(os.path.isfile(config.resolve(value)), f"{section}.{name}",
                     f"file not found: {config.resolve(value)}")


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:HASH_LENGTH]


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV)
    if value:
        try:
            workers = int(value)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {value!r}")
        if workers < 1:
            raise ConfigError(f"{WORKERS_ENV} must be >= 1, got {workers}")
        return workers
    return os.cpu_count() or 1
