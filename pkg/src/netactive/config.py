"""Experiment configuration: flat `key = value` files with strict validation."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    """Malformed or out-of-range configuration; maps to CLI exit code 1."""


@dataclass
class ExperimentConfig:
    # data source
    data_source: str = "synthetic"  # synthetic | csv
    csv_path: str = ""
    target_column: str = "throughput"
    feature_columns: str = "auto"  # "auto" or comma-separated column names
    categorical_column: str = ""
    categorical_map_path: str = ""
    synthetic_n: int = 5000
    world_seed: int = 0
    world_noise_std: float = 50.0
    world_peak_rate: float = 2000.0
    world_range_scale: float = 300.0
    world_orientation_gain: float = 1.0
    world_orientation_lobes: int = 1
    world_walking_fraction: float = 0.8
    world_driving_factor: float = 0.8
    world_blockage_enabled: bool = True
    # split
    test_fraction: float = 0.2
    seed_labeled_fraction: float = 0.2
    # loop
    loop: str = "pool"  # pool | stream | synthesis
    strategies: str = "uncertainty,random"
    batch_size: int = 4
    iterations: int = 10
    budget_total: float = math.inf
    annotation_cost: float = 1.0
    collection_cost: float = 0.25
    collect_enabled: bool = False
    collect_fraction: float = 0.5
    # network
    hidden_sizes: str = "64,64"
    dropout_rate: float = 0.2
    activation: str = "relu"
    weight_init_scale: float = 1.0
    # training
    learning_rate: float = 0.001
    train_batch_size: int = 64
    initial_epochs: int = 300
    fine_tune_epochs: int = 60
    warm_start: bool = True
    # uncertainty
    mc_passes: int = 50
    qbc_members: int = 5
    hybrid_beta: float = 0.5
    aleatoric_val_fraction: float = 0.15
    # stream loop
    stream_quantile: float = 0.9
    stream_window: int = 100
    stream_max_queries: int = 10000
    stream_retrain_every: int = 10
    stream_epochs: int = 5
    stream_arrivals: int = 1000
    # synthesis loop
    gmm_components: int = 4
    gmm_em_iters: int = 50
    candidate_multiple: int = 4
    probe_size: int = 200
    # harness
    seeds: str = "0,1,2"
    output_dir: str = "runs"

    def strategy_list(self) -> list[str]:
        return [s.strip() for s in self.strategies.split(",") if s.strip()]

    def seed_list(self) -> list[int]:
        return [int(s.strip()) for s in self.seeds.split(",") if s.strip()]

    def hidden_size_list(self) -> list[int]:
        return [int(s.strip()) for s in self.hidden_sizes.split(",") if s.strip()]


_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}

_CHOICES = {
    "data_source": ("synthetic", "csv"),
    "loop": ("pool", "stream", "synthesis"),
    "activation": ("relu", "tanh"),
}

# key -> (low, high, low_inclusive, high_inclusive); None means unbounded
_RANGES = {
    "synthetic_n": (10, None, True, True),
    "world_noise_std": (0.0, None, True, True),
    "world_peak_rate": (0.0, None, False, True),
    "world_range_scale": (0.0, None, False, True),
    "world_orientation_gain": (0.0, 1.0, True, True),
    "world_orientation_lobes": (1, None, True, True),
    "world_walking_fraction": (0.0, 1.0, True, True),
    "world_driving_factor": (0.0, None, False, True),
    "test_fraction": (0.0, 1.0, False, False),
    "seed_labeled_fraction": (0.0, 1.0, False, False),
    "batch_size": (1, None, True, True),
    "iterations": (0, None, True, True),
    "budget_total": (0.0, None, False, True),
    "annotation_cost": (0.0, None, False, True),
    "collection_cost": (0.0, None, False, True),
    "collect_fraction": (0.0, 1.0, True, True),
    "dropout_rate": (0.0, 1.0, True, False),
    "weight_init_scale": (0.0, None, False, True),
    "learning_rate": (0.0, None, False, True),
    "train_batch_size": (1, None, True, True),
    "initial_epochs": (0, None, True, True),
    "fine_tune_epochs": (0, None, True, True),
    "mc_passes": (1, None, True, True),
    "qbc_members": (2, None, True, True),
    "hybrid_beta": (0.0, 1.0, True, True),
    "aleatoric_val_fraction": (0.0, 1.0, True, False),
    "stream_quantile": (0.0, 1.0, False, False),
    "stream_window": (1, None, True, True),
    "stream_max_queries": (1, None, True, True),
    "stream_retrain_every": (1, None, True, True),
    "stream_epochs": (0, None, True, True),
    "stream_arrivals": (1, None, True, True),
    "gmm_components": (1, None, True, True),
    "gmm_em_iters": (0, None, True, True),
    "candidate_multiple": (1, None, True, True),
    "probe_size": (1, None, True, True),
}

_VALID_STRATEGIES = ("random", "uncertainty", "qbc", "coreset", "hybrid")


def _parse_value(key: str, raw: str, kind: type, line_no: int):
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered not in _BOOL_VALUES:
                raise ValueError(f"expected true/false, got {raw!r}")
            return _BOOL_VALUES[lowered]
        if kind is int:
            return int(raw)
        if kind is float:
            value = float(raw)
            if math.isnan(value):
                raise ValueError("nan is not allowed")
            return value
        return raw
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: key {key!r}: {exc}") from None


def _check_range(key: str, value, line_no: int) -> None:
    if key not in _RANGES:
        return
    low, high, low_inc, high_inc = _RANGES[key]
    ok = True
    if low is not None:
        ok = ok and (value >= low if low_inc else value > low)
    if high is not None:
        ok = ok and (value <= high if high_inc else value < high)
    if not ok:
        lo = "[" if low_inc else "("
        hi = "]" if high_inc else ")"
        raise ConfigError(
            f"line {line_no}: key {key!r}: value {value!r} outside range "
            f"{lo}{low}, {high}{hi}"
        )


def validate_config(config: ExperimentConfig, source: str = "<config>") -> None:
    """Cross-field checks plus referenced-file existence."""
    for key, choices in _CHOICES.items():
        if getattr(config, key) not in choices:
            raise ConfigError(f"{source}: key {key!r} must be one of {choices}")
    for strategy in config.strategy_list():
        if strategy not in _VALID_STRATEGIES:
            raise ConfigError(
                f"{source}: unknown strategy {strategy!r}; expected one of {_VALID_STRATEGIES}"
            )
    if not config.strategy_list():
        raise ConfigError(f"{source}: strategies must name at least one strategy")
    if not config.seed_list():
        raise ConfigError(f"{source}: seeds must name at least one master seed")
    try:
        sizes = config.hidden_size_list()
    except ValueError:
        raise ConfigError(f"{source}: hidden_sizes must be comma-separated integers") from None
    if any(s < 1 for s in sizes):
        raise ConfigError(f"{source}: hidden sizes must be positive")
    if config.data_source == "csv":
        if not config.csv_path:
            raise ConfigError(f"{source}: data_source=csv requires csv_path")
        if not os.path.exists(config.csv_path):
            raise ConfigError(f"{source}: csv_path {config.csv_path!r} does not exist")
        if config.collect_enabled:
            raise ConfigError(
                f"{source}: collection needs a twin world; disable collect_enabled for csv data"
            )
    if config.categorical_map_path and not os.path.exists(config.categorical_map_path):
        raise ConfigError(
            f"{source}: categorical_map_path {config.categorical_map_path!r} does not exist"
        )
    if config.categorical_column and not config.categorical_map_path:
        raise ConfigError(f"{source}: categorical_column requires categorical_map_path")


def parse_config(path: str) -> ExperimentConfig:
    """Parse a flat key=value file; `#` starts a comment, unknown keys error."""
    known = {f.name: f.type for f in fields(ExperimentConfig)}
    types = {f.name: type(getattr(ExperimentConfig(), f.name)) for f in fields(ExperimentConfig)}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}: line {line_no}: expected 'key = value'")
            key, raw = (part.strip() for part in body.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}: line {line_no}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}: line {line_no}: duplicate key {key!r}")
            value = _parse_value(key, raw, types[key], line_no)
            _check_range(key, value, line_no)
            values[key] = value
    config = ExperimentConfig(**values)
    validate_config(config, source=path)
    return config


def format_config(config: ExperimentConfig) -> str:
    """Render the fully resolved config; parse_config(format_config(c)) == c."""
    lines = []
    for f in sorted(fields(config), key=lambda f: f.name):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def load_categorical_map(path: str) -> dict[str, float]:
    """Read a `name=integer` per-line mapping for one categorical column."""
    mapping: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}: line {line_no}: expected 'name=integer'")
            name, raw = (part.strip() for part in body.split("=", 1))
            try:
                mapping[name] = float(int(raw))
            except ValueError:
                raise ConfigError(
                    f"{path}: line {line_no}: {raw!r} is not an integer"
                ) from None
    if not mapping:
        raise ConfigError(f"{path}: empty categorical mapping")
    return mapping
