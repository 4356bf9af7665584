"""Run configuration: one file drives every CLI command.

Configs are JSON or TOML with nested sections mirroring the dataclasses
below.  Unknown keys are rejected (with their full path) rather than
ignored, and the resolved snapshot is embedded in every output artifact so
a run can be reproduced from its own files.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .data import AugmentSpec, SynthConfig
from .model import ModelConfig
from .solver import SolverConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass(frozen=True)
class ModelSection:
    """CLI-facing model sizes.

    Defaults are the desk-scale benchmark configuration: one hidden layer
    per branch with most capacity in the shared branch.  The library's
    :class:`~precede.model.ModelConfig` defaults to the deeper reference
    stacks instead; pick explicit sizes for real datasets.
    """

    hidden_dim: int = 16
    width_f: int = 12
    width_g: int = 12
    width_c: int = 48
    n_hidden_layers_f: int = 1
    n_hidden_layers_g: int = 1
    n_hidden_layers_c: int = 1
    shared_branch: bool = True

    def build(self, n_channels: int) -> ModelConfig:
        return ModelConfig(n_channels=n_channels, **dataclasses.asdict(self))


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 36
    batch_size: int = 32
    learning_rate: float = 1.5e-2
    weight_decay: float = 1e-4
    window_size: int = 30
    poa_horizon: int = 10
    threshold: float = 0.5
    train_fraction: float = 0.7
    val_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")

    def build(self, solver: SolverConfig, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, weight_decay=self.weight_decay,
            window_size=self.window_size, poa_horizon=self.poa_horizon,
            solver=solver, seed=seed, threshold=self.threshold,
        )


@dataclass(frozen=True)
class SolverSection:
    scheme: str = "rk4"
    steps_per_window: int = 8
    knot_aligned: bool = False

    def __post_init__(self):
        if self.scheme not in ("euler", "rk4"):
            raise ConfigError(f"solver.scheme must be 'euler' or 'rk4', got {self.scheme!r}")
        if self.steps_per_window < 1:
            raise ConfigError("solver.steps_per_window must be >= 1")

    def build(self) -> SolverConfig:
        return SolverConfig(scheme=self.scheme, steps_per_window=self.steps_per_window,
                            knot_aligned=self.knot_aligned)


@dataclass(frozen=True)
class AugmentSection:
    gamma: float = 0.0
    min_len: int = 100
    max_len: int = 500

    def build(self, seed: int) -> AugmentSpec:
        return AugmentSpec(gamma=self.gamma, min_len=self.min_len, max_len=self.max_len,
                           seed=seed)


@dataclass(frozen=True)
class SynthSection:
    T: int = 20000
    n_channels: int = 4
    anomaly_count: int = 14
    precursor_len: int = 25
    min_len: int = 100
    max_len: int = 500
    noise_sigma: float = 0.015
    ramp_height: float = 1.5
    shift_height: float = 3.0
    burst_amp: float = 2.5

    def build(self, seed: int) -> SynthConfig:
        return SynthConfig(seed=seed, **dataclasses.asdict(self))


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "out"
    data_path: str = ""
    drop: float = 0.0
    threads: int = 1
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    solver: SolverSection = field(default_factory=SolverSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    synth: SynthSection = field(default_factory=SynthSection)

    def snapshot(self) -> dict:
        """JSON-ready resolved copy, sufficient to re-run the command."""
        return dataclasses.asdict(self)


_SECTIONS = {
    "model": ModelSection,
    "train": TrainSection,
    "solver": SolverSection,
    "augment": AugmentSection,
    "synth": SynthSection,
}


def _build_section(cls, data: dict, path: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key '{path}{sorted(unknown)[0]}'")
    try:
        return cls(**data)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid section {path.rstrip('.') or 'top level'}: {err}") from err


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table/object")
    top = {}
    scalar_keys = {f.name for f in fields(RunConfig)} - set(_SECTIONS)
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be a table/object")
            top[key] = _build_section(_SECTIONS[key], value, f"{key}.")
        elif key in scalar_keys:
            top[key] = value
        else:
            raise ConfigError(f"unknown key {key!r}")
    return _build_section(RunConfig, top, "")


def load_config(path) -> RunConfig:
    text_path = str(path)
    try:
        if text_path.endswith(".toml"):
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        elif text_path.endswith(".json"):
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        else:
            raise ConfigError(f"config must be .json or .toml, got {text_path!r}")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {text_path}") from None
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as err:
        raise ConfigError(f"cannot parse {text_path}: {err}") from None
    return config_from_dict(data)
