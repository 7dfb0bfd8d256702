"""Run configuration: one document drives every pipeline stage.

Unknown keys are rejected so typos in config files fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .dcnet import NetworkConfig, TrainingConfig
from .gmm import EmConfig


class ConfigError(ValueError):
    pass


@dataclass
class StftConfig:
    window_ms: float = 32.0
    hop_ms: float = 8.0


@dataclass
class ConfidenceConfig:
    tau_db: float = -10.0
    alpha: float = 1.0
    jsd_samples: int = 10_000


@dataclass
class MixgenConfig:
    n_mixtures: int = 100
    duration: float = 1.0
    sample_rate: int = 8000
    source_kinds: list = field(default_factory=lambda: ["sine_bank", "noise", "chirp"])
    split_fractions: list = field(default_factory=lambda: [0.7, 0.15, 0.15])


@dataclass
class EnsembleConfig:
    policy: str = "confidence"
    seed: int = 0


@dataclass
class RunConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    gmm: EmConfig = field(default_factory=EmConfig)
    n_components: int = 2
    confidence: ConfidenceConfig = field(default_factory=ConfidenceConfig)
    network: dict = field(
        default_factory=lambda: {"embedding_dim": 15, "hidden_size": 64, "num_layers": 2}
    )
    training: TrainingConfig = field(default_factory=TrainingConfig)
    mixgen: MixgenConfig = field(default_factory=MixgenConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    seed: int = 0

    def network_config(self, n_freq: int) -> NetworkConfig:
        return NetworkConfig(n_freq=n_freq, **self.network)


_SECTION_TYPES = {
    "stft": StftConfig,
    "gmm": EmConfig,
    "confidence": ConfidenceConfig,
    "training": TrainingConfig,
    "mixgen": MixgenConfig,
    "ensemble": EnsembleConfig,
}


def _build(cls, data, path):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config key '{path}{sorted(unknown)[0]}'")
    return cls(**data)


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config key '{sorted(unknown)[0]}'")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"config section '{key}' must be an object")
            kwargs[key] = _build(_SECTION_TYPES[key], value, f"{key}.")
        elif key == "network":
            allowed = {"embedding_dim", "hidden_size", "num_layers"}
            unknown = set(value) - allowed
            if unknown:
                raise ConfigError(f"unknown config key 'network.{sorted(unknown)[0]}'")
            kwargs[key] = value
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)
