"""Experiment configuration: INI files with per-module sections, CLI
overrides, and the run manifest written before any work starts."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalid

MODES = ("low", "high", "ours-agg", "ours-agg-adv", "ours-full", "mae-pretrain")

ADVERSARIAL_MODES = ("ours-agg-adv", "ours-full")
OURS_MODES = ("ours-agg", "ours-agg-adv", "ours-full")


def default_seed() -> int:
    return int(os.environ.get("RESMATCH_SEED", "0"))


@dataclass
class ExperimentConfig:
    """One training run, fully resolved."""

    mode: str
    dataset: str = ""
    out_dir: str = "runs/run"
    epochs: int = 100
    learning_rate: float = 1e-4
    batch_size: int = 16
    seed: int = field(default_factory=default_seed)
    num_classes: int = 4
    width: int = 16
    lambda_adv: float = 1.0
    exemplar_count: int = 16
    tau: float = 1000.0
    blur_sigma: float = 0.6
    disc_pool: int = 2
    disc_channels: tuple = (32, 64, 128, 128, 128)
    pretrained: str = ""
    mae_embed_dim: int = 128
    mae_depth: int = 6
    mae_heads: int = 4
    mae_mask_ratio: float = 0.75
    device: str = "cpu"

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ConfigInvalid(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.learning_rate <= 0:
            raise ConfigInvalid("learning_rate must be positive")
        if self.lambda_adv < 0:
            raise ConfigInvalid("lambda_adv must be non-negative")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigInvalid("epochs and batch_size must be positive")
        if not self.dataset:
            raise ConfigInvalid("dataset path is required")
        if self.mode in ADVERSARIAL_MODES and self.exemplar_count < 0:
            raise ConfigInvalid("exemplar_count must be >= 0")
        if self.mode == "ours-full" and not self.pretrained:
            raise ConfigInvalid("mode ours-full requires a pretrained checkpoint path")
        if self.tau <= 0 or self.blur_sigma <= 0:
            raise ConfigInvalid("tau and blur_sigma must be positive")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["disc_channels"] = list(self.disc_channels)
        return d


_INT_KEYS = {
    "epochs", "batch_size", "seed", "num_classes", "width", "exemplar_count",
    "disc_pool", "mae_embed_dim", "mae_depth", "mae_heads",
}
_FLOAT_KEYS = {"learning_rate", "lambda_adv", "tau", "blur_sigma", "mae_mask_ratio"}


def _coerce(key: str, value: str):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key == "disc_channels":
        return tuple(int(v) for v in value.replace(",", " ").split())
    return value


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read an INI config (any sections; keys are flat) and apply overrides."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigInvalid(f"config file {path} not found or unreadable")
    merged: dict = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            merged[key] = value
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})

    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(merged) - known
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in merged.items():
        try:
            kwargs[key] = _coerce(key, value) if isinstance(value, str) else value
        except ValueError as exc:
            raise ConfigInvalid(f"bad value for {key!r}: {value!r}") from exc
    if "mode" not in kwargs:
        raise ConfigInvalid("config must set mode")
    return ExperimentConfig(**kwargs).validate()


def config_hash(config_dict: dict) -> str:
    return hashlib.sha256(json.dumps(config_dict, sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class RunManifest:
    """Provenance record written atomically into every artifact directory."""

    command: str
    config: dict
    seed: int
    version: str = "0.1.0"
    started: float = field(default_factory=time.time)
    finished: float | None = None
    outputs: dict = field(default_factory=dict)

    def write(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "run_manifest.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True))
        os.replace(tmp, path)
        return path
