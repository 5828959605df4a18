"""Run configuration: one JSON file with fixed sections, fail-fast validation.

Sections: data, encoder, model, loss, train, eval. Unknown sections or keys
are errors; every value is type-checked before a run starts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


_SECTION_KEYS = {
    "data": {"dataset", "format", "mask", "category_names", "synthetic"},
    "encoder": {"backend", "input_size", "weights", "seed"},
    "model": {"semantic_dim", "text_dim", "joint_dim", "prompt_length",
              "temperature", "seed", "embeddings_file"},
    "loss": {"variant", "gamma_pos", "gamma_neg", "margin", "temperature"},
    "train": {"lr", "warmup_lr", "warmup_epochs", "epochs", "batch_size",
              "seed", "momentum", "eval_every"},
    "eval": {"policy", "threshold", "top_k"},
}
_SYNTHETIC_KEYS = {"num_images", "num_categories", "seed", "avg_positives", "image_size"}


@dataclass
class RunConfig:
    data: dict = field(default_factory=dict)
    encoder: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)

    def loss_config(self) -> LossConfig:
        return LossConfig(**self.loss)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            loss=self.loss_config(),
            encoder_backend=self.encoder.get("backend", "synthetic"),
            input_size=self.encoder.get("input_size", 56),
            **self.train,
        )


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return validate_run_config(payload)


def validate_run_config(payload: dict) -> RunConfig:
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(payload) - set(_SECTION_KEYS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for section, allowed in _SECTION_KEYS.items():
        body = payload.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be an object")
        extra = set(body) - allowed
        if extra:
            raise ConfigError(f"unknown keys in section {section!r}: {sorted(extra)}")
    synthetic = payload.get("data", {}).get("synthetic")
    if synthetic is not None:
        extra = set(synthetic) - _SYNTHETIC_KEYS
        if extra:
            raise ConfigError(f"unknown keys in data.synthetic: {sorted(extra)}")
        for key in ("num_images", "num_categories"):
            if key not in synthetic:
                raise ConfigError(f"data.synthetic is missing required key {key!r}")
    data = payload.get("data", {})
    if synthetic is None and "dataset" not in data:
        raise ConfigError("data section needs either 'dataset'+'format' or 'synthetic'")
    if "dataset" in data and "format" not in data:
        raise ConfigError("data section is missing required key 'format'")
    cfg = RunConfig(**{k: payload.get(k, {}) for k in _SECTION_KEYS})
    cfg.train_config()  # validates loss + train numerics eagerly
    return cfg
