"""Flat `section.key = value` configuration with environment overrides.

The file format needs no parser dependency: one assignment per line,
`#` comments, keys namespaced by a single section prefix. Unknown keys are
rejected up front. The canonical serialization (sorted keys, normalized
value rendering) is hashed into a digest that travels with checkpoints, so
incompatible artifacts fail loudly instead of mis-scoring.

Environment variables prefixed `DSAE_` override file values: the remainder
is lowercased and its first underscore becomes the section dot, e.g.
`DSAE_MODEL_ATTN_HEADS=5` sets `model.attn_heads`.
"""

from __future__ import annotations

import hashlib
import os

from .errors import ConfigError
from .features import FeatureConfig
from .model import ModelConfig
from .segmenter import WindowPolicy
from .trainer import TrainConfig

ENV_PREFIX = "DSAE_"

# section.key -> default (type is inferred from the default)
DEFAULTS = {
    "feature.sample_rate": 16000,
    "feature.window_ms": 32,
    "feature.hop_ms": 16,
    "feature.mel_bins": 40,
    "feature.fmin": 0.0,
    "feature.fmax": 8000.0,
    "feature.vad_enabled": True,
    "feature.vad_threshold_db": 40.0,
    "feature.vad_min_region": 5,
    "window.train_min": 80,
    "window.train_max": 120,
    "window.test_length": 100,
    "window.pad_short": True,
    "window.tail_segment": True,
    "model.layers": 1,
    "model.hidden": 32,
    "model.embed_dim": 16,
    "model.attn_dim": 16,
    "model.attn_heads": 2,
    "model.head_merge": "average",
    "model.renorm_utterance": False,
    "loss.seg_weight": 0.2,
    "loss.penalty_weight": 0.001,
    "loss.exclude_self": False,
    "loss.segment_centroids": "speaker",
    "train.speakers_per_batch": 8,
    "train.utterances_per_speaker": 4,
    "train.lr": 0.001,
    "train.clip_norm": 3.0,
    "train.clip_per_tensor": False,
    "train.max_batches": 15000,
    "train.seed": 0,
    "train.adam_beta1": 0.9,
    "train.adam_beta2": 0.999,
    "train.adam_eps": 1e-8,
    "train.validate_every": 0,
    "train.patience": 3,
    "train.decay_factor": 0.5,
    "train.lr_floor": 1e-5,
    "train.log_every": 1,
    "train.checkpoint_every": 0,
    "train.validation_trials": 200,
    "paths.manifest": "",
    "paths.features_dir": "",
    "paths.checkpoint_dir": "",
    "paths.trials": "",
}


def _parse_value(key: str, raw: str):
    default = DEFAULTS[key]
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from e
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from e
    return raw


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class Config:
    def __init__(self, values: dict | None = None):
        self.values = dict(DEFAULTS)
        for key, value in (values or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            self.values[key] = value

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def set(self, key: str, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _parse_value(key, value) if isinstance(value, str) else value

    @classmethod
    def load(cls, path: str | None = None, env: dict | None = None) -> "Config":
        """Read a config file (optional), then apply DSAE_* environment overrides."""
        cfg = cls()
        if path is not None:
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    lines = fh.read().splitlines()
            except OSError as e:
                raise ConfigError(f"{path}: {e}") from e
            for lineno, line in enumerate(lines, 1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = stripped.split("=", 1)
                key = key.strip()
                if key not in DEFAULTS:
                    raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
                cfg.values[key] = _parse_value(key, raw)
        env = os.environ if env is None else env
        for name, raw in sorted(env.items()):
            if not name.startswith(ENV_PREFIX):
                continue
            rest = name[len(ENV_PREFIX):].lower()
            if "_" not in rest:
                raise ConfigError(f"{name}: expected {ENV_PREFIX}SECTION_KEY")
            section, key = rest.split("_", 1)
            full = f"{section}.{key}"
            if full not in DEFAULTS:
                raise ConfigError(f"{name}: no config key {full!r}")
            cfg.values[full] = _parse_value(full, raw)
        return cfg

    def canonical(self) -> str:
        return "\n".join(f"{k} = {_render_value(self.values[k])}" for k in sorted(self.values))

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical().encode("utf-8")).digest()

    def write(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.canonical() + "\n")

    # typed views ---------------------------------------------------------

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(
            sample_rate=self["feature.sample_rate"],
            window_ms=self["feature.window_ms"],
            hop_ms=self["feature.hop_ms"],
            mel_bins=self["feature.mel_bins"],
            fmin=self["feature.fmin"],
            fmax=self["feature.fmax"],
            vad_enabled=self["feature.vad_enabled"],
            vad_threshold_db=self["feature.vad_threshold_db"],
            vad_min_region=self["feature.vad_min_region"],
        )

    def window_policy(self, mode: str) -> WindowPolicy:
        return WindowPolicy(
            mode=mode,
            train_min=self["window.train_min"],
            train_max=self["window.train_max"],
            test_length=self["window.test_length"],
            pad_short=self["window.pad_short"],
            tail_segment=self["window.tail_segment"],
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            input_dim=self["feature.mel_bins"],
            layers=self["model.layers"],
            hidden=self["model.hidden"],
            embed_dim=self["model.embed_dim"],
            attn_dim=self["model.attn_dim"],
            attn_heads=self["model.attn_heads"],
            head_merge=self["model.head_merge"],
            renorm_utterance=self["model.renorm_utterance"],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            speakers_per_batch=self["train.speakers_per_batch"],
            utterances_per_speaker=self["train.utterances_per_speaker"],
            seg_weight=self["loss.seg_weight"],
            penalty_weight=self["loss.penalty_weight"],
            exclude_self=self["loss.exclude_self"],
            segment_centroids=self["loss.segment_centroids"],
            lr=self["train.lr"],
            clip_norm=self["train.clip_norm"],
            clip_per_tensor=self["train.clip_per_tensor"],
            max_batches=self["train.max_batches"],
            seed=self["train.seed"],
            adam_beta1=self["train.adam_beta1"],
            adam_beta2=self["train.adam_beta2"],
            adam_eps=self["train.adam_eps"],
            validate_every=self["train.validate_every"],
            patience=self["train.patience"],
            decay_factor=self["train.decay_factor"],
            lr_floor=self["train.lr_floor"],
            log_every=self["train.log_every"],
            checkpoint_every=self["train.checkpoint_every"],
            validation_trials=self["train.validation_trials"],
        )
