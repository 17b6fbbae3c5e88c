"""Experiment configuration: flat ``key = value`` INI files with bracketed
section headers. Every key has a documented default; unknown sections or
keys are rejected. All randomness in a run derives from the single
``seed`` key."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .data import TaskSpec
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict[str, object]] = {
    "run": {
        "seed": 13,
    },
    "data": {
        "src_vocab_size": 40,
        "n_entities": 36,
        "ne_rate": 0.22,
        "frames_per_token": 8,
        "frame_jitter": 2,
        "noise_std": 0.1,
        "n_train": 8000,
        "n_valid": 500,
        "n_test": 500,
        "min_len": 3,
        "max_len": 12,
    },
    "model": {
        "variant": "parallel_emb",
        "feature_dim": 80,
        "enc_layers": 4,
        "dec_layers": 2,
        "model_dim": 64,
        "ffn_dim": 128,
        "heads": 4,
        "ctc_tap_layer": 0,
        "use_conv_module": True,
        "conv_kernel": 7,
        "dropout": 0.1,
        "label_smoothing": 0.1,
        "lambda_ctc": 0.5,
        "lambda_tag": 1.0,
    },
    "train": {
        "max_steps": 1500,
        "batch_size": 16,
        "patience_epochs": 5,
        "eval_every": 250,
        "update_freq": 1,
        "clip_norm": 10.0,
        "adam_beta1": 0.9,
        "adam_beta2": 0.98,
        "adam_eps": 1e-8,
        "peak_lr": 0.004,
        "warmup_steps": 250,
    },
    "decode": {
        "beam": 5,
        "length_norm": True,
    },
    "simul": {
        "k": 1,
        "chunk_ms": 500,
        "ks": "1,2,3",
        "compute_aware": True,
        "trace_count": 10,
    },
}

_KEY_SECTION = {}
for _sec, _keys in DEFAULTS.items():
    for _k in _keys:
        if _k in _KEY_SECTION:
            raise AssertionError(f"duplicate config key {_k}")
        _KEY_SECTION[_k] = _sec


def _parse_value(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, object]] = field(
        default_factory=lambda: {s: dict(kv) for s, kv in DEFAULTS.items()})

    def get(self, key: str):
        return self.values[_KEY_SECTION[key]][key]

    def set(self, key: str, value):
        if key not in _KEY_SECTION:
            raise ConfigError(f"unknown config key {key!r}")
        section = _KEY_SECTION[key]
        default = DEFAULTS[section][key]
        if isinstance(value, str) and not isinstance(default, str):
            value = _parse_value(value, default)
        self.values[section][key] = value

    # -- derived objects -----------------------------------------------

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def task_spec(self) -> TaskSpec:
        d = self.values["data"]
        return TaskSpec(src_vocab_size=d["src_vocab_size"],
                        n_entities=d["n_entities"], ne_rate=d["ne_rate"],
                        frames_per_token=d["frames_per_token"],
                        frame_jitter=d["frame_jitter"],
                        noise_std=d["noise_std"], seed=self.seed)

    def split_sizes(self) -> tuple[int, int, int]:
        d = self.values["data"]
        return d["n_train"], d["n_valid"], d["n_test"]

    def len_range(self) -> tuple[int, int]:
        d = self.values["data"]
        return d["min_len"], d["max_len"]

    def model_config(self, vocab_size: int, src_vocab_size: int,
                     variant: str | None = None) -> ModelConfig:
        m = self.values["model"]
        return ModelConfig(vocab_size=vocab_size, src_vocab_size=src_vocab_size,
                           variant=variant or m["variant"],
                           feature_dim=m["feature_dim"],
                           enc_layers=m["enc_layers"], dec_layers=m["dec_layers"],
                           model_dim=m["model_dim"], ffn_dim=m["ffn_dim"],
                           heads=m["heads"], ctc_tap_layer=m["ctc_tap_layer"],
                           use_conv_module=m["use_conv_module"],
                           conv_kernel=m["conv_kernel"], dropout=m["dropout"],
                           label_smoothing=m["label_smoothing"],
                           lambda_ctc=m["lambda_ctc"], lambda_tag=m["lambda_tag"])

    def train_config(self, seed: int | None = None) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(max_steps=t["max_steps"], batch_size=t["batch_size"],
                           seed=self.seed if seed is None else seed,
                           patience_epochs=t["patience_epochs"],
                           eval_every=t["eval_every"],
                           update_freq=t["update_freq"],
                           clip_norm=t["clip_norm"],
                           adam_beta1=t["adam_beta1"],
                           adam_beta2=t["adam_beta2"], adam_eps=t["adam_eps"],
                           peak_lr=t["peak_lr"],
                           warmup_steps=t["warmup_steps"])

    def sweep_ks(self) -> list[int]:
        raw = str(self.values["simul"]["ks"])
        try:
            return [int(x) for x in raw.split(",") if x.strip()]
        except ValueError as e:
            raise ConfigError(f"bad ks list {raw!r}") from e

    def dump(self) -> str:
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            for k, v in keys.items():
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)


def load_config(path=None) -> ExperimentConfig:
    """Defaults, then the INI file's overrides. Unknown keys are errors."""
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(Path(path))
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            cfg.values[section][key] = _parse_value(raw, DEFAULTS[section][key])
    return cfg
