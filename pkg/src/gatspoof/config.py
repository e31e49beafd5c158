"""Pipeline configuration: ``section.key = value`` text files with env overrides.

Grammar: one assignment per line, ``#`` starts a comment, blank lines are
ignored, keys must be known.  Environment variables named
``GATSPOOF_<SECTION>_<KEY>`` (upper case, dots as underscores) override the
file; command-line flags override both.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .encoder import DEFAULT_LAYERS, EncoderConfig, format_layers, parse_layers
from .features import FeatureConfig
from .metrics import TdcfCosts
from .systems import SYSTEMS
from .training import TrainConfig

ENV_PREFIX = "GATSPOOF_"


class ConfigError(ValueError):
    pass


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def conv(text):
        if text not in options:
            raise ValueError(f"{text!r} not in {options}")
        return text

    return conv


def _grid(text):
    a, b = str(text).lower().split("x")
    return (int(a), int(b))


# key -> (default, converter, help)
KEYS = {
    "audio.target_len": (64600, int, "samples per utterance after truncation/tiling"),
    "features.n_bands": (60, int, "linear filterbank bands"),
    "features.win_ms": (30.0, float, "analysis window (ms)"),
    "features.hop_ms": (10.0, float, "frame shift (ms)"),
    "features.n_fft": (512, int, "FFT size"),
    "features.window": ("hann", _choice("hann", "hamming", "rect"), "window function"),
    "features.log_floor": (1e-30, float, "energy floor applied before the log"),
    "features.mask_max_width": (12, int, "maximum masked bands per mini-batch"),
    "features.mask_fill": ("mean", _choice("mean", "zero"), "value written into masked bands"),
    "encoder.layers": (format_layers(DEFAULT_LAYERS), parse_layers, "layer table kind:KxK:filters:SxS:PxP;..."),
    "encoder.final_grid": ("3x5", _grid, "adaptive average grid (freq x time)"),
    "encoder.blocks_per_stage": (2, int, "basic blocks per residual stage"),
    "encoder.gat_dim": (128, int, "GAT output node dimension"),
    "encoder.att_dim": (128, int, "SAP/ASP attention hidden size"),
    "train.system": ("gat_t", _choice(*SYSTEMS), "countermeasure system"),
    "train.lr": (1e-4, float, "Adam learning rate"),
    "train.weight_decay": (1e-4, float, "L2 weight decay"),
    "train.decoupled_weight_decay": (False, _bool, "decoupled (AdamW-style) decay instead of L2"),
    "train.batch_size": (64, int, "mini-batch size"),
    "train.epochs": (300, int, "training epochs"),
    "train.max_steps": (0, int, "stop after this many optimizer steps (0 = no limit)"),
    "train.dtype": ("float32", _choice("float32", "float64"), "runtime precision"),
    "train.eval_batch_size": (16, int, "batch size for scoring"),
    "tdcf.pi_tar": (0.9405, float, "target prior"),
    "tdcf.pi_non": (0.0095, float, "non-target prior"),
    "tdcf.pi_spoof": (0.05, float, "spoof prior"),
    "tdcf.c_miss_asv": (1.0, float, "ASV miss cost"),
    "tdcf.c_fa_asv": (10.0, float, "ASV false-alarm cost"),
    "tdcf.c_miss_cm": (1.0, float, "CM miss cost"),
    "tdcf.c_fa_cm": (10.0, float, "CM false-alarm cost"),
    "tdcf.p_fa_asv": (0.01, float, "ASV false-alarm rate at its threshold"),
    "tdcf.p_miss_asv": (0.01, float, "ASV miss rate at its threshold"),
    "tdcf.p_miss_spoof_asv": (0.5, float, "ASV spoof miss rate at its threshold"),
    "fusion.c": (1.0, float, "SVM regularization C"),
    "fusion.tol": (1e-6, float, "SMO stopping tolerance"),
    "run.seed": (0, int, "global seed"),
    "run.workers": (1, int, "parallel workers for extract/score"),
    "paths.train_protocol": ("", str, "training protocol"),
    "paths.train_features": ("", str, "training feature cache"),
    "paths.dev_protocol": ("", str, "development protocol"),
    "paths.dev_features": ("", str, "development feature cache"),
    "paths.checkpoint": ("model.ckpt", str, "checkpoint path"),
    "paths.train_log": ("train_log.csv", str, "per-epoch training log"),
}


def env_name(key):
    return ENV_PREFIX + key.replace(".", "_").upper()


@dataclass
class PipelineConfig:
    values: dict = field(default_factory=lambda: {k: v[0] for k, v in KEYS.items()})

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key, raw):
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        conv = KEYS[key][1]
        try:
            self.values[key] = conv(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc

    def update_text(self, text, source="<config>"):
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
            key, value = (part.strip() for part in body.split("=", 1))
            try:
                self.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from exc

    def update_env(self, environ=None):
        environ = os.environ if environ is None else environ
        known = {env_name(k): k for k in KEYS}
        for name, value in environ.items():
            if not name.startswith(ENV_PREFIX):
                continue
            if name not in known:
                raise ConfigError(f"unknown environment override {name}")
            self.set(known[name], value)

    def to_text(self):
        out = []
        for key in KEYS:
            v = self.values[key]
            if key == "encoder.layers" and not isinstance(v, str):
                v = format_layers(v)
            elif key == "encoder.final_grid" and not isinstance(v, str):
                v = f"{v[0]}x{v[1]}"
            out.append(f"{key} = {v}")
        return "\n".join(out) + "\n"

    def validate(self):
        self.feature_config()
        self.encoder_config()
        self.train_config()
        self.tdcf_costs().coefficients()
        if self["run.workers"] < 1:
            raise ConfigError("run.workers must be >= 1")

    # typed views ---------------------------------------------------------

    def feature_config(self):
        return FeatureConfig(self["features.n_bands"], self["features.win_ms"], self["features.hop_ms"],
                             self["features.n_fft"], self["features.window"], self["features.log_floor"])

    def encoder_config(self):
        layers = self["encoder.layers"]
        grid = self["encoder.final_grid"]
        return EncoderConfig(
            layers=parse_layers(layers) if isinstance(layers, str) else tuple(layers),
            final_grid=_grid(grid) if isinstance(grid, str) else tuple(grid),
            blocks_per_stage=self["encoder.blocks_per_stage"],
        )

    def train_config(self):
        try:
            return TrainConfig(
                lr=self["train.lr"], weight_decay=self["train.weight_decay"], batch_size=self["train.batch_size"],
                epochs=self["train.epochs"], seed=self["run.seed"], system=self["train.system"],
                decoupled_weight_decay=self["train.decoupled_weight_decay"], max_steps=self["train.max_steps"],
                mask_max_width=self["features.mask_max_width"], mask_fill=self["features.mask_fill"],
                eval_batch_size=self["train.eval_batch_size"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def tdcf_costs(self):
        return TdcfCosts(*(self[f"tdcf.{k}"] for k in (
            "pi_tar", "pi_non", "pi_spoof", "c_miss_asv", "c_fa_asv", "c_miss_cm", "c_fa_cm",
            "p_fa_asv", "p_miss_asv", "p_miss_spoof_asv")))

    @property
    def dtype(self):
        return np.dtype(self["train.dtype"])


def load_config(path=None, environ=None):
    cfg = PipelineConfig()
    if path:
        with open(path, encoding="utf-8") as fh:
            cfg.update_text(fh.read(), str(path))
    cfg.update_env(environ)
    return cfg


def describe_keys():
    width = max(len(k) for k in KEYS)
    lines = []
    for key, (default, _, help_) in KEYS.items():
        lines.append(f"  {key:<{width}} = {default!s:<12} {help_}")
    return "\n".join(lines)
