"""Plain-text ``key=value`` run configuration.

Keys are dotted (``mta.enabled``); value types come from :data:`DEFAULTS`.
Unknown keys are rejected so that a typo never silently falls back to a default.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

from .errors import InputError

DEFAULTS: dict[str, Any] = {
    # model geometry
    "model.dim": 256,
    "model.ffn_dim": 256,
    "model.heads": 8,
    "model.num_queries": 5,
    "model.frames": 5,
    "model.image_size": 64,
    "model.modality": "text",
    # toy backbone
    "backbone.stem_stride": 4,
    "backbone.stem_channels": 16,
    "backbone.channels": [32, 64, 128],
    "backbone.early_fusion": True,
    "backbone.fusion_dim": 64,
    # reference encoders
    "text.vocab": 64,
    "text.embed_dim": 768,
    "text.max_len": 12,
    "text.heads": 8,
    "audio.samples": 1280,
    "audio.window": 256,
    "audio.hop": 128,
    "audio.conv_channels": 8,
    "audio.feat_dim": 128,
    "audio.heads": 4,
    "audio.frozen": False,
    # temporal aggregation before the transformer
    "mta.enabled": True,
    "mta.num_blocks": 1,
    # per-frame encoder-decoder
    "transformer.enc_layers": 4,
    "transformer.dec_layers": 4,
    "transformer.heads": 8,
    # temporal interaction after the transformer
    "mti.enabled": True,
    "mti.enc_blocks": 3,
    "mti.dec_blocks": 3,
    "mti.window": 2,
    "mti.cross_query": True,
    "mti.temporal_keys": True,
    # loss weights
    "loss.cls": 2.0,
    "loss.l1": 5.0,
    "loss.giou": 2.0,
    "loss.dice": 5.0,
    "loss.focal": 2.0,
    "loss.focal_alpha": 0.25,
    "loss.focal_gamma": 2.0,
    # optimizer
    "optim.lr": 1e-4,
    "optim.lr_backbone": 6e-6,
    "optim.lr_scale": 3.0,
    "optim.weight_decay": 5e-4,
    "optim.beta1": 0.9,
    "optim.beta2": 0.999,
    "optim.clip_norm": 0.1,
    # schedule
    "train.epochs": 12,
    "train.lr_drops": [8, 10],
    "train.batch_size": 2,
    "train.accumulate": 1,
    "train.max_steps": 0,
    "train.log_every": 1,
    "train.seed": 0,
    "train.precision": 32,
    # data
    "data.root": "data",
    "data.train_split": "train",
    "data.val_split": "val",
    "data.n_train": 64,
    "data.n_val": 16,
    "data.seed": 0,
    "data.frames": 5,
    "data.image_size": 64,
    "data.snr_db": 10.0,
    "data.pseudo_fraction": 0.25,
    # evaluation
    "eval.boundary_ratio": 0.008,
}


def _parse(key: str, text: str) -> Any:
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            return [int(tok) for tok in text.replace(",", " ").split()]
        return text
    except ValueError as exc:
        raise InputError(f"bad value for {key}: {text!r}") from exc


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


class Config(dict):
    """A dict of dotted keys pre-populated with :data:`DEFAULTS`."""

    def __init__(self, overrides: Mapping[str, Any] | None = None, **kw):
        super().__init__({k: list(v) if isinstance(v, list) else v for k, v in DEFAULTS.items()})
        for src in (overrides or {}), kw:
            for key, val in src.items():
                self[key.replace("__", ".")] = val

    def __setitem__(self, key, value):
        if key not in DEFAULTS:
            raise InputError(f"unknown config key {key!r}")
        if isinstance(value, str) and not isinstance(DEFAULTS[key], str):
            value = _parse(key, value)
        super().__setitem__(key, value)

    def update(self, other=(), **kw):
        for key, val in dict(other, **kw).items():
            self[key] = val

    def replace(self, **kw) -> "Config":
        """Copy with overrides; use ``__`` for dots (``mta__enabled=False``)."""
        return Config(self, **kw)

    def to_text(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in self.items())

    @classmethod
    def from_text(cls, text: str) -> "Config":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"config line {lineno}: expected key=value, got {raw!r}")
            key, val = line.split("=", 1)
            key = key.strip()
            if key not in DEFAULTS:
                raise InputError(f"config line {lineno}: unknown key {key!r}")
            cfg[key] = _parse(key, val)
        return cfg

    @classmethod
    def load(cls, path) -> "Config":
        try:
            return cls.from_text(Path(path).read_text())
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())
