"""Flat ``key = value`` config files and the datasets they describe.

One setting per line, ``#`` starts a comment, tuples are comma separated::

    hidden = 128
    noise_dims = 150, 100, 50
    dataset = mnist
    mnist_images = data/mnist-1500-images-idx3-ubyte.gz
"""
from __future__ import annotations

import difflib
import typing
from dataclasses import fields, replace
from typing import Iterable

from .data import SequenceDataset, binarize, load_mnist_idx, split_dataset, synth_two_mode
from .training import TrainConfig


class ConfigError(ValueError):
    pass


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    if isinstance(kind, str):
        kind = typing.get_type_hints(TrainConfig)[key]
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        return tuple(int(v) for v in raw.replace(" ", "").split(",") if v != "")
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from exc


def _unknown(key: str) -> ConfigError:
    close = difflib.get_close_matches(key, list(_TYPES), n=1)
    hint = f"; did you mean {close[0]!r}?" if close else ""
    return ConfigError(f"unknown config key {key!r}{hint}")


def _parse_lines(lines: Iterable[str], source: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (s.strip() for s in text.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key")
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: {_unknown(key)}")
        out[key] = value
    return out


def parse_config(path=None, overrides: Iterable[str] | dict | None = None) -> TrainConfig:
    """Defaults, then the file at ``path``, then ``key=value`` overrides; validated."""
    raw: dict[str, str] = {}
    if path is not None:
        with open(path) as fh:
            raw.update(_parse_lines(fh, str(path)))
    if isinstance(overrides, dict):
        items = [f"{k}={v}" for k, v in overrides.items()]
    else:
        items = list(overrides or ())
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in _TYPES:
            raise _unknown(key)
        raw[key] = value
    cfg = replace(TrainConfig(), **{k: _coerce(k, v) for k, v in raw.items()})
    try:
        return cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def datasets_from_config(cfg: TrainConfig) -> tuple[SequenceDataset, SequenceDataset]:
    """Train and test splits named by ``cfg.dataset``."""
    if cfg.dataset == "two_mode":
        train = synth_two_mode(cfg.train_size, cfg.synth_T, cfg.seed, drift=cfg.synth_drift)
        test = synth_two_mode(cfg.test_size, cfg.synth_T, cfg.seed + 1, drift=cfg.synth_drift, split="test")
        return train, test
    if not cfg.mnist_images:
        raise ConfigError("dataset = mnist needs mnist_images")
    gray = load_mnist_idx(cfg.mnist_images, cfg.mnist_labels or None, layout=cfg.layout)
    binary = binarize(gray, cfg.binarize, seed=cfg.seed)
    return split_dataset(binary, cfg.train_size, cfg.test_size, seed=cfg.seed)
