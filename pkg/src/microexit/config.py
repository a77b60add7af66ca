"""Pipeline configuration: one YAML file, every module default overridable.

Example::

    seed: 7
    profile: whar
    model: {leaky_alpha: 0.01}
    train: {epochs: 300, learning_rate: 0.01}
    split: {kind: stratified_kfold, k: 5, fold: 0}
    obp: {max_depth: 6, min_leaf: 5, class_weight: balanced}
    cost: {profile: whar}          # or cost: {table: {obp: {...}, fob: {...}, baseline: {...}}}
    cdln: {threshold: 0.9, thresholds: [0.5, 0.6, 0.7, 0.8, 0.9]}
    synth: {n_classes: 4, per_class: 200}
    preprocess: {channels: {Ax: 250, Stretch: 25}, column_map: {accel_x: Ax}}
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from pathlib import Path

import yaml

from . import engine
from .errors import ConfigError
from .model import ModelConfig
from .preprocess import PROFILES as DATASET_PROFILES
from .synth import SyntheticSpec
from .trainer import TrainConfig

DEFAULTS = {
    "seed": 0,
    "profile": "whar",
    "model": {},
    "train": {},
    "split": {"kind": "stratified_kfold", "k": 5, "fold": 0},
    "obp": {"max_depth": 6, "min_leaf": 5, "class_weight": "balanced"},
    "cost": {"profile": "whar"},
    "cdln": {"threshold": 0.9, "thresholds": list(engine.CDLN_THRESHOLDS)},
    "synth": {},
    "preprocess": {},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, seed=None, profile=None):
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            raw = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    if profile is not None:
        cfg["profile"] = profile
    if cfg["profile"] not in DATASET_PROFILES:
        raise ConfigError(f"unknown dataset profile {cfg['profile']!r}; "
                          f"choose from {sorted(DATASET_PROFILES)}")
    return cfg


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _build(cls, section, **forced):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**{**section, **forced})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def model_config(cfg, num_classes):
    return _build(ModelConfig, cfg["model"], num_classes=num_classes)


def train_config(cfg):
    return _build(TrainConfig, cfg["train"], seed=cfg["train"].get("seed", cfg["seed"]))


def synthetic_spec(cfg):
    section = dict(cfg["synth"])
    if "amplitude" in section:
        section["amplitude"] = tuple(section["amplitude"])
    return _build(SyntheticSpec, section, seed=section.get("seed", cfg["seed"]))


def dataset_profile(cfg):
    base = DATASET_PROFILES[cfg["profile"]]
    section = {k: v for k, v in cfg["preprocess"].items() if k not in ("channels", "column_map")}
    if "features" in section:
        section["features"] = tuple(tuple(f) for f in section["features"])
    if "channels" in cfg["preprocess"]:
        rates = {**base.rates, **{k: float(v) for k, v in cfg["preprocess"]["channels"].items()}}
        section["rates"] = rates
    try:
        return dataclasses.replace(base, **section)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def column_map(cfg):
    return dict(cfg["preprocess"].get("column_map", {}))


def cost_profile(cfg):
    section = cfg["cost"]
    if "table" in section:
        return engine.calibrate_profile(section["table"])
    name = section.get("profile", "whar")
    if name not in engine.PROFILES:
        raise ConfigError(f"unknown cost profile {name!r}; choose from {sorted(engine.PROFILES)}")
    return engine.PROFILES[name]
