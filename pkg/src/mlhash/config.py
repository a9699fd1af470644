"""Run configuration files (JSON) for the command-line tools.

A run config pins everything a command needs: model shape, training
hyper-parameters, the dataset (synthetic blob spec or a file path) and the
split protocol. Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .bottleneck import GradientEstimator
from .data import (
    ROLE_TRAIN,
    BlobSpec,
    Dataset,
    load_dataset,
    make_blobs,
    split_protocol,
)
from .errors import ConfigurationError
from .network import TrainConfig, Variant

_TOP_KEYS = {"code_length", "variant", "estimator", "train", "data", "out_dir"}
_TRAIN_KEYS = {
    "reg_weight",
    "learning_rate",
    "batch_size",
    "epochs",
    "seed",
    "mc_samples",
    "hidden_width",
    "patience",
}
_DATA_KEYS = {"blobs", "path", "split"}
_BLOB_KEYS = {"classes", "dim", "per_class", "center_scale", "noise_scale", "seed"}
_SPLIT_KEYS = {"queries_per_class", "train_per_class", "seed"}


@dataclass
class RunConfig:
    code_length: int = 16
    variant: Variant = Variant.FULL
    estimator: GradientEstimator = GradientEstimator.DISTRIBUTIONAL
    train: TrainConfig = field(default_factory=TrainConfig)
    blobs: BlobSpec | None = None
    data_path: str | None = None
    split: dict | None = None
    out_dir: str | None = None


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) in {where}: {', '.join(sorted(unknown))}"
        )


def parse_run_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("run config must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "config")
    cfg = RunConfig()
    if "code_length" in raw:
        cfg.code_length = int(raw["code_length"])
        if cfg.code_length < 1:
            raise ConfigurationError("code_length must be >= 1")
    try:
        cfg.variant = Variant(raw.get("variant", "full"))
        cfg.estimator = GradientEstimator(raw.get("estimator", "distributional"))
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    train_raw = raw.get("train", {})
    _check_keys(train_raw, _TRAIN_KEYS, "config.train")
    cfg.train = TrainConfig(**train_raw)
    data_raw = raw.get("data")
    if data_raw is None:
        raise ConfigurationError("config needs a data section")
    _check_keys(data_raw, _DATA_KEYS, "config.data")
    if ("blobs" in data_raw) == ("path" in data_raw):
        raise ConfigurationError("config.data needs exactly one of blobs|path")
    if "blobs" in data_raw:
        _check_keys(data_raw["blobs"], _BLOB_KEYS, "config.data.blobs")
        cfg.blobs = BlobSpec(**data_raw["blobs"])
    else:
        cfg.data_path = str(data_raw["path"])
    if data_raw.get("split") is not None:
        _check_keys(data_raw["split"], _SPLIT_KEYS, "config.data.split")
        missing = {"queries_per_class", "train_per_class"} - set(data_raw["split"])
        if missing:
            raise ConfigurationError(
                f"config.data.split needs {', '.join(sorted(missing))}"
            )
        cfg.split = dict(data_raw["split"])
    cfg.out_dir = raw.get("out_dir")
    return cfg


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
    return parse_run_config(raw)


def build_dataset(cfg: RunConfig) -> Dataset:
    """Materialize the configured dataset; apply the split protocol if given,
    otherwise every row is a train row."""
    ds = make_blobs(cfg.blobs) if cfg.blobs is not None else load_dataset(cfg.data_path)
    if cfg.split is not None:
        return split_protocol(
            ds,
            queries_per_class=int(cfg.split["queries_per_class"]),
            train_per_class=int(cfg.split["train_per_class"]),
            seed=int(cfg.split.get("seed", cfg.train.seed)),
        )
    return Dataset(
        features=ds.features,
        labels=ds.labels,
        split=np.full(ds.n, ROLE_TRAIN, dtype=np.int8),
    )


def with_overrides(cfg: RunConfig, **train_overrides) -> RunConfig:
    """Copy of the config with some training fields replaced."""
    new = replace(cfg)
    new.train = replace(cfg.train, **train_overrides)
    return new
