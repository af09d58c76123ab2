"""Experiment configuration: flat "key = value" files plus flag overrides.

The file format is intentionally plain: one assignment per line, full-line
comments starting with '#', blank lines ignored. Flags always override file
values. parse -> serialize -> parse is the identity on valid configs.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .engine import HyperParams
from .numcore import (
    LINEAR,
    LOGISTIC,
    MLP,
    ConfigError,
    Dataset,
    ModelSpec,
    generate_synthetic,
    load_csv,
    load_idx_dataset,
)

# Offset mixed into the dataset seed stream so the held-out rows are a fixed
# extension of the training draw rather than a fresh distribution.
TEST_FRACTION = 4


@dataclass
class ExperimentConfig:
    algo: str = "ssgd"
    workers: int = 1
    k: int = 5
    alpha: float = 0.5
    eta_global: float = 0.1
    eta_local: Optional[float] = None
    warmup_n: int = 5
    batch_size: int = 32
    epochs: int = 1
    iters: Optional[int] = None
    seed: int = 0
    model: str = "logistic-regression:8,2"
    dataset: str = "synthetic:n=2048,noise=0.3"
    transport: str = "inprocess"
    out: str = "runs/out"

    def hyperparams(self) -> HyperParams:
        return HyperParams(
            algo=self.algo,
            workers=self.workers,
            eta_global=self.eta_global,
            eta_local=self.eta_local,
            k=self.k,
            alpha=self.alpha,
            warmup_n=self.warmup_n,
            batch_size=self.batch_size,
            epochs=self.epochs,
            iters=self.iters,
            seed=self.seed,
        ).validate()

    def model_spec(self) -> ModelSpec:
        return parse_model_spec(self.model)

    def validate(self) -> "ExperimentConfig":
        self.hyperparams()
        self.model_spec()
        _parse_dataset_spec(self.dataset)
        if self.transport not in ("inprocess", "socket"):
            raise ConfigError("transport must be inprocess or socket")
        return self


_OPTIONAL_FLOAT = ("eta_local",)
_OPTIONAL_INT = ("iters",)


def _parse_value(name: str, text: str):
    kinds = {f.name: f.type for f in fields(ExperimentConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown config key {name!r}")
    text = text.strip()
    if name in _OPTIONAL_FLOAT or name in _OPTIONAL_INT:
        if text.lower() == "none":
            return None
        caster = float if name in _OPTIONAL_FLOAT else int
    elif name in ("workers", "k", "warmup_n", "batch_size", "epochs", "seed"):
        caster = int
    elif name in ("alpha", "eta_global"):
        caster = float
    else:
        return text
    try:
        return caster(text)
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {text!r}") from None


def read_config_file(path) -> dict:
    """Raw key/value pairs from a flat config file."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            name, _, text = line.partition("=")
            name = name.strip()
            values[name] = _parse_value(name, text)
    return values


def parse_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Build and validate a config from an optional file plus overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        for name, value in read_config_file(path).items():
            setattr(cfg, name, value)
    for name, value in (overrides or {}).items():
        if value is None:
            continue
        if not hasattr(cfg, name):
            raise ConfigError(f"unknown config key {name!r}")
        setattr(cfg, name, value)
    return cfg.validate()


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; parsing it reproduces the config exactly."""
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        text = "none" if value is None else repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def parse_model_spec(text: str) -> ModelSpec:
    """Parse 'kind:d_in[,hidden],n_out' model descriptions."""
    kind, _, dims_text = text.partition(":")
    kind = kind.strip()
    try:
        dims = [int(x) for x in dims_text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"model: cannot parse dims in {text!r}") from None
    if kind == LINEAR:
        if len(dims) == 1:
            dims.append(1)
        if len(dims) != 2:
            raise ConfigError(f"model: {LINEAR} takes d_in[,1], got {text!r}")
        return ModelSpec(LINEAR, dims[0], dims[1])
    if kind == LOGISTIC:
        if len(dims) != 2:
            raise ConfigError(f"model: {LOGISTIC} takes d_in,n_classes, got {text!r}")
        return ModelSpec(LOGISTIC, dims[0], dims[1])
    if kind == MLP:
        if len(dims) != 3:
            raise ConfigError(f"model: {MLP} takes d_in,hidden,n_classes, got {text!r}")
        return ModelSpec(MLP, dims[0], dims[2], hidden=dims[1])
    raise ConfigError(f"model: unknown kind {kind!r}")


def _parse_dataset_spec(text: str) -> tuple[str, dict]:
    source, _, rest = text.partition(":")
    source = source.strip()
    if source == "synthetic":
        params = {}
        for piece in rest.split(","):
            piece = piece.strip()
            if not piece:
                continue
            if "=" not in piece:
                raise ConfigError(f"dataset: expected key=value in {text!r}")
            key, _, val = piece.partition("=")
            key = key.strip()
            if key not in ("n", "noise", "seed"):
                raise ConfigError(f"dataset: unknown synthetic parameter {key!r}")
            params[key] = int(val) if key in ("n", "seed") else float(val)
        if "n" not in params:
            raise ConfigError("dataset: synthetic needs n=<examples>")
        return source, params
    if source == "csv":
        if not rest:
            raise ConfigError("dataset: csv needs a path")
        return source, {"path": rest}
    if source == "idx":
        parts = [p for p in rest.split(",") if p]
        if len(parts) != 2:
            raise ConfigError("dataset: idx needs images,labels paths")
        return source, {"images": parts[0], "labels": parts[1]}
    raise ConfigError(f"dataset: unknown source {source!r}")


def synthetic_split(
    kind: str, n_train: int, n_test: int, d_in: int, noise: float, seed
) -> tuple[Dataset, tuple[np.ndarray, np.ndarray] | None]:
    """One synthetic draw split into train rows and held-out rows.

    Drawing train and test together keeps them on the same task (same hidden
    weights or cluster direction), which separate seeds would not.
    """
    full = generate_synthetic(kind, n_train + n_test, d_in, noise, seed)
    train = Dataset(full.features[:n_train].copy(), full.targets[:n_train].copy())
    if n_test == 0:
        return train, None
    test = (full.features[n_train:].copy(), full.targets[n_train:].copy())
    return train, test


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, tuple | None]:
    """Training dataset plus an eval split for classifiers (None otherwise)."""
    model = cfg.model_spec()
    source, params = _parse_dataset_spec(cfg.dataset)
    if source == "synthetic":
        kind = LINEAR if model.kind == LINEAR else LOGISTIC
        n = params["n"]
        noise = params.get("noise", 0.3)
        seed = params.get("seed", cfg.seed)
        n_test = max(200, n // TEST_FRACTION) if model.is_classifier else 0
        return synthetic_split(kind, n, n_test, model.d_in, noise, seed)
    if source == "csv":
        return load_csv(params["path"]), None
    dataset = load_idx_dataset(params["images"], params["labels"])
    return dataset, None
