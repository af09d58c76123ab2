"""Numeric foundations: synthetic datasets, toy differentiable models, gradients.

Everything in this module is pure and seed-deterministic: the same arguments
produce bit-identical arrays. Parameters live in a flat float64 vector split
into contiguous per-tensor keys (weight matrix, bias vector, ...) so the
training machinery can push and pull one tensor at a time.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LINEAR = "linear-regression"
LOGISTIC = "logistic-regression"
MLP = "mlp-1hidden"
MODEL_KINDS = (LINEAR, LOGISTIC, MLP)


class ConfigError(ValueError):
    """Invalid model, dataset, or hyperparameter configuration."""


class LayoutError(ValueError):
    """Mismatched key layouts or a malformed key table."""


class NumericError(ArithmeticError):
    """Non-finite value encountered; names the offending key when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class KeySpan:
    key: int
    name: str
    start: int
    length: int


class Layout:
    """Contiguous, non-overlapping partition of a flat vector into keys.

    Key ids are dense 0..K-1 in declaration order; spans cover the whole
    vector with no gaps.
    """

    def __init__(self, sizes: Sequence[tuple[str, int]]):
        spans = []
        offset = 0
        for key, (name, length) in enumerate(sizes):
            if length < 1:
                raise LayoutError(f"key {name!r} has non-positive length {length}")
            spans.append(KeySpan(key, name, offset, length))
            offset += length
        if not spans:
            raise LayoutError("layout needs at least one key")
        self.spans: tuple[KeySpan, ...] = tuple(spans)
        self.total: int = offset

    def slice(self, key: int) -> slice:
        span = self.spans[key]
        return slice(span.start, span.start + span.length)

    @property
    def keys(self) -> range:
        return range(len(self.spans))

    def __len__(self) -> int:
        return len(self.spans)

    def __eq__(self, other) -> bool:
        return isinstance(other, Layout) and self.spans == other.spans

    def __repr__(self) -> str:
        inner = ", ".join(f"{s.name}[{s.length}]" for s in self.spans)
        return f"Layout({inner})"


@dataclass
class KeyedVector:
    """Flat float64 vector plus the key layout that partitions it."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.shape[0] != self.layout.total:
            raise LayoutError(
                f"vector length {self.values.shape} does not match layout total {self.layout.total}"
            )

    def copy(self) -> "KeyedVector":
        return KeyedVector(self.values.copy(), self.layout)

    def key(self, key: int) -> np.ndarray:
        return self.values[self.layout.slice(key)]

    def require_finite(self, what: str = "vector") -> None:
        if not np.isfinite(self.values).all():
            for span in self.layout.spans:
                if not np.isfinite(self.values[self.layout.slice(span.key)]).all():
                    raise NumericError(f"non-finite {what} in key {span.name!r}", key=span.name)

    def same_layout(self, other: "KeyedVector") -> bool:
        return self.layout == other.layout


# Weights and gradients share the representation; the aliases keep signatures readable.
WeightVector = KeyedVector
GradientVector = KeyedVector


def zeros(layout: Layout) -> KeyedVector:
    return KeyedVector(np.zeros(layout.total), layout)


@dataclass
class Dataset:
    """Row-major feature matrix, targets, and per-worker shard ranges."""

    features: np.ndarray
    targets: np.ndarray
    shards: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ConfigError("features must be a 2-D matrix")
        if self.targets.ndim != 1 or self.targets.shape[0] != self.features.shape[0]:
            raise ConfigError("targets length must equal feature row count")
        if not self.shards:
            self.shards = [(0, self.n)]
        self._check_shards()

    def _check_shards(self):
        covered = 0
        for start, stop in self.shards:
            if start != covered or stop < start:
                raise ConfigError(f"shards must partition 0..{self.n} contiguously")
            covered = stop
        if covered != self.n:
            raise ConfigError("shards must cover every example exactly once")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def with_shards(self, n_workers: int) -> "Dataset":
        """Re-partition into n_workers near-equal contiguous shards."""
        if n_workers < 1:
            raise ConfigError("n_workers must be >= 1")
        if n_workers > self.n:
            raise ConfigError(f"cannot shard {self.n} examples across {n_workers} workers")
        base, extra = divmod(self.n, n_workers)
        shards = []
        start = 0
        for w in range(n_workers):
            stop = start + base + (1 if w < extra else 0)
            shards.append((start, stop))
            start = stop
        return Dataset(self.features, self.targets, shards)


@dataclass(frozen=True)
class ModelSpec:
    """Toy differentiable model: linear/logistic regression or a 1-hidden-layer MLP.

    The MLP uses tanh hidden units. Linear regression pairs with squared
    error, the classifiers with softmax cross-entropy.
    """

    kind: str
    d_in: int
    n_out: int
    hidden: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.d_in < 1 or self.n_out < 1:
            raise ConfigError("model dims must be >= 1")
        if self.kind == LINEAR and self.n_out != 1:
            raise ConfigError("linear-regression targets are scalar; n_out must be 1")
        if self.kind == LOGISTIC and self.n_out < 2:
            raise ConfigError("logistic-regression needs n_out >= 2 classes")
        if self.kind == MLP and (self.hidden < 1 or self.n_out < 2):
            raise ConfigError("mlp-1hidden needs hidden >= 1 and n_out >= 2")
        if self.kind != MLP and self.hidden:
            raise ConfigError(f"hidden size is only valid for {MLP}")

    def layout(self) -> Layout:
        if self.kind == LINEAR:
            return Layout([("w", self.d_in), ("b", 1)])
        if self.kind == LOGISTIC:
            return Layout([("w", self.d_in * self.n_out), ("b", self.n_out)])
        return Layout(
            [
                ("w1", self.d_in * self.hidden),
                ("b1", self.hidden),
                ("w2", self.hidden * self.n_out),
                ("b2", self.n_out),
            ]
        )

    @property
    def is_classifier(self) -> bool:
        return self.kind in (LOGISTIC, MLP)

    def init_weights(self, seed) -> KeyedVector:
        """Deterministic initial weights: zeros for the convex models, scaled
        Gaussian matrices (zero biases) for the MLP."""
        layout = self.layout()
        vec = zeros(layout)
        if self.kind == MLP:
            rng = np.random.default_rng(seed)
            w1 = rng.standard_normal(self.d_in * self.hidden) / np.sqrt(self.d_in)
            w2 = rng.standard_normal(self.hidden * self.n_out) / np.sqrt(self.hidden)
            vec.key(0)[:] = w1
            vec.key(2)[:] = w2
        return vec


def _check_batch(model: ModelSpec, weights: KeyedVector, X: np.ndarray, y: np.ndarray):
    if X.ndim != 2 or X.shape[0] == 0:
        raise ConfigError("batch must be a non-empty 2-D matrix")
    if X.shape[1] != model.d_in:
        raise ConfigError(f"batch has {X.shape[1]} features, model expects {model.d_in}")
    if weights.layout != model.layout():
        raise LayoutError("weights do not match the model layout")
    if y.shape[0] != X.shape[0]:
        raise ConfigError("batch targets must match batch rows")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def batch_loss(model: ModelSpec, weights: KeyedVector, X: np.ndarray, y: np.ndarray) -> float:
    """Mean loss over the batch (forward pass only)."""
    _check_batch(model, weights, X, y)
    n = X.shape[0]
    if model.kind == LINEAR:
        pred = X @ weights.key(0) + weights.key(1)[0]
        return float(0.5 * np.mean((pred - y) ** 2))
    if model.kind == LOGISTIC:
        W = weights.key(0).reshape(model.d_in, model.n_out)
        logits = X @ W + weights.key(1)
    else:
        W1 = weights.key(0).reshape(model.d_in, model.hidden)
        W2 = weights.key(2).reshape(model.hidden, model.n_out)
        h = np.tanh(X @ W1 + weights.key(1))
        logits = h @ W2 + weights.key(3)
    logp = _log_softmax(logits)
    labels = y.astype(np.int64)
    return float(-np.mean(logp[np.arange(n), labels]))


def loss_and_grad(
    model: ModelSpec, weights: KeyedVector, X: np.ndarray, y: np.ndarray
) -> tuple[float, KeyedVector]:
    """Mean batch loss and its analytic gradient, in the model's key layout."""
    _check_batch(model, weights, X, y)
    n = X.shape[0]
    layout = weights.layout
    grad = zeros(layout)

    if model.kind == LINEAR:
        pred = X @ weights.key(0) + weights.key(1)[0]
        resid = pred - y
        loss = float(0.5 * np.mean(resid**2))
        grad.key(0)[:] = X.T @ resid / n
        grad.key(1)[:] = resid.mean()
    elif model.kind == LOGISTIC:
        W = weights.key(0).reshape(model.d_in, model.n_out)
        logits = X @ W + weights.key(1)
        logp = _log_softmax(logits)
        labels = y.astype(np.int64)
        loss = float(-np.mean(logp[np.arange(n), labels]))
        delta = np.exp(logp)
        delta[np.arange(n), labels] -= 1.0
        delta /= n
        grad.key(0)[:] = (X.T @ delta).ravel()
        grad.key(1)[:] = delta.sum(axis=0)
    else:
        W1 = weights.key(0).reshape(model.d_in, model.hidden)
        W2 = weights.key(2).reshape(model.hidden, model.n_out)
        h = np.tanh(X @ W1 + weights.key(1))
        logits = h @ W2 + weights.key(3)
        logp = _log_softmax(logits)
        labels = y.astype(np.int64)
        loss = float(-np.mean(logp[np.arange(n), labels]))
        delta = np.exp(logp)
        delta[np.arange(n), labels] -= 1.0
        delta /= n
        grad.key(2)[:] = (h.T @ delta).ravel()
        grad.key(3)[:] = delta.sum(axis=0)
        back = (delta @ W2.T) * (1.0 - h**2)
        grad.key(0)[:] = (X.T @ back).ravel()
        grad.key(1)[:] = back.sum(axis=0)

    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    grad.require_finite("gradient")
    return loss, grad


def finite_diff_grad(
    model: ModelSpec, weights: KeyedVector, X: np.ndarray, y: np.ndarray, h: float = 1e-5
) -> KeyedVector:
    """Central-difference gradient oracle: (L(w+h e_i) - L(w-h e_i)) / 2h."""
    if h <= 0:
        raise ConfigError("finite-difference step h must be > 0")
    _check_batch(model, weights, X, y)
    grad = zeros(weights.layout)
    probe = weights.copy()
    for i in range(weights.layout.total):
        orig = probe.values[i]
        probe.values[i] = orig + h
        up = batch_loss(model, probe, X, y)
        probe.values[i] = orig - h
        down = batch_loss(model, probe, X, y)
        probe.values[i] = orig
        grad.values[i] = (up - down) / (2.0 * h)
    return grad


def sgd_apply(weights: KeyedVector, grad: KeyedVector, lr: float) -> KeyedVector:
    """One descent step w' = w - lr * g; the inputs are left untouched."""
    if not weights.same_layout(grad):
        raise LayoutError("gradient layout does not match weights")
    if lr < 0:
        raise ConfigError("learning rate must be >= 0")
    return KeyedVector(weights.values - lr * grad.values, weights.layout)


def accuracy(model: ModelSpec, weights: KeyedVector, X: np.ndarray, y: np.ndarray) -> float:
    """Fraction of rows whose argmax class matches the label."""
    if not model.is_classifier:
        raise ConfigError("accuracy is only defined for classifiers")
    _check_batch(model, weights, X, y)
    if model.kind == LOGISTIC:
        W = weights.key(0).reshape(model.d_in, model.n_out)
        logits = X @ W + weights.key(1)
    else:
        W1 = weights.key(0).reshape(model.d_in, model.hidden)
        W2 = weights.key(2).reshape(model.hidden, model.n_out)
        h = np.tanh(X @ W1 + weights.key(1))
        logits = h @ W2 + weights.key(3)
    return float(np.mean(logits.argmax(axis=1) == y.astype(np.int64)))


def generate_synthetic(kind: str, n_examples: int, dims, noise: float, seed) -> Dataset:
    """Deterministic synthetic data.

    linear-regression: X ~ N(0,1), hidden ground truth w*, targets X @ w* plus
    Gaussian(0, noise) observation noise.

    logistic-regression: two Gaussian clusters a unit distance apart along a
    random direction, within-class standard deviation `noise` (so the centers
    sit 1/noise sigmas apart).
    """
    if n_examples < 1:
        raise ConfigError("n_examples must be >= 1")
    if noise < 0:
        raise ConfigError("noise must be >= 0")
    d = int(dims[0]) if isinstance(dims, (tuple, list)) else int(dims)
    if d < 1:
        raise ConfigError("dims must give at least one feature")
    rng = np.random.default_rng(seed)
    if kind == LINEAR:
        X = rng.standard_normal((n_examples, d))
        w_star = rng.standard_normal(d)
        y = X @ w_star + (noise * rng.standard_normal(n_examples) if noise > 0 else 0.0)
        return Dataset(X, np.asarray(y, dtype=np.float64))
    if kind == LOGISTIC:
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        labels = rng.integers(0, 2, size=n_examples)
        centers = np.where(labels[:, None] == 0, -0.5, 0.5) * direction[None, :]
        X = centers + noise * rng.standard_normal((n_examples, d))
        return Dataset(X, labels.astype(np.int64))
    raise ConfigError(f"unknown synthetic dataset kind {kind!r}")


def hidden_truth(kind: str, n_examples: int, dims, noise: float, seed) -> np.ndarray:
    """Ground-truth weights of the linear generator (for loss-gap measurements).

    Replays the generator's RNG stream, so it matches generate_synthetic
    bit for bit.
    """
    if kind != LINEAR:
        raise ConfigError("hidden_truth is only defined for linear-regression data")
    d = int(dims[0]) if isinstance(dims, (tuple, list)) else int(dims)
    rng = np.random.default_rng(seed)
    rng.standard_normal((n_examples, d))
    return rng.standard_normal(d)


class ShardBatcher:
    """Sequential mini-batches over one worker's shard, reshuffled each epoch.

    The RNG is derived from SeedSequence(seed).spawn(worker_count)[worker_id],
    so the batch sequence is a pure function of (seed, worker_id). Batches
    are consecutive slices of a fresh permutation; the tail that does not
    fill a batch is dropped.
    """

    def __init__(
        self,
        dataset: Dataset,
        shard: tuple[int, int],
        batch_size: int,
        rng: np.random.Generator,
    ):
        start, stop = shard
        if stop - start < batch_size:
            raise ConfigError(
                f"batch_size {batch_size} exceeds shard size {stop - start}"
            )
        if batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        self._features = dataset.features
        self._targets = dataset.targets
        self._indices = np.arange(start, stop)
        self._batch = batch_size
        self._rng = rng
        self._perm: np.ndarray | None = None
        self._cursor = 0
        self.epoch = 0

    @property
    def batches_per_epoch(self) -> int:
        return len(self._indices) // self._batch

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        if self._perm is None:
            self._perm = self._rng.permutation(self._indices)
            self._cursor = 0
        idx = self._perm[self._cursor : self._cursor + self._batch]
        self._cursor += self._batch
        if self._cursor >= self.batches_per_epoch * self._batch:
            self.epoch += 1
            self._perm = None
        return self._features[idx], self._targets[idx]


def worker_rngs(seed, n_workers: int) -> list[np.random.Generator]:
    """Independent per-worker generators derived from one training seed."""
    children = np.random.SeedSequence(seed).spawn(n_workers)
    return [np.random.default_rng(c) for c in children]


def init_rng(seed) -> np.random.Generator:
    """Generator for weight initialization, independent of the worker streams."""
    ss = np.random.SeedSequence(seed, spawn_key=(0x5EED,))
    return np.random.default_rng(ss)


def save_csv(dataset: Dataset, path) -> None:
    """Write features plus a final target column, with a header row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dataset.dim)] + ["target"])
        integral = np.issubdtype(dataset.targets.dtype, np.integer)
        for row, target in zip(dataset.features, dataset.targets):
            cells = [repr(v) for v in row]
            cells.append(str(int(target)) if integral else repr(float(target)))
            writer.writerow(cells)


def load_csv(path) -> Dataset:
    """Read a dataset written by save_csv (last column is the target)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) < 2:
            raise ConfigError(f"{path}: need a header row with features and a target column")
        rows = [line for line in reader if line]
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    raw = np.array(rows, dtype=np.float64)
    features, targets = raw[:, :-1], raw[:, -1]
    if np.all(targets == np.round(targets)) and targets.min() >= 0:
        targets = targets.astype(np.int64)
    return Dataset(features, targets)


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def read_idx_images(path) -> np.ndarray:
    """Big-endian IDX image file (magic 0x00000803) as a uint8 (n, rows, cols) array."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise ConfigError(f"{path}: truncated IDX image header")
        magic, n, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGES_MAGIC:
            raise ConfigError(f"{path}: bad IDX image magic 0x{magic:08X}")
        body = fh.read(n * rows * cols)
    if len(body) != n * rows * cols:
        raise ConfigError(f"{path}: truncated IDX image payload")
    return np.frombuffer(body, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    """Big-endian IDX label file (magic 0x00000801) as an int64 vector."""
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise ConfigError(f"{path}: truncated IDX label header")
        magic, n = struct.unpack(">II", head)
        if magic != IDX_LABELS_MAGIC:
            raise ConfigError(f"{path}: bad IDX label magic 0x{magic:08X}")
        body = fh.read(n)
    if len(body) != n:
        raise ConfigError(f"{path}: truncated IDX label payload")
    return np.frombuffer(body, dtype=np.uint8).astype(np.int64)


def load_idx_dataset(images_path, labels_path) -> Dataset:
    """Flatten an IDX image/label pair into a [0,1]-scaled Dataset."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConfigError("IDX image and label counts differ")
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(flat, labels)
