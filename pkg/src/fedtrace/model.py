"""Minimal neural-network substrate.

A configurable multilayer perceptron with ReLU hidden layers and a linear
output layer: Kaiming-normal weight init, minibatch SGD on softmax
cross-entropy, forward inference with per-neuron activation capture, and
Kaiming-style random input generation. Weights and activations are stored
as float32; accumulations may run in float64 inside the kernels.

Snapshots serialize to a plain-text manifest plus a little-endian float32
blob (layer-major, weights then bias per layer); round-trips are bit-exact.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from hashlib import sha256
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import backend
from .kvio import fmt_float, fmt_ints, parse_ints, read_kv, write_kv

DEFAULT_ACTIVATION_THRESHOLD = 0.003

NeuronId = tuple[int, int]  # (hidden layer index, neuron index)

_SNAPSHOT_DTYPE = np.dtype("<f4")

# Count of single-input inference passes, for cost accounting in tests and
# experiments (incremented by the number of rows pushed through a model).
_forward_passes = 0


def forward_pass_count() -> int:
    return _forward_passes


def reset_forward_pass_count() -> None:
    global _forward_passes
    _forward_passes = 0


@dataclass(frozen=True)
class ModelArch:
    """Layer sizes of an MLP: (input dim, hidden dims..., output classes)."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("arch needs at least input and output layers")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive: {sizes}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return self.layer_sizes[1:-1]

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def require_hidden(self) -> None:
        if not self.hidden_sizes:
            raise ValueError("activation profiling needs at least one hidden layer")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be positive and finite")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class ActivationProfile:
    """Hidden neurons whose post-ReLU value exceeded the threshold."""

    active: frozenset[NeuronId]
    threshold_used: float


class Prediction(NamedTuple):
    logits: np.ndarray
    profile: ActivationProfile
    label: int


@dataclass
class ModelSnapshot:
    """Flattened MLP parameters. Layer l maps layer_sizes[l] -> layer_sizes[l+1];
    weights[l] has shape (out, in), biases[l] has shape (out,)."""

    arch: ModelArch
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    _digest: str | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        sizes = self.arch.layer_sizes
        if len(self.weights) != self.arch.num_layers or len(self.biases) != self.arch.num_layers:
            raise ValueError("wrong number of layers")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (sizes[l + 1], sizes[l])
            if w.shape != expect or w.dtype != np.float32:
                raise ValueError(f"layer {l} weights must be float32 {expect}, got {w.shape} {w.dtype}")
            if b.shape != (sizes[l + 1],) or b.dtype != np.float32:
                raise ValueError(f"layer {l} bias must be float32 ({sizes[l + 1]},)")

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays, layer-major, weights then bias per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "ModelSnapshot":
        return ModelSnapshot(
            self.arch,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def digest(self) -> str:
        """Content hash of all parameters; snapshots are treated as immutable
        once shared, so the value is cached."""
        if self._digest is None:
            h = sha256()
            for arr in self.arrays():
                h.update(np.ascontiguousarray(arr, dtype=_SNAPSHOT_DTYPE).tobytes())
            self._digest = h.hexdigest()
        return self._digest

    def same_bits(self, other: "ModelSnapshot") -> bool:
        if self.arch != other.arch:
            return False
        return all(
            a.tobytes() == b.tobytes() for a, b in zip(self.arrays(), other.arrays())
        )


def init_model(arch: ModelArch, seed: int) -> ModelSnapshot:
    """Kaiming-normal init: per-layer std sqrt(2 / fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    sizes = arch.layer_sizes
    for l in range(arch.num_layers):
        fan_in = sizes[l]
        std = np.float32(math.sqrt(2.0 / fan_in))
        w = rng.standard_normal((sizes[l + 1], fan_in), dtype=np.float32) * std
        weights.append(np.ascontiguousarray(w))
        biases.append(np.zeros(sizes[l + 1], dtype=np.float32))
    return ModelSnapshot(arch, weights, biases)


def kaiming_random_input(dims: Sequence[int], seed: int) -> np.ndarray:
    """One flat random input with elements ~ N(0, 2 / prod(dims))."""
    size = _checked_size(dims)
    rng = np.random.default_rng(seed)
    std = np.float32(math.sqrt(2.0 / size))
    return rng.standard_normal(size, dtype=np.float32) * std


def kaiming_random_batch(dims: Sequence[int], count: int, seed: int) -> np.ndarray:
    """(count, prod(dims)) batch from the same distribution as
    kaiming_random_input; a seeded pool draws in one shot."""
    size = _checked_size(dims)
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    std = np.float32(math.sqrt(2.0 / size))
    return rng.standard_normal((count, size), dtype=np.float32) * std


def _checked_size(dims: Sequence[int]) -> int:
    dims = tuple(int(d) for d in dims)
    if not dims or any(d <= 0 for d in dims):
        raise ValueError(f"input shape dims must be positive: {dims}")
    return int(np.prod(dims))


def _as_batch(model: ModelSnapshot, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.arch.input_dim:
        raise ValueError(
            f"input dim {x.shape[-1] if x.ndim else 0} does not match arch input {model.arch.input_dim}"
        )
    return np.ascontiguousarray(x)


def forward_batch(model: ModelSnapshot, X: np.ndarray, capture_hidden: bool = False):
    """Logits for a batch; optionally also the post-ReLU hidden activations."""
    global _forward_passes
    Xb = _as_batch(model, X)
    _forward_passes += Xb.shape[0]
    logits, hiddens = backend.forward_batch(Xb, model.weights, model.biases, capture_hidden)
    return (logits, hiddens) if capture_hidden else logits


def predict_labels(model: ModelSnapshot, X: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    logits = forward_batch(model, X)
    return np.argmax(logits, axis=1).astype(np.int64)


def hidden_activations(model: ModelSnapshot, x: np.ndarray) -> list[np.ndarray]:
    """Post-ReLU hidden activation vectors for a single input."""
    model.arch.require_hidden()
    _, hiddens = forward_batch(model, x, capture_hidden=True)
    return [h[0] for h in hiddens]


def profile_from_hiddens(hiddens: Sequence[np.ndarray], threshold: float) -> frozenset[NeuronId]:
    active: set[NeuronId] = set()
    for layer, h in enumerate(hiddens):
        for idx in np.nonzero(h > threshold)[0]:
            active.add((layer, int(idx)))
    return frozenset(active)


def forward(
    model: ModelSnapshot,
    x: np.ndarray,
    threshold: float = DEFAULT_ACTIVATION_THRESHOLD,
) -> Prediction:
    """Single-input inference with activation capture.

    The profile holds hidden neurons strictly above the threshold; the
    predicted label is the argmax logit, lowest class index on ties.
    """
    model.arch.require_hidden()
    logits, hiddens = forward_batch(model, x, capture_hidden=True)
    logits = logits[0]
    profile = ActivationProfile(
        active=profile_from_hiddens([h[0] for h in hiddens], threshold),
        threshold_used=float(threshold),
    )
    label = int(np.argmax(logits))
    return Prediction(logits=logits, profile=profile, label=label)


@dataclass(frozen=True)
class TrainResult:
    final_loss: float
    seconds: float
    epochs_run: int


def mean_loss(model: ModelSnapshot, X: np.ndarray, y: np.ndarray) -> float:
    """Mean softmax cross-entropy of the model on (X, y), no updates."""
    logits = forward_batch(model, X)
    logits64 = logits.astype(np.float64)
    m = logits64.max(axis=1, keepdims=True)
    ex = np.exp(logits64 - m)
    logprob = logits64[np.arange(len(y)), y] - m[:, 0] - np.log(ex.sum(axis=1))
    return float(-logprob.mean())


def train_local(
    model: ModelSnapshot,
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
) -> tuple[ModelSnapshot, TrainResult]:
    """Minibatch SGD for cfg.epochs over (X, y); deterministic per cfg.seed.

    Returns a new snapshot (the input is untouched) and the mean training
    loss of the final epoch, measured batch-by-batch during that epoch.
    epochs=0 performs an evaluation-only pass and reports the current loss.
    """
    X = _as_batch(model, X)
    y = np.ascontiguousarray(np.asarray(y, dtype=np.int64))
    n = X.shape[0]
    if n == 0:
        raise ValueError("training data must be nonempty")
    if y.shape != (n,):
        raise ValueError("labels must align with inputs")
    if y.min() < 0 or y.max() >= model.arch.num_classes:
        raise ValueError("label out of range for arch")

    out = model.copy()
    start = time.perf_counter()
    if cfg.epochs == 0:
        loss = mean_loss(out, X, y)
        return out, TrainResult(final_loss=loss, seconds=time.perf_counter() - start, epochs_run=0)

    rng = np.random.default_rng(cfg.seed)
    final_loss = 0.0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            loss_sum += backend.train_step(
                out.weights,
                out.biases,
                np.ascontiguousarray(X[idx]),
                np.ascontiguousarray(y[idx]),
                cfg.learning_rate,
                cfg.weight_decay,
            )
        final_loss = loss_sum / n
    return out, TrainResult(
        final_loss=final_loss, seconds=time.perf_counter() - start, epochs_run=cfg.epochs
    )


def snapshot_manifest_fields(arch: ModelArch) -> dict[str, str]:
    """Manifest entries describing the blob encoding for one architecture."""
    sizes = arch.layer_sizes
    count = sum(sizes[l + 1] * sizes[l] + sizes[l + 1] for l in range(arch.num_layers))
    return {
        "layer_sizes": fmt_ints(sizes),
        "layout": "layer-major; per layer: weights row-major, then bias",
        "dtype": "<f4",
        "element_count": str(count),
        "default_activation_threshold": fmt_float(DEFAULT_ACTIVATION_THRESHOLD),
    }


def write_snapshot_blob(model: ModelSnapshot, path: str | Path) -> Path:
    """Little-endian float32 blob, layer-major, weights then bias per layer."""
    path = Path(path)
    with open(path, "wb") as fh:
        for arr in model.arrays():
            np.ascontiguousarray(arr, dtype=_SNAPSHOT_DTYPE).tofile(fh)
    return path


def read_snapshot_blob(arch: ModelArch, path: str | Path) -> ModelSnapshot:
    flat = np.fromfile(Path(path), dtype=_SNAPSHOT_DTYPE)
    weights, biases = [], []
    offset = 0
    sizes = arch.layer_sizes
    for l in range(arch.num_layers):
        out_dim, in_dim = sizes[l + 1], sizes[l]
        w = flat[offset : offset + out_dim * in_dim].reshape(out_dim, in_dim)
        offset += out_dim * in_dim
        b = flat[offset : offset + out_dim]
        offset += out_dim
        weights.append(np.ascontiguousarray(w, dtype=np.float32))
        biases.append(np.ascontiguousarray(b, dtype=np.float32))
    if offset != flat.size:
        raise ValueError(f"blob {path} holds {flat.size} elements, arch needs {offset}")
    return ModelSnapshot(arch, weights, biases)


def save_snapshot(model: ModelSnapshot, base: str | Path) -> tuple[Path, Path]:
    """Write `<base>.ini` (manifest) and `<base>.bin` (blob). Bit-exact
    round trip; the standalone on-disk form of one model."""
    base = Path(base)
    manifest = base.with_name(base.name + ".ini")
    fields = {"format": "fedtrace-snapshot-v1"}
    fields.update(snapshot_manifest_fields(model.arch))
    write_kv(manifest, {"snapshot": fields})
    blob = write_snapshot_blob(model, base.with_name(base.name + ".bin"))
    return manifest, blob


def load_snapshot(base: str | Path) -> ModelSnapshot:
    base = Path(base)
    manifest = read_kv(base.with_name(base.name + ".ini"))["snapshot"]
    arch = ModelArch(parse_ints(manifest["layer_sizes"]))
    blob = base.with_name(base.name + ".bin")
    expected = int(manifest["element_count"])
    flat_size = blob.stat().st_size // _SNAPSHOT_DTYPE.itemsize
    if flat_size != expected:
        raise ValueError(f"blob holds {flat_size} elements, manifest says {expected}")
    return read_snapshot_blob(arch, blob)
