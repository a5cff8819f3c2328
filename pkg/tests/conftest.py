"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the library's own kernels: scalar-loop
aggregation, float64 reference forward/loss, finite-difference gradients,
and a subset-materializing leave-one-out localizer. Tests check the fast
paths against these.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from fedtrace.model import ModelArch, ModelSnapshot

# -- snapshot builders --------------------------------------------------------


def random_snapshot(arch: tuple[int, ...], seed: int) -> ModelSnapshot:
    """Random f32 snapshot, not Kaiming-scaled; for aggregation/oracle tests."""
    rng = np.random.default_rng(seed)
    arch_obj = ModelArch(arch)
    sizes = arch_obj.layer_sizes
    weights = [
        rng.normal(0, 1, size=(sizes[l + 1], sizes[l])).astype(np.float32)
        for l in range(arch_obj.num_layers)
    ]
    biases = [
        rng.normal(0, 1, size=sizes[l + 1]).astype(np.float32)
        for l in range(arch_obj.num_layers)
    ]
    return ModelSnapshot(arch_obj, weights, biases)


def zero_snapshot(arch: tuple[int, ...]) -> ModelSnapshot:
    arch_obj = ModelArch(arch)
    sizes = arch_obj.layer_sizes
    return ModelSnapshot(
        arch_obj,
        [np.zeros((sizes[l + 1], sizes[l]), dtype=np.float32) for l in range(arch_obj.num_layers)],
        [np.zeros(sizes[l + 1], dtype=np.float32) for l in range(arch_obj.num_layers)],
    )


def hand_222_model() -> ModelSnapshot:
    """2-2-2 MLP with hand-set weights used across forward tests."""
    arch = ModelArch((2, 2, 2))
    w0 = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
    b0 = np.zeros(2, dtype=np.float32)
    w1 = np.array([[1.0, 1.0], [0.0, 0.0]], dtype=np.float32)
    b1 = np.zeros(2, dtype=np.float32)
    return ModelSnapshot(arch, [w0, w1], [b0, b1])


# -- oracles -------------------------------------------------------------------


def fedavg_scalar_oracle(snapshots, weights):
    """Pure-Python scalar loop: float64 accumulation in the given order,
    divide by the weight sum, round to float32."""
    arrays = [s.arrays() for s in snapshots]
    out = []
    total = 0.0
    for w in weights:
        total += float(w)
    for part in range(len(arrays[0])):
        flat_parts = [a[part].reshape(-1) for a in arrays]
        acc = [0.0] * flat_parts[0].size
        for snap_flat, w in zip(flat_parts, weights):
            wf = float(w)
            for j in range(snap_flat.size):
                acc[j] += wf * float(snap_flat[j])
        vals = np.array([np.float32(v / total) for v in acc], dtype=np.float32)
        out.append(vals.reshape(arrays[0][part].shape))
    weights_out = out[0::2]
    biases_out = out[1::2]
    return ModelSnapshot(snapshots[0].arch, weights_out, biases_out)


def forward_f64_oracle(model: ModelSnapshot, x: np.ndarray):
    """Float64 scalar-loop forward; returns (logits, hidden activations)."""
    a = [float(v) for v in x]
    hiddens = []
    last = model.arch.num_layers - 1
    for l in range(model.arch.num_layers):
        w = model.weights[l]
        b = model.biases[l]
        out = []
        for j in range(w.shape[0]):
            s = float(b[j])
            for k in range(w.shape[1]):
                s += float(w[j, k]) * a[k]
            out.append(s)
        if l < last:
            out = [max(v, 0.0) for v in out]
            hiddens.append(out)
        a = out
    return a, hiddens


def loss_f64_oracle(model: ModelSnapshot, X: np.ndarray, y: np.ndarray, weight_decay: float) -> float:
    """Float64 mean cross-entropy plus (wd/2) * sum of squared weights."""
    total = 0.0
    for i in range(X.shape[0]):
        logits, _ = forward_f64_oracle(model, X[i])
        m = max(logits)
        denom = sum(math.exp(v - m) for v in logits)
        total += math.log(denom) - (logits[int(y[i])] - m)
    loss = total / X.shape[0]
    if weight_decay:
        sq = sum(float(np.sum(w.astype(np.float64) ** 2)) for w in model.weights)
        loss += 0.5 * weight_decay * sq
    return loss


def fd_gradient_oracle(model: ModelSnapshot, X, y, weight_decay: float, h: float = 1e-3):
    """Central finite differences of loss_f64_oracle over every parameter."""
    grads_w, grads_b = [], []
    for l in range(model.arch.num_layers):
        gw = np.zeros_like(model.weights[l], dtype=np.float64)
        for idx in np.ndindex(model.weights[l].shape):
            orig = model.weights[l][idx]
            model.weights[l][idx] = np.float32(orig + h)
            up = loss_f64_oracle(model, X, y, weight_decay)
            model.weights[l][idx] = np.float32(orig - h)
            down = loss_f64_oracle(model, X, y, weight_decay)
            model.weights[l][idx] = orig
            gw[idx] = (up - down) / (float(np.float32(orig + h)) - float(np.float32(orig - h)))
        grads_w.append(gw)
        gb = np.zeros_like(model.biases[l], dtype=np.float64)
        for j in range(model.biases[l].size):
            orig = model.biases[l][j]
            model.biases[l][j] = np.float32(orig + h)
            up = loss_f64_oracle(model, X, y, weight_decay)
            model.biases[l][j] = np.float32(orig - h)
            down = loss_f64_oracle(model, X, y, weight_decay)
            model.biases[l][j] = orig
            gb[j] = (up - down) / (float(np.float32(orig + h)) - float(np.float32(orig - h)))
        grads_b.append(gb)
    return grads_w, grads_b


def localize_bruteforce_oracle(clients, x, threshold):
    """Materialize every leave-one-out subset and intersect frozensets."""
    from fedtrace.faultloc import activation_sets

    sets = activation_sets(clients, x, threshold)
    ids = sorted(sets)
    best_id, best_size = None, -1
    for excluded in ids:
        subset = [sets[c] for c in ids if c != excluded]
        common = frozenset.intersection(*subset)
        if len(common) > best_size:
            best_size = len(common)
            best_id = excluded
    tie = (
        sum(
            1
            for excluded in ids
            if len(frozenset.intersection(*[sets[c] for c in ids if c != excluded])) == best_size
        )
        > 1
    )
    return best_id, best_size, tie


# -- misc helpers -------------------------------------------------------------


def tree_bytes(root: str | Path) -> dict[str, bytes]:
    root = Path(root)
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def balanced_dataset(num_classes: int, dim: int, per_class: int, seed: int = 0):
    from fedtrace.data import LabeledDataset

    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    inputs = rng.normal(size=(labels.size, dim)).astype(np.float32)
    return LabeledDataset(inputs, labels, num_classes)


@pytest.fixture
def tmp_store(tmp_path):
    from fedtrace.telemetry import TelemetryStore

    return TelemetryStore(tmp_path / "store", create=True)
