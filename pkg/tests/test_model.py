"""Model substrate: init, forward with profiling, SGD training, snapshot IO."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedtrace.model import (
    DEFAULT_ACTIVATION_THRESHOLD,
    ModelArch,
    ModelSnapshot,
    TrainConfig,
    forward,
    forward_pass_count,
    init_model,
    kaiming_random_batch,
    kaiming_random_input,
    load_snapshot,
    mean_loss,
    reset_forward_pass_count,
    save_snapshot,
    train_local,
)

from conftest import forward_f64_oracle, hand_222_model, random_snapshot, zero_snapshot


# -- arch / config validation --------------------------------------------------


def test_arch_rejects_too_few_layers():
    with pytest.raises(ValueError):
        ModelArch((5,))


def test_arch_rejects_nonpositive_sizes():
    with pytest.raises(ValueError):
        ModelArch((4, 0, 2))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0, epochs=1, batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.1, epochs=-1, batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.1, epochs=1, batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.1, epochs=1, batch_size=1, weight_decay=-0.1)


# -- init ------------------------------------------------------------------------


def test_init_deterministic():
    arch = ModelArch((4, 3, 2))
    assert init_model(arch, 7).same_bits(init_model(arch, 7))


def test_init_biases_zero():
    m = init_model(ModelArch((4, 3, 2)), 123)
    for b in m.biases:
        assert not b.any()


def test_init_kaiming_std():
    # sample std over the 10^6 layer-0 weights within 5% of sqrt(2/1000)
    m = init_model(ModelArch((1000, 1000, 10)), 1)
    std = float(np.std(m.weights[0].astype(np.float64)))
    expected = math.sqrt(2.0 / 1000.0)
    assert abs(std - expected) / expected < 0.05


def test_init_differs_across_seeds():
    arch = ModelArch((4, 3, 2))
    assert not init_model(arch, 1).same_bits(init_model(arch, 2))


# -- random inputs ---------------------------------------------------------------


def test_kaiming_input_deterministic():
    a = kaiming_random_input((8,), 5)
    b = kaiming_random_input((8,), 5)
    assert a.tobytes() == b.tobytes()


def test_kaiming_input_image_shape():
    # a 32x32x3 image flattens to 3072 elements
    x = kaiming_random_input((32, 32, 3), 0)
    assert x.shape == (3072,)
    assert x.dtype == np.float32


def test_kaiming_input_std():
    # pooled over 100 seeds: sample std within 5% of sqrt(2/10000)
    pool = np.concatenate([kaiming_random_input((10000,), s) for s in range(100)])
    expected = math.sqrt(2.0 / 10000.0)
    std = float(np.std(pool.astype(np.float64)))
    assert abs(std - expected) / expected < 0.05


def test_kaiming_batch_matches_distribution():
    batch = kaiming_random_batch((64,), 1000, 3)
    assert batch.shape == (1000, 64)
    std = float(np.std(batch.astype(np.float64)))
    assert abs(std - math.sqrt(2.0 / 64.0)) / math.sqrt(2.0 / 64.0) < 0.05


def test_kaiming_input_bad_shape():
    with pytest.raises(ValueError):
        kaiming_random_input((0,), 1)


# -- forward ---------------------------------------------------------------------


def test_forward_zero_model():
    m = zero_snapshot((4, 3, 2))
    pred = forward(m, np.ones(4, dtype=np.float32), threshold=0.003)
    assert pred.label == 0
    assert not pred.logits.any()
    assert pred.profile.active == frozenset()


def test_forward_hand_example_and_oracle():
    m = hand_222_model()
    x = np.array([0.5, -0.5], dtype=np.float32)
    pred = forward(m, x, threshold=0.003)
    np.testing.assert_array_equal(pred.logits, np.array([0.5, 0.0], dtype=np.float32))
    assert pred.profile.active == frozenset({(0, 0)})
    assert pred.label == 0
    logits64, hiddens64 = forward_f64_oracle(m, x)
    assert hiddens64[0] == [0.5, 0.0]
    np.testing.assert_allclose(pred.logits, logits64, rtol=1e-6)


def test_forward_matches_f64_oracle_random():
    rng = np.random.default_rng(0)
    for seed in range(20):
        m = random_snapshot((6, 5, 4, 3), seed)
        x = rng.normal(size=6).astype(np.float32)
        pred = forward(m, x)
        logits64, _ = forward_f64_oracle(m, x)
        np.testing.assert_allclose(pred.logits, logits64, rtol=1e-4, atol=1e-5)


def test_forward_threshold_infinity_empty_profile():
    m = random_snapshot((4, 3, 2), 0)
    pred = forward(m, np.ones(4, dtype=np.float32), threshold=float("inf"))
    assert pred.profile.active == frozenset()


def test_forward_shape_mismatch_rejected():
    m = zero_snapshot((4, 3, 2))
    with pytest.raises(ValueError):
        forward(m, np.ones(5, dtype=np.float32))


def test_forward_requires_hidden_layer():
    m = zero_snapshot((4, 2))
    with pytest.raises(ValueError):
        forward(m, np.ones(4, dtype=np.float32))


def test_forward_deterministic_bytes():
    m = random_snapshot((8, 6, 3), 11)
    x = kaiming_random_input((8,), 2)
    a = forward(m, x)
    b = forward(m, x)
    assert a.logits.tobytes() == b.logits.tobytes()
    assert a.profile == b.profile


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    t1=st.floats(0, 0.5, allow_nan=False),
    delta=st.floats(0.0001, 2.0, allow_nan=False),
)
def test_profile_monotone_in_threshold(seed, t1, delta):
    m = random_snapshot((6, 8, 4), seed)
    x = kaiming_random_input((6,), seed + 1)
    low = forward(m, x, threshold=t1).profile.active
    high = forward(m, x, threshold=t1 + delta).profile.active
    assert high <= low


def test_argmax_tie_breaks_to_lowest_index():
    # both output rows identical -> identical logits -> label 0
    arch = ModelArch((3, 2, 2))
    w0 = np.ones((2, 3), dtype=np.float32)
    b0 = np.zeros(2, dtype=np.float32)
    w1 = np.array([[1.0, 1.0], [1.0, 1.0]], dtype=np.float32)
    b1 = np.zeros(2, dtype=np.float32)
    m = ModelSnapshot(arch, [w0, w1], [b0, b1])
    pred = forward(m, np.array([1.0, 2.0, 3.0], dtype=np.float32))
    assert pred.logits[0] == pred.logits[1]
    assert pred.label == 0


def test_forward_pass_counter():
    m = random_snapshot((4, 3, 2), 0)
    reset_forward_pass_count()
    forward(m, np.ones(4, dtype=np.float32))
    assert forward_pass_count() == 1
    forward(m, np.ones((7, 4), dtype=np.float32)[0])
    assert forward_pass_count() == 2


# -- training ----------------------------------------------------------------------


def _toy_data(n=40, dim=6, classes=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, dim)).astype(np.float32)
    y = rng.integers(0, classes, n).astype(np.int64)
    return X, y


def test_train_zero_epochs_is_identity():
    m = random_snapshot((6, 5, 3), 1)
    X, y = _toy_data()
    out, result = train_local(m, X, y, TrainConfig(learning_rate=0.1, epochs=0, batch_size=8))
    assert out.same_bits(m)
    assert result.epochs_run == 0
    assert result.final_loss == pytest.approx(mean_loss(m, X, y))


def test_train_deterministic():
    m = random_snapshot((6, 5, 3), 1)
    X, y = _toy_data()
    cfg = TrainConfig(learning_rate=0.05, epochs=3, batch_size=8, seed=9)
    a, ra = train_local(m, X, y, cfg)
    b, rb = train_local(m, X, y, cfg)
    assert a.same_bits(b)
    assert ra.final_loss == rb.final_loss


def test_train_does_not_mutate_input_model():
    m = random_snapshot((6, 5, 3), 1)
    before = m.arrays()[0].copy()
    X, y = _toy_data()
    train_local(m, X, y, TrainConfig(learning_rate=0.1, epochs=2, batch_size=8))
    np.testing.assert_array_equal(m.arrays()[0], before)


def test_train_loss_decreases_on_separable_data():
    from fedtrace.data import synthetic_blobs

    data = synthetic_blobs(3, 8, 120, seed=4, spread=0.3)
    m = init_model(ModelArch((8, 16, 3)), 0)
    initial = mean_loss(m, data.inputs, data.labels)
    trained, result = train_local(
        m, data.inputs, data.labels, TrainConfig(learning_rate=0.1, epochs=10, batch_size=16)
    )
    assert result.final_loss < initial


def test_loss_nonnegative():
    for seed in range(5):
        m = random_snapshot((6, 4, 3), seed)
        X, y = _toy_data(seed=seed)
        assert mean_loss(m, X, y) >= 0.0


def test_train_rejects_empty_dataset():
    m = random_snapshot((4, 3, 2), 0)
    with pytest.raises(ValueError):
        train_local(
            m,
            np.zeros((0, 4), dtype=np.float32),
            np.zeros(0, dtype=np.int64),
            TrainConfig(learning_rate=0.1, epochs=1, batch_size=4),
        )


def test_train_rejects_bad_labels():
    m = random_snapshot((4, 3, 2), 0)
    X = np.zeros((3, 4), dtype=np.float32)
    with pytest.raises(ValueError):
        train_local(
            m,
            X,
            np.array([0, 1, 2], dtype=np.int64),  # class 2 out of range for 2 classes
            TrainConfig(learning_rate=0.1, epochs=1, batch_size=4),
        )


def test_single_step_gradient_vs_finite_differences():
    # one example, one epoch, batch 1: delta = -lr * gradient
    from conftest import fd_gradient_oracle

    lr = 0.0625  # power of two, exact scaling
    m = random_snapshot((4, 3, 2), 17)
    X = np.random.default_rng(3).normal(size=(1, 4)).astype(np.float32)
    y = np.array([1], dtype=np.int64)
    trained, _ = train_local(
        m, X, y, TrainConfig(learning_rate=lr, epochs=1, batch_size=1, weight_decay=0.0)
    )
    fd_w, fd_b = fd_gradient_oracle(m.copy(), X, y, weight_decay=0.0)
    for l in range(m.arch.num_layers):
        got_w = (m.weights[l].astype(np.float64) - trained.weights[l].astype(np.float64)) / lr
        got_b = (m.biases[l].astype(np.float64) - trained.biases[l].astype(np.float64)) / lr
        scale_w = np.maximum(np.maximum(np.abs(got_w), np.abs(fd_w[l])), 1e-2)
        scale_b = np.maximum(np.maximum(np.abs(got_b), np.abs(fd_b[l])), 1e-2)
        assert np.max(np.abs(got_w - fd_w[l]) / scale_w) < 1e-3
        assert np.max(np.abs(got_b - fd_b[l]) / scale_b) < 1e-3


def test_gradient_with_weight_decay_vs_finite_differences():
    from conftest import fd_gradient_oracle

    lr = 0.0625
    wd = 0.01
    m = random_snapshot((4, 3, 2), 23)
    X = np.random.default_rng(5).normal(size=(1, 4)).astype(np.float32)
    y = np.array([0], dtype=np.int64)
    trained, _ = train_local(
        m, X, y, TrainConfig(learning_rate=lr, epochs=1, batch_size=1, weight_decay=wd)
    )
    fd_w, _ = fd_gradient_oracle(m.copy(), X, y, weight_decay=wd)
    for l in range(m.arch.num_layers):
        got_w = (m.weights[l].astype(np.float64) - trained.weights[l].astype(np.float64)) / lr
        scale = np.maximum(np.maximum(np.abs(got_w), np.abs(fd_w[l])), 1e-2)
        assert np.max(np.abs(got_w - fd_w[l]) / scale) < 1e-3


# -- snapshot io -------------------------------------------------------------------


def test_snapshot_roundtrip_bit_exact(tmp_path):
    m = random_snapshot((7, 5, 4), 2)
    save_snapshot(m, tmp_path / "snap")
    loaded = load_snapshot(tmp_path / "snap")
    assert loaded.same_bits(m)
    assert loaded.arch == m.arch


def test_snapshot_manifest_fields(tmp_path):
    from fedtrace.kvio import read_kv

    m = random_snapshot((7, 5, 4), 2)
    save_snapshot(m, tmp_path / "snap")
    manifest = read_kv(tmp_path / "snap.ini")["snapshot"]
    assert manifest["layer_sizes"] == "7,5,4"
    assert manifest["dtype"] == "<f4"
    assert int(manifest["element_count"]) == m.num_params
    assert float(manifest["default_activation_threshold"]) == DEFAULT_ACTIVATION_THRESHOLD


def test_snapshot_truncated_blob_rejected(tmp_path):
    m = random_snapshot((7, 5, 4), 2)
    _, blob = save_snapshot(m, tmp_path / "snap")
    data = blob.read_bytes()
    blob.write_bytes(data[:-4])
    with pytest.raises(ValueError):
        load_snapshot(tmp_path / "snap")


def test_snapshot_digest_changes_with_content():
    a = random_snapshot((4, 3, 2), 0)
    b = random_snapshot((4, 3, 2), 1)
    assert a.digest() != b.digest()
    assert a.digest() == a.copy().digest()
