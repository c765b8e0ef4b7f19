"""Network construction, forward shapes, prediction API, checkpoints."""

import json
import struct

import numpy as np
import pytest

from thermadapt.errors import CheckpointFormatError, ShapeError
from thermadapt.layers import conv2d, dense, domain_bce_loss, maxpool2, relu, softmax
from thermadapt.model import (
    CLASS_NAMES,
    FEATURE_LENGTH,
    SAMPLE_SHAPE,
    ActivityLabel,
    build_model,
    class_probabilities_batch,
    classify_labels,
    discriminate_domain,
    domain_probabilities_graph,
    extract_features,
    features_graph,
    load_checkpoint,
    parameter_count,
    predict,
    predict_batch,
    save_checkpoint,
)
from thermadapt.tensor import Tape


def _zero_label_path(model):
    for name, arr in model.label_path_parameters():
        arr[:] = 0.0
    return model


def test_class_encoding_is_stable():
    assert [l.name for l in ActivityLabel] == [
        "LYING", "SQUATTING", "SITTING", "STANDING",
        "WAVING", "WALKING", "STOOPING", "EMPTY",
    ]
    assert int(ActivityLabel.WAVING) == 4
    assert int(ActivityLabel.WALKING) == 5
    assert CLASS_NAMES[7] == "empty"


def test_parameter_count_matches_layer_arithmetic():
    model = build_model(0)
    expected = (
        (128 * 1 * 5 * 9 + 128)
        + (500 * 128 * 3 * 5 + 500)
        + (1000 * 6000 + 1000)
        + (500 * 1000 + 500)
        + (8 * 500 + 8)
        + (1000 * 6000 + 1000)
        + (2 * 1000 + 2)
    )
    assert expected == 13_474_898
    assert parameter_count(model) == expected


def test_build_is_deterministic_and_seed_sensitive():
    a = build_model(7)
    b = build_model(7)
    c = build_model(8)
    for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert pa.tobytes() == pb.tobytes(), name
    assert not np.array_equal(a.conv1.weights, c.conv1.weights)


def test_initial_biases_are_zero_and_weights_bounded():
    model = build_model(3)
    for name, arr in model.named_parameters():
        if name.endswith(".bias"):
            np.testing.assert_array_equal(arr, np.zeros_like(arr))
    limit = np.sqrt(6.0 / (6000 + 1000))
    assert np.abs(model.fc1.weights).max() <= limit


def test_forward_shape_chain_stage_by_stage():
    model = build_model(0)
    tape = Tape()
    x = tape.constant(np.random.default_rng(0).normal(size=(2,) + SAMPLE_SHAPE))
    h = conv2d(x, model.conv1)
    assert h.shape == (2, 128, 16, 24)
    h = maxpool2(relu(h))
    assert h.shape == (2, 128, 8, 12)
    h = conv2d(h, model.conv2)
    assert h.shape == (2, 500, 6, 8)
    h = maxpool2(relu(h))
    assert h.shape == (2, 500, 3, 4)
    feats = features_graph(x, model)
    assert feats.shape == (2, FEATURE_LENGTH)
    probs = class_probabilities_batch(x.data, model)
    assert probs.shape == (2, 8)
    dom = discriminate_domain(feats.data[0], model)
    assert dom.shape == (2,)


def test_label_path_excludes_domain_head():
    model = build_model(0)
    names = [n for n, _ in model.label_path_parameters()]
    assert "fc_domain1.weights" not in names
    assert "fc_label.weights" in names and "conv1.bias" in names
    assert len(model.weight_arrays()) == 7


def test_probabilities_are_distributions():
    model = build_model(1)
    rng = np.random.default_rng(2)
    sample = rng.normal(size=SAMPLE_SHAPE)
    feats = extract_features(sample, model)
    assert feats.shape == (FEATURE_LENGTH,)
    probs = classify_labels(feats, model)
    assert probs.shape == (8,)
    assert probs.min() >= 0
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    dom = discriminate_domain(feats, model)
    assert dom.sum() == pytest.approx(1.0, abs=1e-12)


def test_zero_input_gives_zero_features():
    model = build_model(4)  # biases are zero at init
    feats = extract_features(np.zeros(SAMPLE_SHAPE), model)
    np.testing.assert_array_equal(feats, np.zeros(FEATURE_LENGTH))


def test_uniform_logits_tie_resolves_to_lowest_class():
    model = _zero_label_path(build_model(5))
    assert predict(np.random.default_rng(3).normal(size=SAMPLE_SHAPE), model) is ActivityLabel.LYING


def test_bias_steered_prediction():
    model = _zero_label_path(build_model(6))
    model.fc_label.bias[5] = 10.0
    sample = np.random.default_rng(4).normal(size=SAMPLE_SHAPE)
    assert predict(sample, model) is ActivityLabel.WALKING


def test_predict_batch_matches_single_predictions():
    model = build_model(9)
    rng = np.random.default_rng(5)
    batch = rng.normal(size=(7,) + SAMPLE_SHAPE)
    singles = [int(predict(batch[i], model)) for i in range(7)]
    np.testing.assert_array_equal(predict_batch(batch, model), singles)


def test_batch_shape_validation():
    model = build_model(0)
    with pytest.raises(ShapeError):
        class_probabilities_batch(np.zeros((2, 1, 20, 31)), model)
    with pytest.raises(ShapeError):
        classify_labels(np.zeros(5999), model)
    with pytest.raises(ShapeError):
        extract_features(np.zeros((2, 20, 32)), model)


# -- the reversal stage in context ----------------------------------------------


def test_domain_forward_ignores_reversal_coefficient():
    model = build_model(10)
    feats = extract_features(np.random.default_rng(6).normal(size=SAMPLE_SHAPE), model)
    outs = [discriminate_domain(feats, model, coefficient=lam) for lam in (0.0, 0.5, 1.0)]
    assert outs[0].tobytes() == outs[1].tobytes() == outs[2].tobytes()


def test_reversal_negates_shared_gradients_exactly():
    model = build_model(11)
    rng = np.random.default_rng(7)
    batch = rng.normal(size=(4,) + SAMPLE_SHAPE)
    d_labels = np.array([0, 1, 0, 1])

    def shared_grads(with_reversal: bool):
        tape = Tape()
        feats = features_graph(tape.constant(batch), model)
        if with_reversal:
            probs = domain_probabilities_graph(feats, model, coefficient=1.0)
        else:
            h = relu(dense(feats, model.fc_domain1))
            probs = softmax(dense(h, model.fc_domain2))
        grads = tape.backward(domain_bce_loss(probs, d_labels))
        node = lambda arr: tape.node_for(arr).node_id
        return (
            grads[node(model.conv1.weights)],
            grads[node(model.conv2.weights)],
            grads[node(model.fc_domain1.weights)],
        )

    g_rev = shared_grads(True)
    g_fwd = shared_grads(False)
    np.testing.assert_array_equal(g_rev[0], -g_fwd[0])  # feature extractor flips
    np.testing.assert_array_equal(g_rev[1], -g_fwd[1])
    np.testing.assert_array_equal(g_rev[2], g_fwd[2])  # domain head does not


# -- checkpoints -------------------------------------------------------------------


def test_checkpoint_round_trip_bitwise(tmp_path):
    model = build_model(12)
    model.grl.coefficient = 0.37
    path = tmp_path / "model.thcp"
    save_checkpoint(model, path, metadata={"epochs": 5, "note": "unit"})
    back, meta = load_checkpoint(path)
    assert meta == {"epochs": 5, "note": "unit"}
    assert back.grl.coefficient == 0.37
    assert back.rng_seed == 12
    for (name, a), (_, b) in zip(model.named_parameters(), back.named_parameters()):
        assert a.tobytes() == b.tobytes(), name


def test_checkpoint_predictions_survive_round_trip(tmp_path):
    model = build_model(13)
    path = tmp_path / "model.thcp"
    save_checkpoint(model, path)
    back, _ = load_checkpoint(path)
    batch = np.random.default_rng(8).normal(size=(3,) + SAMPLE_SHAPE)
    np.testing.assert_array_equal(
        class_probabilities_batch(batch, model), class_probabilities_batch(batch, back)
    )


def _saved(tmp_path):
    path = tmp_path / "ok.thcp"
    save_checkpoint(build_model(0), path)
    return path


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = _saved(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_checkpoint_rejects_other_version(tmp_path):
    path = _saved(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 2)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation_and_trailing(tmp_path):
    path = _saved(tmp_path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)
    path.write_bytes(raw + b"\x00")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_checkpoint_rejects_wrong_class_table(tmp_path):
    path = _saved(tmp_path)
    raw = path.read_bytes()
    version, header_len = struct.unpack("<II", raw[4:12])
    header = json.loads(raw[12 : 12 + header_len])
    header["class_names"][0] = "resting"
    blob = json.dumps(header, separators=(",", ":")).encode()
    path.write_bytes(raw[:4] + struct.pack("<II", version, len(blob)) + blob + raw[12 + header_len :])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_checkpoint_rejects_shape_mismatch(tmp_path):
    path = _saved(tmp_path)
    raw = path.read_bytes()
    version, header_len = struct.unpack("<II", raw[4:12])
    header = json.loads(raw[12 : 12 + header_len])
    header["parameters"][0]["shape"] = [64, 1, 5, 9]
    blob = json.dumps(header, separators=(",", ":")).encode()
    path.write_bytes(raw[:4] + struct.pack("<II", version, len(blob)) + blob + raw[12 + header_len :])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_checkpoint_rejects_garbage_file(tmp_path):
    path = tmp_path / "junk.thcp"
    path.write_bytes(b"nonsense")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)
