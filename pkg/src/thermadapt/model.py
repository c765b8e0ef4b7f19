"""Model assembly: feature extractor, label classifier, domain discriminator.

Shape chain for one sample: 1x20x32 -> conv 5x9 -> 128x16x24 -> pool ->
128x8x12 -> conv 3x5 -> 500x6x8 -> pool -> 500x3x4 -> flatten -> 6000.
The label head maps 6000 -> 1000 -> 500 -> 8; the domain head passes the
features through a gradient-reversal stage, then 6000 -> 1000 -> 2.

Flatten order is channel-major, then row-major over the spatial grid (plain
C-order ravel), fixed so saved parameters stay portable.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import CheckpointFormatError, ShapeError
from .layers import (
    Conv2dLayer,
    DenseLayer,
    GradientReversal,
    conv2d,
    dense,
    grl,
    maxpool2,
    relu,
    softmax,
)
from .tensor import Tape, Tensor, release_free_heap

SAMPLE_SHAPE = (1, 20, 32)
FEATURE_LENGTH = 6000
NUM_CLASSES = 8
NUM_DOMAINS = 2

CHECKPOINT_MAGIC = b"THCP"
CHECKPOINT_VERSION = 1


class ActivityLabel(IntEnum):
    """The eight recognized classes, with a stable 0..7 encoding."""

    LYING = 0
    SQUATTING = 1
    SITTING = 2
    STANDING = 3
    WAVING = 4
    WALKING = 5
    STOOPING = 6
    EMPTY = 7


CLASS_NAMES: Tuple[str, ...] = tuple(label.name.lower() for label in ActivityLabel)


@dataclass
class ScdnnModel:
    """Parameters for the three sub-networks plus the reversal coefficient."""

    conv1: Conv2dLayer
    conv2: Conv2dLayer
    fc1: DenseLayer
    fc2: DenseLayer
    fc_label: DenseLayer
    fc_domain1: DenseLayer
    fc_domain2: DenseLayer
    grl: GradientReversal = field(default_factory=GradientReversal)
    rng_seed: int = 0

    def named_parameters(self) -> List[Tuple[str, np.ndarray]]:
        """All trainable arrays in a fixed, documented order."""
        out = []
        for name in ("conv1", "conv2", "fc1", "fc2", "fc_label", "fc_domain1", "fc_domain2"):
            layer = getattr(self, name)
            out.append((f"{name}.weights", layer.weights))
            out.append((f"{name}.bias", layer.bias))
        return out

    def label_path_parameters(self) -> List[Tuple[str, np.ndarray]]:
        """Parameters reached by the label objective (no domain head)."""
        return [
            (n, a) for n, a in self.named_parameters() if not n.startswith("fc_domain")
        ]

    def weight_arrays(self) -> List[np.ndarray]:
        """Weight matrices/kernels only; biases are left unregularized."""
        return [a for n, a in self.named_parameters() if n.endswith(".weights")]


def parameter_count(model: ScdnnModel) -> int:
    return sum(a.size for _, a in model.named_parameters())


def build_model(seed: int) -> ScdnnModel:
    """Deterministically initialized model for the given seed.

    Weights are uniform in +-sqrt(6 / (fan_in + fan_out)); biases start at
    zero. Layer draw order is fixed, so equal seeds give bitwise-equal
    parameters.
    """
    rng = np.random.default_rng(seed)

    def glorot(shape, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    def conv(out_ch, in_ch, kh, kw):
        w = glorot((out_ch, in_ch, kh, kw), in_ch * kh * kw, out_ch * kh * kw)
        return Conv2dLayer(w, np.zeros(out_ch))

    def fc(out_units, in_units):
        w = glorot((out_units, in_units), in_units, out_units)
        return DenseLayer(w, np.zeros(out_units))

    return ScdnnModel(
        conv1=conv(128, 1, 5, 9),
        conv2=conv(500, 128, 3, 5),
        fc1=fc(1000, 6000),
        fc2=fc(500, 1000),
        fc_label=fc(8, 500),
        fc_domain1=fc(1000, 6000),
        fc_domain2=fc(2, 1000),
        grl=GradientReversal(0.0),
        rng_seed=int(seed),
    )


# ---------------------------------------------------------------------------
# Graph builders (shared by inference and training).


def features_graph(x: Tensor, model: ScdnnModel) -> Tensor:
    """conv -> relu -> pool -> conv -> relu -> pool -> flatten."""
    h = relu(conv2d(x, model.conv1))
    h = maxpool2(h)
    h = relu(conv2d(h, model.conv2))
    h = maxpool2(h)
    if len(h.shape) == 4:
        return h.reshape((h.shape[0], FEATURE_LENGTH))
    return h.reshape((FEATURE_LENGTH,))


def label_probabilities_graph(features: Tensor, model: ScdnnModel) -> Tensor:
    h = relu(dense(features, model.fc1))
    h = relu(dense(h, model.fc2))
    return softmax(dense(h, model.fc_label))


def domain_probabilities_graph(
    features: Tensor, model: ScdnnModel, coefficient: Optional[float] = None
) -> Tensor:
    lam = model.grl.coefficient if coefficient is None else float(coefficient)
    h = grl(features, lam)
    h = relu(dense(h, model.fc_domain1))
    return softmax(dense(h, model.fc_domain2))


# ---------------------------------------------------------------------------
# Array-in / array-out inference API.


def _sample_array(sample) -> np.ndarray:
    values = getattr(sample, "values", sample)
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape == (640,):
        arr = arr.reshape(SAMPLE_SHAPE)
    if arr.shape != SAMPLE_SHAPE:
        raise ShapeError(f"expected sample shape {SAMPLE_SHAPE}, got {arr.shape}")
    return arr


def extract_features(sample, model: ScdnnModel) -> np.ndarray:
    """Feature vector of length 6000 for one sample."""
    tape = Tape()
    return features_graph(tape.constant(_sample_array(sample)), model).data


def classify_labels(features, model: ScdnnModel) -> np.ndarray:
    """Probability vector over the 8 activities."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.shape != (FEATURE_LENGTH,):
        raise ShapeError(f"expected features of shape ({FEATURE_LENGTH},), got {arr.shape}")
    tape = Tape()
    return label_probabilities_graph(tape.constant(arr), model).data


def discriminate_domain(
    features, model: ScdnnModel, coefficient: Optional[float] = None
) -> np.ndarray:
    """Probability pair (source, target). Forward output ignores the coefficient."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.shape != (FEATURE_LENGTH,):
        raise ShapeError(f"expected features of shape ({FEATURE_LENGTH},), got {arr.shape}")
    tape = Tape()
    return domain_probabilities_graph(tape.constant(arr), model, coefficient).data


def predict(sample, model: ScdnnModel) -> ActivityLabel:
    """Most probable activity; ties go to the lowest class index."""
    probs = classify_labels(extract_features(sample, model), model)
    return ActivityLabel(int(np.argmax(probs)))


def class_probabilities_batch(
    samples: np.ndarray, model: ScdnnModel, chunk: int = 128
) -> np.ndarray:
    """(N, 8) label probabilities for samples of shape (N, 1, 20, 32)."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[1:] != SAMPLE_SHAPE:
        raise ShapeError(f"expected samples of shape (N,) + {SAMPLE_SHAPE}, got {arr.shape}")
    out = np.empty((arr.shape[0], NUM_CLASSES), dtype=np.float64)
    for start in range(0, arr.shape[0], chunk):
        part = arr[start : start + chunk]
        tape = Tape()
        f = features_graph(tape.constant(part), model)
        out[start : start + part.shape[0]] = label_probabilities_graph(f, model).data
        del tape, f
        release_free_heap()
    return out


def predict_batch(samples: np.ndarray, model: ScdnnModel, chunk: int = 128) -> np.ndarray:
    """Predicted class indices for samples of shape (N, 1, 20, 32)."""
    return class_probabilities_batch(samples, model, chunk=chunk).argmax(axis=1)


# ---------------------------------------------------------------------------
# Checkpoint container.
#
# Layout: magic "THCP", u32 version, u32 header length, UTF-8 JSON header
# (shapes, class table, metadata), then each parameter as little-endian
# float64 in C order, in header order.


def save_checkpoint(model: ScdnnModel, path, metadata: Optional[Dict] = None) -> None:
    params = model.named_parameters()
    header = {
        "format_version": CHECKPOINT_VERSION,
        "class_names": list(CLASS_NAMES),
        "rng_seed": model.rng_seed,
        "grl_coefficient": model.grl.coefficient,
        "parameters": [{"name": n, "shape": list(a.shape)} for n, a in params],
        "metadata": metadata if metadata is not None else {},
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, a in params:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> Tuple[ScdnnModel, Dict]:
    """Read a checkpoint; returns (model, metadata).

    Rejects wrong magic/version, truncation, trailing bytes, shape or class
    table mismatches against the fixed architecture.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    if len(raw) < 12 + header_len:
        raise CheckpointFormatError("truncated checkpoint header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"corrupt checkpoint header: {exc}") from None

    if header.get("class_names") != list(CLASS_NAMES):
        raise CheckpointFormatError(
            f"class table mismatch: {header.get('class_names')!r}"
        )
    reference = build_model(0)
    expected = {n: a.shape for n, a in reference.named_parameters()}
    entries = header.get("parameters")
    if not isinstance(entries, list) or [e.get("name") for e in entries] != [
        n for n, _ in reference.named_parameters()
    ]:
        raise CheckpointFormatError("unexpected parameter list in checkpoint")

    offset = 12 + header_len
    loaded: Dict[str, np.ndarray] = {}
    for entry in entries:
        try:
            name, shape = entry["name"], tuple(int(d) for d in entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointFormatError(f"malformed parameter entry: {exc}") from None
        if shape != expected[name]:
            raise CheckpointFormatError(
                f"shape mismatch for {name}: file has {shape}, expected {expected[name]}"
            )
        nbytes = int(np.prod(shape)) * 8
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointFormatError(f"truncated data for {name}")
        loaded[name] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointFormatError(f"{len(raw) - offset} trailing bytes after data")

    def conv(name):
        return Conv2dLayer(loaded[f"{name}.weights"], loaded[f"{name}.bias"])

    def fc(name):
        return DenseLayer(loaded[f"{name}.weights"], loaded[f"{name}.bias"])

    model = ScdnnModel(
        conv1=conv("conv1"),
        conv2=conv("conv2"),
        fc1=fc("fc1"),
        fc2=fc("fc2"),
        fc_label=fc("fc_label"),
        fc_domain1=fc("fc_domain1"),
        fc_domain2=fc("fc_domain2"),
        grl=GradientReversal(float(header.get("grl_coefficient", 0.0))),
        rng_seed=int(header.get("rng_seed", 0)),
    )
    return model, header.get("metadata", {})
