"""Comparison methods: KNN, source-only training, pure adversarial mode.

train_source_only is written as its own loop (no gradient-reversal stage,
no domain head, no target batches) precisely so it can serve as an
independent check: with the reversal coefficient pinned to 0 and all
target sets empty, the adversarial trainer must match it step for step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, TrainingDiverged
from .layers import l2_regularizer, nll_class_loss
from .model import (
    ActivityLabel,
    ScdnnModel,
    build_model,
    features_graph,
    label_probabilities_graph,
)
from .tensor import Tape, release_free_heap
from .train import (
    DataSplit,
    EpochRecord,
    TrainConfig,
    TrainingHistory,
    evaluate_light,
    train_scdnn,
)


@dataclass
class KnnModel:
    """Stored flattened samples + labels; votes among the k nearest."""

    samples: np.ndarray  # (N, 640)
    labels: np.ndarray  # (N,)
    k: int = 5


def _flatten(samples) -> np.ndarray:
    arr = np.asarray(getattr(samples, "values", samples), dtype=np.float64)
    if arr.ndim >= 2:
        arr = arr.reshape(arr.shape[0], -1) if arr.ndim > 2 else arr
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.shape[-1] != 640:
        raise ConfigError(f"expected 640 values per sample, got {arr.shape[-1]}")
    return arr


def fit_knn(samples, labels, k: int = 5) -> KnnModel:
    flat = _flatten(samples)
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.shape != (flat.shape[0],):
        raise ConfigError(f"{flat.shape[0]} samples but {y.size} labels")
    if not 1 <= k <= flat.shape[0]:
        raise ConfigError(f"k={k} must lie in 1..{flat.shape[0]}")
    return KnnModel(flat, y, int(k))


def knn_classify_batch(model: KnnModel, samples) -> np.ndarray:
    """Majority vote among the k nearest by Euclidean distance.

    Vote ties resolve to the lowest class index; distance ties at the k-th
    neighbour resolve by training order (stable sort).
    """
    queries = _flatten(samples)
    out = np.empty(queries.shape[0], dtype=np.int64)
    train = model.samples
    train_sq = (train * train).sum(axis=1)
    for start in range(0, queries.shape[0], 256):
        q = queries[start : start + 256]
        d2 = train_sq[None, :] - 2.0 * (q @ train.T) + (q * q).sum(axis=1)[:, None]
        nearest = np.argsort(d2, axis=1, kind="stable")[:, : model.k]
        for i, row in enumerate(nearest):
            votes = np.bincount(model.labels[row], minlength=8)
            out[start + i] = int(votes.argmax())
    return out


def knn_classify(model: KnnModel, sample) -> ActivityLabel:
    return ActivityLabel(int(knn_classify_batch(model, sample)[0]))


def train_source_only(
    source_samples,
    source_labels,
    config: TrainConfig,
    test_samples=None,
    test_labels=None,
    progress: Optional[Callable[[EpochRecord], None]] = None,
) -> Tuple[ScdnnModel, TrainingHistory]:
    """Supervised training of the feature extractor + label classifier only.

    The returned model shares the full parameter container; the domain head
    stays untouched at its seed initialization.
    """
    xs_all = np.asarray(source_samples, dtype=np.float64)
    ys_all = np.asarray(source_labels, dtype=np.int64).ravel()
    ns = xs_all.shape[0]
    if ns == 0:
        raise ConfigError("training requires a non-empty source set")
    if ys_all.shape != (ns,):
        raise ConfigError(f"{ns} samples but {ys_all.size} labels")
    have_test = test_samples is not None and len(test_samples) > 0

    model = build_model(config.rng_seed)
    label_params = model.label_path_parameters()
    label_weights = [a for n, a in label_params if n.endswith(".weights")]
    velocity = {name: np.zeros_like(arr) for name, arr in label_params}
    rng = np.random.default_rng([config.rng_seed, 1])
    steps = math.ceil(ns / config.batch_size)
    history: TrainingHistory = []

    for epoch in range(config.epochs):
        perm = rng.permutation(ns)
        loss_sum = 0.0
        for step in range(steps):
            sidx = perm[step * config.batch_size : (step + 1) * config.batch_size]
            tape = Tape()
            feats = features_graph(tape.constant(xs_all[sidx]), model)
            probs = label_probabilities_graph(feats, model)
            loss = nll_class_loss(probs, ys_all[sidx])
            loss_value = float(loss.data)
            loss = loss + l2_regularizer(label_weights, config.l2_lambda, tape)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch} step {step} "
                    f"(classification {loss_value})"
                )
            grads = tape.backward(loss)
            for name, arr in label_params:
                leaf = tape.node_for(arr)
                g = grads.get(leaf.node_id) if leaf is not None else None
                v = velocity[name]
                v *= config.momentum
                if g is not None:
                    v -= config.learning_rate * g
                arr += v
            loss_sum += loss_value
            del tape, grads, feats, loss
            release_free_heap()

        record = EpochRecord(
            epoch=epoch, grl_coefficient=0.0, source_label_loss=loss_sum / steps
        )
        due = config.eval_every > 0 and (epoch + 1) % config.eval_every == 0
        if have_test and (due or epoch == config.epochs - 1):
            report = evaluate_light(model, test_samples, test_labels)
            record.test_accuracy = report.accuracy
            record.test_macro_f1 = report.macro_f1
        history.append(record)
        if progress is not None:
            progress(record)

    return model, history


def train_dann_mode(
    split: DataSplit,
    config: TrainConfig,
    progress: Optional[Callable[[EpochRecord], None]] = None,
) -> Tuple[ScdnnModel, TrainingHistory]:
    """Adversarial adaptation without any labeled target samples."""
    sub = DataSplit(
        source_samples=split.source_samples,
        source_labels=split.source_labels,
        target_unlabeled=split.target_unlabeled,
        test_samples=split.test_samples,
        test_labels=split.test_labels,
    )
    return train_scdnn(sub, config, progress=progress)
