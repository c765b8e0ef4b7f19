"""Adversarial training loop with a few-shot labeled-target branch.

Each step draws a source batch and an equal-size unlabeled-target batch,
pushes source + target + the full few-shot set through the feature
extractor in one pass, and accumulates four loss terms: source
classification, few-shot target classification, domain discrimination
through the gradient-reversal stage, and an L2 penalty on weights. One
backward pass, one SGD-with-momentum update. Everything is driven by one
seed; equal seeds give bitwise-equal runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, TrainingDiverged
from .layers import l2_regularizer, nll_class_loss, domain_bce_loss
from .metrics import MetricsReport, compute_report
from .model import (
    ScdnnModel,
    build_model,
    class_probabilities_batch,
    domain_probabilities_graph,
    features_graph,
    label_probabilities_graph,
)
from .preprocess import SampleTensor
from .tensor import Tape, release_free_heap, rows

SCHEDULE_SIGMOID = "sigmoid"
SCHEDULE_CONSTANT = "constant"

_EMPTY_BLOCK = np.zeros((0, 1, 20, 32))
_EMPTY_LABELS = np.zeros((0,), dtype=np.int64)


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 128
    learning_rate: float = 0.001
    l2_lambda: float = 1e-4
    momentum: float = 0.9
    grl_schedule: str = SCHEDULE_SIGMOID
    grl_constant: float = 1.0
    rng_seed: int = 0
    eval_every: int = 1  # 0 disables per-epoch test evaluation except the last

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.l2_lambda < 0:
            raise ConfigError(f"weight penalty must be >= 0, got {self.l2_lambda}")
        if self.grl_schedule not in (SCHEDULE_SIGMOID, SCHEDULE_CONSTANT):
            raise ConfigError(f"unknown schedule {self.grl_schedule!r}")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0")


def grl_lambda_schedule(progress: float) -> float:
    """2 / (1 + exp(-10 p)) - 1: rises from 0 toward 1 as p goes 0 to 1."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {progress}")
    return 2.0 / (1.0 + math.exp(-10.0 * progress)) - 1.0


def grl_coefficient_for_epoch(epoch: int, config: TrainConfig) -> float:
    if config.grl_schedule == SCHEDULE_CONSTANT:
        return config.grl_constant
    p = epoch / config.epochs if config.epochs > 0 else 0.0
    return grl_lambda_schedule(p)


def _block(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.size == 0:
        return _EMPTY_BLOCK.copy()
    if arr.ndim != 4 or arr.shape[1:] != (1, 20, 32):
        raise ConfigError(f"samples must be (N, 1, 20, 32), got {arr.shape}")
    return arr


def _labels(labels, n: int, what: str) -> np.ndarray:
    arr = np.asarray(labels, dtype=np.int64).ravel()
    if arr.shape != (n,):
        raise ConfigError(f"{what}: {n} samples but {arr.size} labels")
    return arr


@dataclass
class DataSplit:
    """Source (labeled), target unlabeled / few-shot labeled / test arrays."""

    source_samples: np.ndarray
    source_labels: np.ndarray
    target_unlabeled: np.ndarray = field(default_factory=lambda: _EMPTY_BLOCK.copy())
    target_labeled_samples: np.ndarray = field(default_factory=lambda: _EMPTY_BLOCK.copy())
    target_labeled_labels: np.ndarray = field(default_factory=lambda: _EMPTY_LABELS.copy())
    test_samples: np.ndarray = field(default_factory=lambda: _EMPTY_BLOCK.copy())
    test_labels: np.ndarray = field(default_factory=lambda: _EMPTY_LABELS.copy())

    def __post_init__(self):
        self.source_samples = _block(self.source_samples)
        self.source_labels = _labels(self.source_labels, len(self.source_samples), "source")
        self.target_unlabeled = _block(self.target_unlabeled)
        self.target_labeled_samples = _block(self.target_labeled_samples)
        self.target_labeled_labels = _labels(
            self.target_labeled_labels, len(self.target_labeled_samples), "target labeled"
        )
        self.test_samples = _block(self.test_samples)
        self.test_labels = _labels(self.test_labels, len(self.test_samples), "test")


def stack_samples(samples: Sequence[SampleTensor]) -> Tuple[np.ndarray, np.ndarray]:
    """(N,1,20,32) values and int labels (-1 where unlabeled)."""
    if not samples:
        return _EMPTY_BLOCK.copy(), _EMPTY_LABELS.copy()
    values = np.stack([s.values for s in samples])
    labels = np.array(
        [-1 if s.label is None else int(s.label) for s in samples], dtype=np.int64
    )
    return values, labels


def make_split(
    source_samples,
    source_labels,
    target_samples,
    target_labels,
    labeled_per_class: int,
    unlabeled_count: int,
    test_count: int,
    seed: int,
    num_classes: int = 8,
) -> DataSplit:
    """Carve a target pool into disjoint few-shot / test / unlabeled parts."""
    src = _block(source_samples)
    src_y = _labels(source_labels, len(src), "source")
    tgt = _block(target_samples)
    tgt_y = _labels(target_labels, len(tgt), "target pool")
    if labeled_per_class < 0 or unlabeled_count < 0 or test_count < 0:
        raise ConfigError("split sizes must be >= 0")

    order = np.random.default_rng([int(seed), 97]).permutation(len(tgt))
    few: List[int] = []
    taken = np.zeros(num_classes, dtype=np.int64)
    rest: List[int] = []
    for idx in order:
        y = tgt_y[idx]
        if labeled_per_class and 0 <= y < num_classes and taken[y] < labeled_per_class:
            few.append(int(idx))
            taken[y] += 1
        else:
            rest.append(int(idx))
    if labeled_per_class and int(taken.min()) < labeled_per_class:
        raise ConfigError(
            f"target pool lacks {labeled_per_class} labeled samples for every class"
        )
    if len(rest) < test_count + unlabeled_count:
        raise ConfigError(
            f"target pool too small: need {test_count + unlabeled_count} more samples, "
            f"have {len(rest)}"
        )
    test_idx = rest[:test_count]
    unl_idx = rest[test_count : test_count + unlabeled_count]
    return DataSplit(
        source_samples=src,
        source_labels=src_y,
        target_unlabeled=tgt[unl_idx],
        target_labeled_samples=tgt[few],
        target_labeled_labels=tgt_y[few],
        test_samples=tgt[test_idx],
        test_labels=tgt_y[test_idx],
    )


@dataclass
class EpochRecord:
    epoch: int
    grl_coefficient: float
    source_label_loss: float
    target_label_loss: Optional[float] = None
    domain_loss: Optional[float] = None
    domain_accuracy: Optional[float] = None
    test_accuracy: Optional[float] = None
    test_macro_f1: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


TrainingHistory = List[EpochRecord]


def _quick_test_stats(model, samples, labels) -> Tuple[float, float]:
    report = evaluate_light(model, samples, labels)
    return report.accuracy, report.macro_f1


def evaluate_light(model: ScdnnModel, samples, labels) -> MetricsReport:
    """Confusion-based metrics only (no curves); used for per-epoch checks."""
    probs = class_probabilities_batch(np.asarray(samples, dtype=np.float64), model)
    return compute_report(labels, probs.argmax(axis=1))


def evaluate(model: ScdnnModel, samples, labels) -> MetricsReport:
    """Full report: confusion, precision/recall/F1, ROC/AUC, PR/AP."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.shape[0] == 0:
        raise ValueError("evaluate needs a non-empty test set")
    probs = class_probabilities_batch(arr, model)
    return compute_report(labels, probs.argmax(axis=1), scores=probs)


def _sgd_step(model, velocity, grads, tape, config):
    for name, arr in model.named_parameters():
        leaf = tape.node_for(arr)
        g = grads.get(leaf.node_id) if leaf is not None else None
        v = velocity[name]
        v *= config.momentum
        if g is not None:
            v -= config.learning_rate * g
        arr += v


def train_scdnn(
    split: DataSplit,
    config: TrainConfig,
    progress: Optional[Callable[[EpochRecord], None]] = None,
) -> Tuple[ScdnnModel, TrainingHistory]:
    """Returns the trained model and one record per completed epoch."""
    ns = len(split.source_samples)
    if ns == 0:
        raise ConfigError("training requires a non-empty source split")
    nu = len(split.target_unlabeled)
    nl = len(split.target_labeled_samples)
    have_test = len(split.test_samples) > 0

    model = build_model(config.rng_seed)
    velocity = {name: np.zeros_like(arr) for name, arr in model.named_parameters()}
    rng = np.random.default_rng([config.rng_seed, 1])
    steps = math.ceil(ns / config.batch_size)
    history: TrainingHistory = []

    for epoch in range(config.epochs):
        lam = grl_coefficient_for_epoch(epoch, config)
        model.grl.coefficient = lam
        perm = rng.permutation(ns)
        sums = np.zeros(4)  # source loss, few-shot loss, domain loss, domain acc

        for step in range(steps):
            sidx = perm[step * config.batch_size : (step + 1) * config.batch_size]
            xs = split.source_samples[sidx]
            ys = split.source_labels[sidx]
            b_s = len(sidx)
            parts = [xs]
            b_t = 0
            if nu > 0:
                tidx = rng.integers(0, nu, size=b_s)
                parts.append(split.target_unlabeled[tidx])
                b_t = b_s
            if nl > 0:
                parts.append(split.target_labeled_samples)

            tape = Tape()
            feats = features_graph(tape.constant(np.concatenate(parts, axis=0)), model)
            probs_s = label_probabilities_graph(rows(feats, 0, b_s), model)
            loss = nll_class_loss(probs_s, ys)
            loss_s = float(loss.data)
            loss_f = loss_d = dom_acc = None

            if nl > 0:
                f_few = rows(feats, b_s + b_t, b_s + b_t + nl)
                probs_f = label_probabilities_graph(f_few, model)
                term = nll_class_loss(probs_f, split.target_labeled_labels)
                loss_f = float(term.data)
                loss = loss + term
            if b_t > 0:
                f_mix = rows(feats, 0, b_s + b_t)
                probs_d = domain_probabilities_graph(f_mix, model)
                d_true = np.r_[
                    np.zeros(b_s, dtype=np.int64), np.ones(b_t, dtype=np.int64)
                ]
                term = domain_bce_loss(probs_d, d_true)
                loss_d = float(term.data)
                dom_acc = float((probs_d.data.argmax(axis=1) == d_true).mean())
                loss = loss + term
            reg = l2_regularizer(model.weight_arrays(), config.l2_lambda, tape)
            loss = loss + reg

            if not np.isfinite(loss.data):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch} step {step} "
                    f"(source {loss_s}, few-shot {loss_f}, domain {loss_d}, "
                    f"penalty {float(reg.data)})"
                )
            grads = tape.backward(loss)
            _sgd_step(model, velocity, grads, tape, config)
            sums += [loss_s, loss_f or 0.0, loss_d or 0.0, dom_acc or 0.0]
            del tape, grads, feats, loss
            release_free_heap()

        record = EpochRecord(
            epoch=epoch,
            grl_coefficient=lam,
            source_label_loss=sums[0] / steps,
            target_label_loss=(sums[1] / steps) if nl > 0 else None,
            domain_loss=(sums[2] / steps) if nu > 0 else None,
            domain_accuracy=(sums[3] / steps) if nu > 0 else None,
        )
        due = config.eval_every > 0 and (epoch + 1) % config.eval_every == 0
        if have_test and (due or epoch == config.epochs - 1):
            record.test_accuracy, record.test_macro_f1 = _quick_test_stats(
                model, split.test_samples, split.test_labels
            )
        history.append(record)
        if progress is not None:
            progress(record)

    return model, history


@dataclass
class SweepRow:
    count: int
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float


def _sweep_eval(model, split) -> SweepRow:
    report = evaluate_light(model, split.test_samples, split.test_labels)
    return SweepRow(
        0, report.accuracy, report.macro_precision, report.macro_recall, report.macro_f1
    )


def sweep_unlabeled(
    counts: Sequence[int],
    split: DataSplit,
    config: TrainConfig,
    progress: Optional[Callable[[EpochRecord], None]] = None,
) -> List[SweepRow]:
    """Retrain per unlabeled-pool size; few-shot and test stay fixed."""
    nu = len(split.target_unlabeled)
    order = np.random.default_rng([config.rng_seed, 11]).permutation(nu)
    out = []
    for count in counts:
        if not 0 <= count <= nu:
            raise ConfigError(f"unlabeled count {count} exceeds pool of {nu}")
        sub = DataSplit(
            source_samples=split.source_samples,
            source_labels=split.source_labels,
            target_unlabeled=split.target_unlabeled[order[:count]],
            target_labeled_samples=split.target_labeled_samples,
            target_labeled_labels=split.target_labeled_labels,
            test_samples=split.test_samples,
            test_labels=split.test_labels,
        )
        model, _ = train_scdnn(sub, config, progress=progress)
        row = _sweep_eval(model, sub)
        row.count = count
        out.append(row)
    return out


def sweep_labeled(
    per_class_counts: Sequence[int],
    split: DataSplit,
    config: TrainConfig,
    progress: Optional[Callable[[EpochRecord], None]] = None,
) -> List[SweepRow]:
    """Retrain per few-shot size; count 0 drops the labeled-target branch."""
    pool_y = split.target_labeled_labels
    by_class = {}
    order = np.random.default_rng([config.rng_seed, 13]).permutation(len(pool_y))
    for idx in order:
        by_class.setdefault(int(pool_y[idx]), []).append(int(idx))
    out = []
    for count in per_class_counts:
        if count < 0:
            raise ConfigError("per-class count must be >= 0")
        picked: List[int] = []
        if count > 0:
            for c in sorted(by_class):
                if len(by_class[c]) < count:
                    raise ConfigError(
                        f"labeled pool has only {len(by_class[c])} samples of class {c}, "
                        f"need {count}"
                    )
                picked.extend(by_class[c][:count])
        sub = DataSplit(
            source_samples=split.source_samples,
            source_labels=split.source_labels,
            target_unlabeled=split.target_unlabeled,
            target_labeled_samples=split.target_labeled_samples[picked],
            target_labeled_labels=pool_y[picked],
            test_samples=split.test_samples,
            test_labels=split.test_labels,
        )
        model, _ = train_scdnn(sub, config, progress=progress)
        row = _sweep_eval(model, sub)
        row.count = count
        out.append(row)
    return out


def format_sweep(rows: Sequence[SweepRow], count_header: str = "count") -> str:
    lines = [f"{count_header}\taccuracy\tmacro_precision\tmacro_recall\tmacro_f1"]
    for r in rows:
        lines.append(
            f"{r.count}\t{r.accuracy:.6f}\t{r.macro_precision:.6f}"
            f"\t{r.macro_recall:.6f}\t{r.macro_f1:.6f}"
        )
    return "\n".join(lines) + "\n"
