"""Command-line entry point tying generation, preprocessing, training,
evaluation, and ingestion together.

Relative paths resolve against $THERMADAPT_DATA_DIR when it is set. Every
randomized subcommand takes --seed; reruns with the same seed reproduce
identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .baselines import fit_knn, knn_classify_batch, train_dann_mode, train_source_only
from .dataset_io import (
    KIND_FRAMES,
    KIND_SAMPLES,
    emit_heatmap,
    read_dataset,
    write_frames,
    write_samples,
)
from .errors import ConfigError, DatasetFormatError, ThermadaptError
from .metrics import compute_report, format_confusion, format_curve
from .model import (
    ActivityLabel,
    CLASS_NAMES,
    load_checkpoint,
    predict_batch,
    save_checkpoint,
)
from .preprocess import FilterSpec, preprocess_stream
from .synth import SOURCE_DOMAIN, TARGET_DOMAIN, DomainSpec, generate_dataset
from .train import (
    DataSplit,
    TrainConfig,
    evaluate,
    format_sweep,
    make_split,
    stack_samples,
    sweep_labeled,
    sweep_unlabeled,
    train_scdnn,
)


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    return Path(os.environ.get("THERMADAPT_DATA_DIR", ".")) / p


def _load_sample_file(path: str):
    content = read_dataset(_resolve(path))
    if content.kind != KIND_SAMPLES:
        raise DatasetFormatError(f"{path} holds {content.kind}, expected samples")
    return content


def _labeled_arrays(content) -> Tuple[np.ndarray, np.ndarray]:
    labeled = [s for s in content.samples if s.label is not None]
    if not labeled:
        raise DatasetFormatError("dataset holds no labeled samples")
    return stack_samples(labeled)


def _parse_counts(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigError(f"counts must be comma-separated integers, got {text!r}")


def _train_config(args, eval_every: Optional[int] = None) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        l2_lambda=args.l2,
        momentum=args.momentum,
        grl_schedule=args.grl,
        grl_constant=args.grl_value,
        rng_seed=args.seed,
        eval_every=args.eval_every if eval_every is None else eval_every,
    )


def _split_from_args(args) -> DataSplit:
    src_content = _load_sample_file(args.source)
    tgt_content = _load_sample_file(args.target)
    src_x, src_y = _labeled_arrays(src_content)
    tgt_x, tgt_y = _labeled_arrays(tgt_content)
    pool = len(tgt_x)
    few = args.labeled_per_class * len(CLASS_NAMES)
    unlabeled = args.unlabeled_count
    if unlabeled < 0:
        unlabeled = pool - few - args.test_count
        if unlabeled < 0:
            raise ConfigError(
                f"target pool of {pool} cannot cover {few} few-shot + "
                f"{args.test_count} test samples"
            )
    return make_split(
        src_x, src_y, tgt_x, tgt_y,
        labeled_per_class=args.labeled_per_class,
        unlabeled_count=unlabeled,
        test_count=args.test_count,
        seed=args.seed,
    )


def _add_train_flags(p: argparse.ArgumentParser, default_epochs: int = 1000) -> None:
    p.add_argument("--epochs", type=int, default=default_epochs)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--learning-rate", "--lr", type=float, default=0.001)
    p.add_argument("--l2", type=float, default=1e-4, help="weight penalty strength")
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--grl", choices=["sigmoid", "constant"], default="sigmoid",
                   help="reversal coefficient schedule")
    p.add_argument("--grl-value", type=float, default=1.0,
                   help="coefficient when --grl constant")
    p.add_argument("--eval-every", type=int, default=1)


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--source", required=True, help="labeled source samples file")
    p.add_argument("--target", required=True, help="target-domain samples file")
    p.add_argument("--labeled-per-class", type=int, default=4)
    p.add_argument("--unlabeled-count", type=int, default=-1,
                   help="-1 uses every target sample left after few-shot and test")
    p.add_argument("--test-count", type=int, default=200)


# ---------------------------------------------------------------------------
# Subcommand handlers.


def _cmd_gen(args) -> int:
    base = TARGET_DOMAIN if args.domain == "target" else SOURCE_DOMAIN
    domain = DomainSpec(
        name=args.domain,
        room_length_m=base.room_length_m if args.room_length is None else args.room_length,
        room_width_m=base.room_width_m if args.room_width is None else args.room_width,
        sensor_height_m=base.sensor_height_m if args.height is None else args.height,
        ambient_celsius=base.ambient_celsius if args.ambient is None else args.ambient,
        noise_std_celsius=base.noise_std_celsius if args.noise is None else args.noise,
    )
    streams = generate_dataset(
        domain, args.per_class, args.seed, frame_rate_hz=args.frame_rate
    )
    records = []
    for stream in streams:
        records.extend((frame, int(stream.label)) for frame in stream.frames)
    out = _resolve(args.out)
    write_frames(out, records, frame_rate_hz=args.frame_rate, domain=domain.name,
                 extra={"per_class": args.per_class, "seed": args.seed})
    print(
        f"wrote {len(records)} frames ({args.per_class} samples x "
        f"{len(CLASS_NAMES)} activities) to {out}"
    )
    return 0


def _cmd_preprocess(args) -> int:
    content = read_dataset(_resolve(args.input))
    if content.kind != KIND_FRAMES:
        raise DatasetFormatError(f"{args.input} holds {content.kind}, expected frames")
    spec = FilterSpec(
        order=args.filter_order,
        cutoff_hz=args.cutoff_hz,
        sample_rate_hz=content.frame_rate_hz,
    )
    domain_tag = content.domain if content.domain in ("source", "target") else "source"
    samples = []
    run: List = []
    run_label: Optional[int] = None
    prev_ts = None

    def flush():
        if run:
            label = None if run_label is None else ActivityLabel(run_label)
            samples.extend(
                preprocess_stream(run, spec, label=label, domain_tag=domain_tag)
            )

    for frame, label in content.frames:
        boundary = label != run_label or (prev_ts is not None and frame.timestamp_ms <= prev_ts)
        if boundary and run:
            flush()
            run = []
        run_label = label
        prev_ts = frame.timestamp_ms
        run.append(frame)
    flush()

    out = _resolve(args.out)
    write_samples(out, samples, frame_rate_hz=content.frame_rate_hz, domain=domain_tag)
    print(f"wrote {len(samples)} samples from {len(content.frames)} frames to {out}")
    return 0


def _write_train_log(path, history) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(record.to_json() + "\n")


def _cmd_train(args) -> int:
    split = _split_from_args(args)
    config = _train_config(args)
    model, history = train_scdnn(split, config)
    out = _resolve(args.out)
    final = history[-1] if history else None
    save_checkpoint(
        model, out,
        metadata={
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
            "l2_lambda": config.l2_lambda,
            "momentum": config.momentum,
            "grl_schedule": config.grl_schedule,
            "grl_constant": config.grl_constant,
            "rng_seed": config.rng_seed,
            "final_test_accuracy": final.test_accuracy if final else None,
        },
    )
    if args.log:
        _write_train_log(_resolve(args.log), history)
    if final is not None and final.test_accuracy is not None:
        print(f"trained {config.epochs} epochs; test accuracy {final.test_accuracy:.4f}")
    else:
        print(f"trained {config.epochs} epochs")
    print(f"checkpoint: {out}")
    return 0


def _cmd_sweep_unlabeled(args) -> int:
    counts = _parse_counts(args.counts)
    args.unlabeled_count = max(counts) if counts else 0
    split = _split_from_args(args)
    rows = sweep_unlabeled(counts, split, _train_config(args, eval_every=0))
    table = format_sweep(rows, count_header="unlabeled")
    out = _resolve(args.out)
    out.write_text(table)
    print(table, end="")
    print(f"table: {out}")
    return 0


def _cmd_sweep_labeled(args) -> int:
    counts = _parse_counts(args.counts)
    args.labeled_per_class = max(counts) if counts else 0
    split = _split_from_args(args)
    rows = sweep_labeled(counts, split, _train_config(args, eval_every=0))
    table = format_sweep(rows, count_header="labeled_per_class")
    out = _resolve(args.out)
    out.write_text(table)
    print(table, end="")
    print(f"table: {out}")
    return 0


def _cmd_eval(args) -> int:
    model, _ = load_checkpoint(_resolve(args.checkpoint))
    content = _load_sample_file(args.test)
    x, y = _labeled_arrays(content)
    report = evaluate(model, x, y)
    out_dir = _resolve(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    (out_dir / "confusion.tsv").write_text(
        format_confusion(report.confusion, report.class_names)
    )
    for name, curve in zip(report.class_names, report.per_class_roc):
        if curve is not None:
            (out_dir / f"roc_{name}.tsv").write_text(
                format_curve(curve.fpr, curve.tpr, header="fpr\ttpr")
            )
    if report.micro_roc is not None:
        (out_dir / "roc_micro.tsv").write_text(
            format_curve(report.micro_roc.fpr, report.micro_roc.tpr, header="fpr\ttpr")
        )
    for name, curve in zip(report.class_names, report.per_class_pr):
        if curve is not None:
            (out_dir / f"pr_{name}.tsv").write_text(
                format_curve(curve.recall, curve.precision, header="recall\tprecision")
            )
    print(
        f"accuracy {report.accuracy:.4f} macro_f1 {report.macro_f1:.4f} "
        f"micro_auc {report.micro_auc if report.micro_auc is None else round(report.micro_auc, 4)}"
    )
    print(f"reports: {out_dir}")
    return 0


def _cmd_predict(args) -> int:
    model, _ = load_checkpoint(_resolve(args.checkpoint))
    content = _load_sample_file(args.input)
    values, _ = stack_samples(content.samples)
    if args.index is not None:
        if not 0 <= args.index < len(values):
            raise ConfigError(f"index {args.index} outside 0..{len(values) - 1}")
        values = values[args.index : args.index + 1]
        offset = args.index
    else:
        offset = 0
    for i, pred in enumerate(predict_batch(values, model)):
        print(f"{offset + i}\t{ActivityLabel(int(pred)).name.lower()}")
    return 0


def _cmd_listen(args) -> int:
    from .wire import UdpListener

    collected = []
    listener = UdpListener(args.port, host=args.host)
    print(f"listening on {args.host}:{listener.port}", flush=True)
    stats = listener.run(
        collected.append, max_frames=args.count, duration_s=args.duration
    )
    out = _resolve(args.out)
    write_frames(
        out,
        [(frame, None) for frame in collected],
        frame_rate_hz=args.frame_rate,
        domain=args.domain,
    )
    print(f"received {stats.received} rejected {stats.rejected}; wrote {out}")
    return 0


def _cmd_heatmap(args) -> int:
    content = read_dataset(_resolve(args.input))
    records = content.frames if content.kind == KIND_FRAMES else content.samples
    if not 0 <= args.index < len(records):
        raise ConfigError(f"index {args.index} outside 0..{len(records) - 1}")
    obj = records[args.index]
    if content.kind == KIND_FRAMES:
        obj = obj[0]
    pgm, txt = emit_heatmap(obj, _resolve(args.out))
    print(f"wrote {pgm} and {txt}")
    return 0


def _cmd_compare_baselines(args) -> int:
    split = _split_from_args(args)
    config = _train_config(args, eval_every=0)
    rows = []

    knn = fit_knn(split.source_samples, split.source_labels, k=args.knn_k)
    knn_pred = knn_classify_batch(knn, split.test_samples)
    knn_report = compute_report(split.test_labels, knn_pred)
    rows.append(("knn", knn_report))

    source_model, _ = train_source_only(
        split.source_samples, split.source_labels, config
    )
    rows.append(("source-only", evaluate(source_model, split.test_samples, split.test_labels)))

    dann_model, _ = train_dann_mode(split, config)
    rows.append(("dann-mode", evaluate(dann_model, split.test_samples, split.test_labels)))

    scdnn_model, _ = train_scdnn(split, config)
    rows.append(("scdnn", evaluate(scdnn_model, split.test_samples, split.test_labels)))

    lines = ["method\taccuracy\tmacro_precision\tmacro_recall\tmacro_f1"]
    for name, report in rows:
        lines.append(
            f"{name}\t{report.accuracy:.6f}\t{report.macro_precision:.6f}"
            f"\t{report.macro_recall:.6f}\t{report.macro_f1:.6f}"
        )
    table = "\n".join(lines) + "\n"
    out = _resolve(args.out)
    out.write_text(table)
    print(table, end="")
    print(f"table: {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser.


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermadapt",
        description="Cross-domain activity recognition on 8x8 thermal frames",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic frame dataset")
    p.add_argument("--domain", choices=["source", "target"], default="source")
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--ambient", type=float, default=None)
    p.add_argument("--room-length", type=float, default=None)
    p.add_argument("--room-width", type=float, default=None)
    p.add_argument("--height", type=float, default=None, help="sensor height, m")
    p.add_argument("--noise", type=float, default=None, help="noise std, deg C")
    p.add_argument("--frame-rate", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("preprocess", help="frames file to samples file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--filter-order", type=int, default=2)
    p.add_argument("--cutoff-hz", type=float, default=2.0)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("train", help="train the adaptive classifier")
    _add_split_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="epoch log path (one JSON line each)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep-unlabeled", help="accuracy vs unlabeled-pool size")
    _add_split_flags(p)
    _add_train_flags(p, default_epochs=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--counts", default="1160,3480,5944")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep_unlabeled)

    p = sub.add_parser("sweep-labeled", help="metrics vs labeled samples per class")
    _add_split_flags(p)
    _add_train_flags(p, default_epochs=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--counts", default="0,2,4,6,8,10")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep_labeled)

    p = sub.add_parser("eval", help="full metric report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True, help="labeled samples file")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="classify samples from a file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--index", type=int, default=None)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("listen", help="ingest frames over UDP")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--count", type=int, default=None, help="stop after this many frames")
    p.add_argument("--duration", type=float, default=None, help="stop after seconds")
    p.add_argument("--frame-rate", type=float, default=20.0)
    p.add_argument("--domain", choices=["source", "target"], default="source")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_listen)

    p = sub.add_parser("heatmap", help="export one frame or sample as a graymap")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_heatmap)

    p = sub.add_parser("compare-baselines", help="KNN / source-only / adversarial table")
    _add_split_flags(p)
    _add_train_flags(p, default_epochs=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--knn-k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compare_baselines)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ThermadaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
