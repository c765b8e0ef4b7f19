"""End-to-end command-line runs on a miniature corpus."""

import json
import socket
import struct
import subprocess
import sys
import time
from types import SimpleNamespace

import numpy as np
import pytest

from thermadapt.cli import main
from thermadapt.dataset_io import KIND_FRAMES, KIND_SAMPLES, read_dataset
from thermadapt.model import CLASS_NAMES, load_checkpoint


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Tiny generated corpus shared by the pipeline tests below."""
    root = tmp_path_factory.mktemp("cli")
    paths = SimpleNamespace(
        root=root,
        src_frames=root / "src_frames.bin",
        tgt_frames=root / "tgt_frames.bin",
        src_samples=root / "src_samples.bin",
        tgt_samples=root / "tgt_samples.bin",
    )
    assert main(["gen", "--domain", "source", "--per-class", "3",
                 "--seed", "1", "--out", str(paths.src_frames)]) == 0
    assert main(["gen", "--domain", "target", "--per-class", "6",
                 "--seed", "2", "--out", str(paths.tgt_frames)]) == 0
    assert main(["preprocess", "--in", str(paths.src_frames),
                 "--out", str(paths.src_samples)]) == 0
    assert main(["preprocess", "--in", str(paths.tgt_frames),
                 "--out", str(paths.tgt_samples)]) == 0
    return paths


@pytest.fixture(scope="module")
def checkpoint(corpus):
    path = corpus.root / "model.ckpt"
    log = corpus.root / "train.log"
    rc = main(["train",
               "--source", str(corpus.src_samples),
               "--target", str(corpus.tgt_samples),
               "--labeled-per-class", "1", "--test-count", "16",
               "--epochs", "1", "--batch-size", "8",
               "--grl", "constant", "--grl-value", "0.5",
               "--seed", "0", "--out", str(path), "--log", str(log)])
    assert rc == 0
    return SimpleNamespace(path=path, log=log)


def test_gen_writes_frames_and_repeats_per_seed(corpus, tmp_path):
    content = read_dataset(corpus.src_frames)
    assert content.kind == KIND_FRAMES
    assert len(content.frames) == 3 * 8 * 10
    assert content.domain == "source"
    assert content.frame_rate_hz == 20.0
    again = tmp_path / "again.bin"
    other = tmp_path / "other.bin"
    assert main(["gen", "--domain", "source", "--per-class", "3",
                 "--seed", "1", "--out", str(again)]) == 0
    assert main(["gen", "--domain", "source", "--per-class", "3",
                 "--seed", "9", "--out", str(other)]) == 0
    assert again.read_bytes() == corpus.src_frames.read_bytes()
    assert other.read_bytes() != corpus.src_frames.read_bytes()


def test_gen_rejects_bad_count(tmp_path, capsys):
    rc = main(["gen", "--per-class", "-1", "--out", str(tmp_path / "x.bin")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_preprocess_produces_labeled_samples(corpus):
    content = read_dataset(corpus.src_samples)
    assert content.kind == KIND_SAMPLES
    assert len(content.samples) == 24
    labels = sorted(int(s.label) for s in content.samples)
    assert labels == sorted(list(range(8)) * 3)
    assert all(s.domain_tag == "source" for s in content.samples)


def test_preprocess_rejects_sample_input(corpus, capsys):
    rc = main(["preprocess", "--in", str(corpus.src_samples),
               "--out", str(corpus.root / "nope.bin")])
    assert rc == 1
    assert "expected frames" in capsys.readouterr().err


def test_train_writes_checkpoint_and_log(checkpoint):
    model, meta = load_checkpoint(checkpoint.path)
    assert meta["epochs"] == 1
    assert meta["rng_seed"] == 0
    assert meta["grl_schedule"] == "constant"
    assert isinstance(meta["final_test_accuracy"], float)
    lines = checkpoint.log.read_text().strip().split("\n")
    assert len(lines) == 1
    record = json.loads(lines[0])
    assert record["epoch"] == 0
    assert record["grl_coefficient"] == 0.5
    assert record["test_accuracy"] is not None


def test_train_rejects_frames_file(corpus, capsys):
    rc = main(["train", "--source", str(corpus.src_frames),
               "--target", str(corpus.tgt_samples),
               "--epochs", "1", "--out", str(corpus.root / "no.ckpt")])
    assert rc == 1
    assert "expected samples" in capsys.readouterr().err


def test_missing_input_is_reported(tmp_path, capsys):
    rc = main(["predict", "--checkpoint", str(tmp_path / "void.ckpt"),
               "--in", str(tmp_path / "void.bin")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_eval_writes_report_files(corpus, checkpoint, capsys):
    out_dir = corpus.root / "report"
    rc = main(["eval", "--checkpoint", str(checkpoint.path),
               "--test", str(corpus.tgt_samples), "--out-dir", str(out_dir)])
    assert rc == 0
    assert "accuracy" in capsys.readouterr().out
    metrics = json.loads((out_dir / "metrics.json").read_text())
    for key in ("accuracy", "macro_f1", "confusion", "micro_auc"):
        assert key in metrics
    confusion = (out_dir / "confusion.tsv").read_text()
    assert confusion.startswith("true\\pred")
    assert (out_dir / "roc_micro.tsv").exists()
    assert list(out_dir.glob("roc_*.tsv")) and list(out_dir.glob("pr_*.tsv"))


def test_predict_lists_class_names(corpus, checkpoint, capsys):
    rc = main(["predict", "--checkpoint", str(checkpoint.path),
               "--in", str(corpus.src_samples), "--index", "0"])
    assert rc == 0
    line = capsys.readouterr().out.strip()
    idx, name = line.split("\t")
    assert idx == "0" and name in CLASS_NAMES

    rc = main(["predict", "--checkpoint", str(checkpoint.path),
               "--in", str(corpus.src_samples)])
    assert rc == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert len(lines) == 24
    assert all(row.split("\t")[1] in CLASS_NAMES for row in lines)

    rc = main(["predict", "--checkpoint", str(checkpoint.path),
               "--in", str(corpus.src_samples), "--index", "99"])
    assert rc == 1


def test_heatmap_exports_frames_and_samples(corpus, capsys):
    out = corpus.root / "frame.pgm"
    rc = main(["heatmap", "--in", str(corpus.src_frames), "--index", "5",
               "--out", str(out)])
    assert rc == 0
    assert out.read_bytes().startswith(b"P5\n8 8\n")
    assert (corpus.root / "frame.pgm.txt").exists()

    out2 = corpus.root / "sample.pgm"
    rc = main(["heatmap", "--in", str(corpus.src_samples), "--index", "0",
               "--out", str(out2)])
    assert rc == 0
    assert out2.read_bytes().startswith(b"P5\n32 20\n")

    rc = main(["heatmap", "--in", str(corpus.src_frames), "--index", "-1",
               "--out", str(out)])
    assert rc == 1


def test_sweep_labeled_cli(corpus, capsys):
    out = corpus.root / "sweep.tsv"
    rc = main(["sweep-labeled",
               "--source", str(corpus.src_samples),
               "--target", str(corpus.tgt_samples),
               "--test-count", "16", "--counts", "0,1",
               "--epochs", "1", "--batch-size", "8", "--seed", "0",
               "--out", str(out)])
    assert rc == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0].startswith("labeled_per_class\taccuracy")
    assert len(lines) == 3
    assert lines[1].split("\t")[0] == "0" and lines[2].split("\t")[0] == "1"


def test_compare_baselines_cli(corpus, capsys):
    out = corpus.root / "methods.tsv"
    rc = main(["compare-baselines",
               "--source", str(corpus.src_samples),
               "--target", str(corpus.tgt_samples),
               "--labeled-per-class", "1", "--test-count", "16",
               "--epochs", "1", "--batch-size", "8", "--knn-k", "1",
               "--seed", "0", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().strip().split("\n")
    assert [row.split("\t")[0] for row in lines] == [
        "method", "knn", "source-only", "dann-mode", "scdnn",
    ]


def test_relative_paths_resolve_against_data_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("THERMADAPT_DATA_DIR", str(tmp_path))
    rc = main(["gen", "--per-class", "1", "--seed", "0", "--out", "rel.bin"])
    assert rc == 0
    assert (tmp_path / "rel.bin").exists()


def test_unknown_command_exits_with_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_listen_ingests_udp_frames(tmp_path):
    out = tmp_path / "captured.bin"
    proc = subprocess.Popen(
        [sys.executable, "-m", "thermadapt", "listen", "--port", "0",
         "--count", "3", "--duration", "15", "--domain", "target",
         "--out", str(out)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, bufsize=1,
    )
    try:
        banner = proc.stdout.readline()
        assert banner.startswith("listening on 127.0.0.1:")
        port = int(banner.strip().rsplit(":", 1)[1])
        payload = struct.pack("<64h", *([80] * 64))  # 20.0 C everywhere
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
            for _ in range(3):
                sock.sendto(payload, ("127.0.0.1", port))
                time.sleep(0.05)
        assert proc.wait(timeout=20) == 0
    finally:
        proc.kill()
    content = read_dataset(out)
    assert content.kind == KIND_FRAMES
    assert content.domain == "target"
    assert len(content.frames) == 3
    frame, label = content.frames[0]
    assert label is None
    np.testing.assert_array_equal(frame.temperatures, np.full((8, 8), 20.0))
