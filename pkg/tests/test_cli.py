import json
import os
from pathlib import Path

import numpy as np
import pytest

from im2markup import training
from im2markup.cli import main
from im2markup.dataset import load_image, read_manifest
from im2markup.errors import NumericError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TINY = str(CONFIGS / "tiny.yaml")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def last_json(out):
    """Parse the trailing pretty-printed JSON object of a command's stdout."""
    return json.loads(out[out.index("{"):])


def test_dataset_gen_is_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        code, out, _ = run(capsys, "dataset", "gen", "--n", 20, "--seed", 7, "--out", tmp_path / name)
        assert code == 0 and last_json(out)["written"] == 20
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) == 22
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_dataset_stats_counts_fixture(tmp_path, capsys):
    run(capsys, "dataset", "gen", "--n", 15, "--seed", 1, "--out", tmp_path)
    records = read_manifest(tmp_path / "manifest.jsonl")
    code, out, _ = run(capsys, "dataset", "stats", "--manifest", tmp_path / "manifest.jsonl",
                       "--out-file", tmp_path / "stats.json")
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert code == 0 and stats == last_json(out)
    lengths = [len(r.tokens.split()) for r in records]
    assert stats["samples"] == 15 and stats["tokens"] == sum(lengths)
    assert sum(stats["length_histogram"].values()) == 15
    assert stats["vocab_size"] == 3 + len({t for r in records for t in r.tokens.split()})


def test_dataset_filter_writes_filtered_manifest(tmp_path, capsys):
    run(capsys, "dataset", "gen", "--n", 10, "--seed", 2, "--out", tmp_path)
    code, out, _ = run(capsys, "dataset", "filter", "--manifest", tmp_path / "manifest.jsonl",
                       "--max-tokens", 3, "--out", tmp_path / "f")
    report = last_json(out)["filter"]
    kept = read_manifest(tmp_path / "f" / "filtered.jsonl")
    assert code == 0 and report["kept"] == len(kept)
    assert all(len(r.tokens.split()) <= 3 for r in kept)
    assert all(os.path.exists(r.image) for r in kept)


def test_evaluate_identical_files(tmp_path, capsys):
    (tmp_path / "h.txt").write_text("a b c\nx ^ { 2 }\n")
    code, out, _ = run(capsys, "evaluate", "--hyp-file", tmp_path / "h.txt",
                       "--ref-file", tmp_path / "h.txt", "--out", tmp_path / "score.json")
    report = json.loads((tmp_path / "score.json").read_text())
    assert code == 0 and report["bleu"] == 1.0 and report["mean_edit_distance"] == 0.0


def test_evaluate_with_image_dirs(tmp_path, capsys):
    from im2markup.dataset import save_image
    img = np.full((20, 30), 255, np.uint8)
    img[5:10, 5:20] = 0
    for d in ("a", "b"):
        (tmp_path / d).mkdir()
        save_image(tmp_path / d / "0.png", img)
    (tmp_path / "h.txt").write_text("a\n")
    code, out, _ = run(capsys, "evaluate", "--hyp-file", tmp_path / "h.txt", "--ref-file",
                       tmp_path / "h.txt", "--image-dir-a", tmp_path / "a", "--image-dir-b", tmp_path / "b")
    assert code == 0 and last_json(out)["visual_match_rate"] == 1.0


def test_config_error_reports_line(tmp_path, capsys):
    (tmp_path / "bad.yaml").write_text("model:\n  preset: tiny\ntrain:\n  lr: 1e-3\n  bogus: 1\n")
    code, _, err = run(capsys, "dataset", "gen", "--n", 1, "--config", tmp_path / "bad.yaml",
                       "--out", tmp_path / "o")
    assert code == 1 and "line 5" in err and "train.bogus" in err


def test_unwritable_output_exits_2(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = run(capsys, "dataset", "gen", "--n", 1, "--out", blocker / "sub")
    assert code == 2 and "cannot write" in err


def test_missing_input_exits_1(tmp_path, capsys):
    code, _, _ = run(capsys, "dataset", "stats", "--manifest", tmp_path / "nope.jsonl")
    assert code == 1


def test_bad_thread_env_exits_1(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("IM2MARKUP_THREADS", "many")
    (tmp_path / "h.txt").write_text("a\n")
    code, _, err = run(capsys, "evaluate", "--hyp-file", tmp_path / "h.txt", "--ref-file", tmp_path / "h.txt")
    assert code == 1 and "IM2MARKUP_THREADS" in err
    monkeypatch.setenv("IM2MARKUP_THREADS", "1")
    assert run(capsys, "evaluate", "--hyp-file", tmp_path / "h.txt", "--ref-file", tmp_path / "h.txt")[0] == 0


def test_numeric_abort_exits_3(tmp_path, capsys, monkeypatch):
    def broken(*_):
        raise NumericError("softmax")

    monkeypatch.setattr(training, "objective", broken)
    code, _, err = run(capsys, "train", "--fixture", "overfit", "--max-steps", 2, "--out", tmp_path)
    assert code == 3 and "softmax" in err


def test_train_infer_heatmap_pipeline(tmp_path, capsys):
    data, runs = tmp_path / "data", tmp_path / "run"
    assert run(capsys, "dataset", "gen", "--config", TINY, "--n", 24, "--seed", 3, "--out", data)[0] == 0
    code, out, _ = run(capsys, "train", "--config", TINY, "--manifest", data / "manifest.jsonl",
                       "--max-steps", 3, "--seed", 3, "--out", runs)
    summary = last_json(out)
    assert code == 0 and summary["steps"] == 3
    for name in ("best.ckpt", "final.ckpt", "vocab.txt", "train_log.jsonl"):
        assert (runs / name).exists()
    assert len((runs / "train_log.jsonl").read_text().splitlines()) == 3

    image = read_manifest(data / "manifest.jsonl")[0].image
    code, out, _ = run(capsys, "infer", "--checkpoint", runs / "best.ckpt", "--image", image,
                       "--beam-width", 2, "--max-len", 5, "--emit-attention", tmp_path / "att",
                       "--out", tmp_path / "pred.txt")
    entry = json.loads(out.splitlines()[0])
    assert code == 0 and (tmp_path / "pred.txt").read_text().rstrip("\n") == entry["prediction"]
    trace = Path(entry["trace"])
    assert trace.exists()

    code, out, _ = run(capsys, "heatmap", "--trace", trace, "--image", image,
                       "--checkpoint", runs / "best.ckpt", "--out", tmp_path / "hm")
    written = last_json(out)["written"]
    assert code == 0 and written[-1].endswith("strip.png")
    assert all(os.path.exists(p) for p in written)


def test_heatmap_rejects_mismatched_trace(tmp_path, capsys):
    from im2markup.attention import write_trace
    from im2markup.dataset import save_image
    write_trace(tmp_path / "t.jsonl", ["a"], [[0.2] * 5])
    save_image(tmp_path / "i.png", np.full((32, 64), 255, np.uint8))
    code, _, err = run(capsys, "heatmap", "--trace", tmp_path / "t.jsonl", "--image", tmp_path / "i.png",
                       "--config", TINY, "--out", tmp_path / "hm")
    assert code == 1 and "1x2 grid" in err
