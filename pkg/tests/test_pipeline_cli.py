import csv
import json
import shutil

import numpy as np
import pytest

from pipeline_util import artifact_bytes, make_workspace
from mfeo import ConfigError, DataError, StageError
from mfeo.cli import main
from mfeo.config import PipelineConfig, dump_config, load_config, parse_config
from mfeo.dataset import load_dataset
from mfeo.pipeline import STAGES, recompute_metrics, run_pipeline, run_stage, split_sequences
from mfeo.synthetic import PATCH, make_synthetic_dataset, patch_origin


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    """One complete pipeline run shared by the read-only checks."""
    root = tmp_path_factory.mktemp("run")
    cfg_path = make_workspace(root)
    cfg = load_config(cfg_path)
    report = run_pipeline(cfg)
    return cfg, root / "out", report


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_synthetic_classes_are_pixel_separable(tmp_path):
    labels = make_synthetic_dataset(tmp_path, n_sequences=40, seed=0)
    res = load_dataset(tmp_path, labels)
    for s in res.samples:
        diff = s.apex - s.neutral
        brightening = []
        for c in range(2):
            r0, c0 = patch_origin(c, 2, 64)
            # jitter moves the patch by at most 3 pixels, the core stays covered
            brightening.append(diff[r0 + 3:r0 + PATCH - 3, c0 + 3:c0 + PATCH - 3].mean())
        assert int(np.argmax(brightening)) == s.label.id


def test_pipeline_accuracy(finished):
    _, out, report = finished
    assert report["metrics"]["overall_accuracy"] >= 0.9
    for name in ("samples.csv", "classes.txt", "split.csv", "features.csv", "mask.txt",
                 "mlo_history.csv", "model.bin", "loss_curve.csv", "report.json",
                 "figures/convergence.png", "figures/loss_curve.png", "figures/confusion.png"):
        assert (out / name).is_file(), name
    assert not (out / "FAILED").exists()


def test_report_contents(finished):
    cfg, out, report = finished
    on_disk = json.loads((out / "report.json").read_text())
    assert set(on_disk["timings"]) == set(STAGES)
    assert on_disk["config"] == cfg.echo() and "dir" not in on_disk["config"]["output"]
    assert on_disk["selection"]["mask_size"] == len(on_disk["selection"]["selected_indices"])
    assert recompute_metrics(on_disk) == on_disk["metrics"]
    assert all(b >= a for a, b in zip(on_disk["mlo"]["best_fitness"], on_disk["mlo"]["best_fitness"][1:]))
    assert len(on_disk["cnn"]["loss_curve"]) == cfg.train.epochs


def test_history_csv_format(finished):
    cfg, out, _ = finished
    rows = _read(out / "mlo_history.csv")
    assert list(rows[0]) == ["iteration", "best_fitness", "mean_fitness", "mask_size"]
    assert [int(r["iteration"]) for r in rows] == list(range(cfg.mlo.max_iters + 1))
    mask = [int(x) for x in (out / "mask.txt").read_text().split()]
    assert int(rows[-1]["mask_size"]) == len(mask)


def test_subject_disjoint_split(finished):
    _, out, _ = finished
    rows = _read(out / "split.csv")
    train = {r["subject_id"] for r in rows if r["split"] == "train"}
    test = {r["subject_id"] for r in rows if r["split"] == "test"}
    assert train and test and not train & test


def test_reruns_are_byte_identical(finished, tmp_path):
    cfg, out, _ = finished
    run_pipeline(cfg, tmp_path / "again")
    assert artifact_bytes(out) == artifact_bytes(tmp_path / "again")


def test_staged_run_equals_one_shot(finished, tmp_path):
    cfg, out, _ = finished
    staged = tmp_path / "staged"
    for name in STAGES:
        assert main(["--verbose", name, "--config", str(cfg.base_dir) + "/cfg.txt", "--out", str(staged)]) == 0
    assert artifact_bytes(out) == artifact_bytes(staged)


def test_select_replay(finished, tmp_path):
    cfg, out, _ = finished
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    run_stage("select", cfg, copy)
    assert (copy / "mask.txt").read_bytes() == (out / "mask.txt").read_bytes()


def test_no_test_leakage(finished, tmp_path):
    cfg, out, _ = finished
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    test_ids = {r["sequence_id"] for r in _read(out / "split.csv") if r["split"] == "test"}
    lines = (copy / "features.csv").read_text().splitlines(keepends=True)
    kept = [lines[0]] + [ln for ln in lines[1:] if ln.split(",", 1)[0] not in test_ids]
    assert len(kept) == len(lines) - len(test_ids)
    (copy / "features.csv").write_text("".join(kept))
    run_stage("select", cfg, copy)
    assert (copy / "mask.txt").read_bytes() == (out / "mask.txt").read_bytes()
    run_stage("train", cfg, copy)
    assert (copy / "model.bin").read_bytes() == (out / "model.bin").read_bytes()


def test_seed_override_changes_split(finished, tmp_path):
    cfg, out, _ = finished
    cfg_file = str(cfg.base_dir) + "/cfg.txt"
    assert main(["preprocess", "--config", cfg_file, "--out", str(tmp_path / "a"), "--seed", "0"]) == 0
    assert main(["preprocess", "--config", cfg_file, "--out", str(tmp_path / "b"), "--seed", "5", "-v"]) == 0
    assert (tmp_path / "a" / "split.csv").read_bytes() == (out / "split.csv").read_bytes()
    assert (tmp_path / "b" / "split.csv").read_bytes() != (out / "split.csv").read_bytes()
    seeded = cfg.with_seed(5)
    assert seeded.split.seed == seeded.mlo.seed == seeded.train.seed == 5


def test_thread_count_does_not_change_results(finished, tmp_path, monkeypatch):
    cfg, out, _ = finished
    monkeypatch.setenv("MFEO_THREADS", "1")
    run_stage("preprocess", cfg, tmp_path / "one")
    run_stage("extract", cfg, tmp_path / "one")
    monkeypatch.setenv("MFEO_THREADS", "4")
    run_stage("preprocess", cfg, tmp_path / "four")
    run_stage("extract", cfg, tmp_path / "four")
    for name in ("features.csv", "samples.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "four" / name).read_bytes()
        assert (tmp_path / "one" / name).read_bytes() == (out / name).read_bytes()


def test_empty_test_split(tmp_path, capsys):
    cfg = make_workspace(tmp_path, n_sequences=12, extra="split.train_fraction = 1.0\nsplit.test_fraction = 0.0\n")
    assert main(["run", "--config", str(cfg)]) == 3
    assert "empty test split" in capsys.readouterr().err
    assert (tmp_path / "out" / "FAILED").read_text().startswith("preprocess:")


def test_extract_without_preprocess(tmp_path, capsys):
    cfg = make_workspace(tmp_path, n_sequences=4)
    assert main(["extract", "--config", str(cfg)]) == 4
    assert "run preprocess first" in capsys.readouterr().err
    with pytest.raises(StageError, match="run preprocess first"):
        run_stage("extract", load_config(cfg), tmp_path / "elsewhere")


def test_failed_marker_cleared_on_success(tmp_path):
    cfg = load_config(make_workspace(tmp_path, n_sequences=12))
    with pytest.raises(StageError):
        run_stage("extract", cfg)
    assert (tmp_path / "out" / "FAILED").exists()
    run_stage("preprocess", cfg)
    run_stage("extract", cfg)
    assert not (tmp_path / "out" / "FAILED").exists()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("mlo.pop_sise = 10\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.txt")]) == 2
    for text in ("train.epochs = many\n", "nosection = 1\n", "split.train_fraction = 0.5\n",
                 "mlo.dim = 4\n", "cnn.maps = 1\ncnn.maps = 2\n", "features.hog_cell = 7\n",
                 "amf.w_max = 4\n"):
        with pytest.raises(ConfigError):
            parse_config(text)


def test_data_errors_exit_3(tmp_path):
    (tmp_path / "labels.csv").write_text("sequence_id,subject_id,label\n")
    (tmp_path / "cfg.txt").write_text("data.root = .\ndata.labels = labels.csv\n")
    assert main(["preprocess", "--config", str(tmp_path / "cfg.txt")]) == 3


def test_config_round_trip():
    cfg = parse_config("train.epochs = 7\ndata.classes = anger, fear\noutput.figures = false\n# note\n")
    assert cfg.train.epochs == 7 and cfg.data.classes == ("anger", "fear") and not cfg.output.figures
    again = parse_config(dump_config(cfg))
    assert again.echo() == cfg.echo()
    assert parse_config(dump_config(PipelineConfig())).echo() == PipelineConfig().echo()


def test_split_sequences():
    subjects = ["a", "a", "b", "b", "c", "d", "e"]
    ids = [f"s{i}" for i in range(7)]
    parts = split_sequences(ids, subjects, 0.6, seed=1)
    by_subject = {}
    for s, p in zip(subjects, parts):
        by_subject.setdefault(s, set()).add(p)
    assert all(len(v) == 1 for v in by_subject.values())
    assert split_sequences(ids, subjects, 0.6, seed=1) == parts
    with pytest.raises(DataError, match="empty test split"):
        split_sequences(ids, subjects, 1.0, seed=0)
    with pytest.raises(DataError, match="empty train split"):
        split_sequences(ids, subjects, 0.0, seed=0)


def test_cli_synth_and_default_config(tmp_path, capsys):
    assert main(["synth", str(tmp_path / "d"), "--sequences", "6", "--classes", "3"]) == 0
    assert len((tmp_path / "d" / "labels.csv").read_text().splitlines()) == 7
    capsys.readouterr()
    assert main(["default-config"]) == 0
    text = capsys.readouterr().out
    assert "mlo.pop_size = 50" in text and "mlo.dim" not in text
