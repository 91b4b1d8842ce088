"""End-to-end pipeline: preprocess -> extract -> select -> train -> evaluate.

Every stage reads the previous stage's files from the output directory and
writes its own, so the stages can be run one at a time from the CLI or all
at once through :func:`run_pipeline`; both paths execute the same code.

Output directory layout::

    samples.csv, classes.txt, split.csv, load_errors.csv   preprocess
    frames/<sequence_id>_{neutral,apex}.npy                preprocess
    features.csv                                           extract
    mask.txt, mlo_history.csv                              select
    model.bin, loss_curve.csv                              train
    report.json, figures/*.png                             evaluate
    timings.json                                           every stage
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from mfeo import ConfigError, DataError, MfeoError, StageError
from mfeo import cnn, features, metrics, plotting, selection
from mfeo.config import PipelineConfig
from mfeo.dataset import load_dataset, worker_count
from mfeo.preprocess import adaptive_median_filter

log = logging.getLogger(__name__)

STAGES = ("preprocess", "extract", "select", "train", "evaluate")
FAILED_MARKER = "FAILED"
REPORT_VERSION = 1


def _map(fn, items):
    """Order-preserving map over worker threads."""
    items = list(items)
    n = worker_count()
    if n <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _require(out: Path, name: str, stage: str, upstream: str) -> Path:
    p = out / name
    if not p.exists():
        raise StageError(stage, f"missing {name}: run {upstream} first")
    return p


def _record_time(out: Path, stage: str, seconds: float):
    path = out / "timings.json"
    timings = json.loads(path.read_text()) if path.exists() else {}
    timings[stage] = seconds
    path.write_text(json.dumps(timings, indent=2) + "\n")


def split_sequences(sequence_ids, subject_ids, train_fraction: float, seed: int,
                    subject_disjoint: bool = True) -> list[str]:
    """Assign ``"train"``/``"test"`` to each sequence.

    With ``subject_disjoint`` the shuffle is over subjects, so a subject's
    sequences always land on the same side.
    """
    rng = np.random.default_rng(seed)
    units = sorted(set(subject_ids)) if subject_disjoint else list(sequence_ids)
    order = [units[i] for i in rng.permutation(len(units))]
    n_train = int(round(train_fraction * len(units)))
    if n_train >= len(units):
        raise DataError("empty test split")
    if n_train == 0:
        raise DataError("empty train split")
    train_units = set(order[:n_train])
    keys = subject_ids if subject_disjoint else sequence_ids
    return ["train" if k in train_units else "test" for k in keys]


# -- stages ------------------------------------------------------------------

def stage_preprocess(cfg: PipelineConfig, out: Path):
    d = cfg.data
    if not d.root or not d.labels:
        raise ConfigError("data.root and data.labels must be set")
    result = load_dataset(cfg.resolve(d.root), cfg.resolve(d.labels), d.classes or None,
                          size=(d.width, d.height), threads=worker_count())
    for seq, msg in result.errors:
        log.warning("skipping %s: %s", seq, msg)
    if not result.samples:
        raise DataError("no sequence could be loaded")
    for s in result.samples:
        if "/" in s.sequence_id or "\\" in s.sequence_id or s.sequence_id in ("", ".", ".."):
            raise DataError(f"sequence id {s.sequence_id!r} cannot be used as a file name")

    split = split_sequences([s.sequence_id for s in result.samples],
                            [s.subject_id for s in result.samples],
                            cfg.split.train_fraction, cfg.split.seed, cfg.split.subject_disjoint)

    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)

    def denoise(sample):
        return (adaptive_median_filter(sample.neutral, cfg.amf),
                adaptive_median_filter(sample.apex, cfg.amf))

    for s, (neutral, apex) in zip(result.samples, _map(denoise, result.samples)):
        np.save(frames_dir / f"{s.sequence_id}_neutral.npy", neutral)
        np.save(frames_dir / f"{s.sequence_id}_apex.npy", apex)

    _write_csv(out / "samples.csv", ["sequence_id", "subject_id", "label", "label_name"],
               [(s.sequence_id, s.subject_id, s.label.id, s.label.name) for s in result.samples])
    (out / "classes.txt").write_text("".join(f"{c.name}\n" for c in result.classes), encoding="utf-8")
    _write_csv(out / "split.csv", ["sequence_id", "subject_id", "split"],
               [(s.sequence_id, s.subject_id, part) for s, part in zip(result.samples, split)])
    _write_csv(out / "load_errors.csv", ["sequence_id", "error"], result.errors)


def stage_extract(cfg: PipelineConfig, out: Path):
    samples = _read_csv(_require(out, "samples.csv", "extract", "preprocess"))
    frames_dir = _require(out, "frames", "extract", "preprocess")

    def describe(row):
        sid = row["sequence_id"]
        try:
            neutral = np.load(frames_dir / f"{sid}_neutral.npy")
            apex = np.load(frames_dir / f"{sid}_apex.npy")
        except FileNotFoundError:
            raise StageError("extract", f"denoised frames for {sid} missing: run preprocess first")
        return features.extract(neutral, apex, cfg.features)

    vectors = _map(describe, samples)
    features.write_features_csv(out / "features.csv", [r["sequence_id"] for r in samples],
                                [int(r["label"]) for r in samples], vectors)


def _train_rows(cfg, out, stage):
    ids, labels, X, schema = features.read_features_csv(
        _require(out, "features.csv", stage, "extract"))
    split = {r["sequence_id"]: r["split"] for r in _read_csv(_require(out, "split.csv", stage, "preprocess"))}
    missing = [i for i in ids if i not in split]
    if missing:
        raise StageError(stage, f"sequences {missing[:3]} have no split assignment")
    part = np.array([split[i] for i in ids])
    return ids, labels, X, part


def stage_select(cfg: PipelineConfig, out: Path):
    _, labels, X, part = _train_rows(cfg, out, "select")
    train = part == "train"
    s = cfg.select
    result = selection.select_features(X[train], labels[train], cfg.mlo,
                                       penalty=s.penalty, folds=s.folds, threshold=s.threshold)
    selection.write_mask(out / "mask.txt", result.mask)
    result.history.to_csv(out / "mlo_history.csv")


def _masked(cfg, out, stage):
    ids, labels, X, part = _train_rows(cfg, out, stage)
    mask = selection.read_mask(_require(out, "mask.txt", stage, "select"), X.shape[1])
    side = cfg.cnn.side
    if mask.sum() > side * side:
        raise StageError(stage, f"{int(mask.sum())} selected features exceed the "
                                f"{side}x{side} CNN input; lower the feature count")
    return ids, labels, X[:, mask], part, mask


def _classes(out, stage):
    path = _require(out, "classes.txt", stage, "preprocess")
    return [line for line in path.read_text(encoding="utf-8").splitlines() if line]


def stage_train(cfg: PipelineConfig, out: Path):
    _, labels, Xm, part, _ = _masked(cfg, out, "train")
    train = part == "train"
    model = cnn.init_model(len(_classes(out, "train")), cfg.cnn.maps, cfg.cnn.side,
                           seed=cfg.train.seed, scale=cfg.train.weight_init_scale)
    model, losses = cnn.train(model, Xm[train], labels[train], cfg.train)
    cnn.save_model(model, out / "model.bin")
    _write_csv(out / "loss_curve.csv", ["epoch", "loss"],
               [(e, "%.17g" % v) for e, v in enumerate(losses)])


def stage_evaluate(cfg: PipelineConfig, out: Path) -> dict:
    ids, labels, Xm, part, mask = _masked(cfg, out, "evaluate")
    model = cnn.load_model(_require(out, "model.bin", "evaluate", "train"))
    names = _classes(out, "evaluate")
    test = part == "test"
    if not test.any():
        raise DataError("empty test split")
    probs = cnn.predict_proba(model, Xm[test])
    pred = np.argmax(probs, axis=1)
    truth = labels[test]
    cm = metrics.confusion_matrix(pred, truth, len(names))
    rep = metrics.macro_report(pred, truth, range(len(names)))

    hist = _read_csv(_require(out, "mlo_history.csv", "evaluate", "select"))
    losses = [float(r["loss"]) for r in _read_csv(_require(out, "loss_curve.csv", "evaluate", "train"))]
    best = [float(r["best_fitness"]) for r in hist]
    mean = [float(r["mean_fitness"]) for r in hist]
    sizes = [int(r["mask_size"]) if r["mask_size"] else None for r in hist]
    timings_path = out / "timings.json"

    report = {
        "report_version": REPORT_VERSION,
        "config": cfg.echo(),
        "classes": names,
        "split": {
            "seed": cfg.split.seed,
            "train_fraction": cfg.split.train_fraction,
            "subject_disjoint": cfg.split.subject_disjoint,
            "n_train": int(np.sum(part == "train")),
            "n_test": int(test.sum()),
            "test_sequences": [i for i, t in zip(ids, test) if t],
        },
        "selection": {
            "n_features": int(mask.size),
            "mask_size": int(mask.sum()),
            "selected_indices": [int(i) for i in np.flatnonzero(mask)],
        },
        "mlo": {
            "iterations": len(best) - 1,
            "initial_best_fitness": best[0],
            "final_best_fitness": best[-1],
            "best_fitness": best,
            "mean_fitness": mean,
            "mask_size": sizes,
        },
        "cnn": {"epochs": len(losses), "final_loss": losses[-1] if losses else None, "loss_curve": losses},
        "confusion_matrix": cm.tolist(),
        "metrics": rep.to_dict(names),
        "predictions": {i: names[p] for i, p in zip([i for i, t in zip(ids, test) if t], pred)},
        "timings": json.loads(timings_path.read_text()) if timings_path.exists() else {},
    }
    if cfg.output.figures:
        fig_dir = out / "figures"
        plotting.plot_convergence(best, mean, fig_dir / "convergence.png", sizes)
        plotting.plot_loss_curve(losses, fig_dir / "loss_curve.png")
        plotting.plot_confusion(cm, names, fig_dir / "confusion.png")
    return report


def write_report(report: dict, path):
    text = json.dumps(report, indent=2, ensure_ascii=False, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


STAGE_FUNCS = {
    "preprocess": stage_preprocess,
    "extract": stage_extract,
    "select": stage_select,
    "train": stage_train,
    "evaluate": stage_evaluate,
}


def run_stage(name: str, cfg: PipelineConfig, out=None):
    """Run one stage, record its wall-clock time and flag failures on disk.

    Config and data errors propagate unchanged; anything else is wrapped
    in :class:`StageError`. A failed stage leaves a ``FAILED`` marker
    naming it in the output directory.
    """
    out = Path(out) if out is not None else cfg.resolve(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / FAILED_MARKER
    t0 = time.perf_counter()
    try:
        result = STAGE_FUNCS[name](cfg, out)
    except (ConfigError, DataError, StageError) as exc:
        marker.write_text(f"{name}: {exc}\n", encoding="utf-8")
        raise
    except MfeoError as exc:
        marker.write_text(f"{name}: {exc}\n", encoding="utf-8")
        raise StageError(name, exc) from exc
    except Exception as exc:
        marker.write_text(f"{name}: {exc}\n", encoding="utf-8")
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
    _record_time(out, name, time.perf_counter() - t0)
    if name == "evaluate":
        result["timings"] = json.loads((out / "timings.json").read_text())
        write_report(result, out / "report.json")
    if marker.exists() and marker.read_text(encoding="utf-8").startswith(f"{name}:"):
        marker.unlink()
    log.info("%s done in %.2fs", name, time.perf_counter() - t0)
    return result


def run_pipeline(cfg: PipelineConfig, out=None) -> dict:
    out = Path(out) if out is not None else cfg.resolve(cfg.output.dir)
    if (out / "timings.json").exists():
        (out / "timings.json").unlink()
    report = None
    for name in STAGES:
        report = run_stage(name, cfg, out)
    return report


def recompute_metrics(report: dict) -> dict:
    """Metrics implied by the report's stored confusion matrix."""
    names = report["classes"]
    return metrics.report_from_confusion(np.array(report["confusion_matrix"])).to_dict(names)
