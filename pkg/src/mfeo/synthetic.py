"""Procedural stand-in for a facial-expression corpus.

Each sequence starts from a fixed smooth "face" and brightens a patch
whose location depends on the class, frame by frame, with light
salt-and-pepper noise on every frame. Used for tests and demos; the real
corpus is never redistributed.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from mfeo.dataset import write_frame
from mfeo.preprocess import salt_and_pepper

PATCH = 10


def neutral_face(size: int = 64) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    face = 0.35 + 0.25 * np.exp(-(((xx - 0.5) / 0.35) ** 2 + ((yy - 0.5) / 0.45) ** 2))
    return face + 0.05 * xx


def patch_origin(cls: int, n_classes: int, size: int) -> tuple[int, int]:
    """Top-left corner of the class patch; classes are spread along a diagonal."""
    step = (size - PATCH - 8) / max(n_classes - 1, 1)
    pos = int(round(4 + cls * step))
    return pos, size - PATCH - pos


def make_synthetic_dataset(root, n_sequences: int = 40, n_classes: int = 2, frames: int = 3,
                           size: int = 64, noise: float = 0.02, seed: int = 0,
                           class_names=None, jitter: int = 3):
    """Write ``root/<seq>/frame_*.png`` plus ``root/labels.csv``.

    Sequences cycle through the classes; every ``n_classes`` consecutive
    sequences share a subject. Returns the labels path.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    names = list(class_names or [f"class{i}" for i in range(n_classes)])
    base = neutral_face(size)
    rows = []
    for s in range(n_sequences):
        cls = s % n_classes
        seq_id = f"S{s:03d}"
        subject = f"P{s // n_classes:03d}"
        r0, c0 = patch_origin(cls, n_classes, size)
        r0 += int(rng.integers(-jitter, jitter + 1))
        c0 += int(rng.integers(-jitter, jitter + 1))
        offset = rng.uniform(-0.05, 0.05)
        seq_dir = root / seq_id
        seq_dir.mkdir(exist_ok=True)
        for f in range(frames):
            img = base + offset
            strength = 0.35 * f / max(frames - 1, 1)
            img[r0:r0 + PATCH, c0:c0 + PATCH] += strength
            img = salt_and_pepper(np.clip(img, 0.0, 1.0), noise, rng)
            write_frame(seq_dir / f"frame_{f:03d}.png", img)
        rows.append((seq_id, subject, names[cls]))
    labels = root / "labels.csv"
    with open(labels, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence_id", "subject_id", "label"])
        w.writerows(rows)
    return labels
