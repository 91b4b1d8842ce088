"""Loading labeled frame sequences from disk.

Expected layout::

    root/<sequence_id>/frame_*.png|pgm
    labels.csv    (header: sequence_id,subject_id,label)

The first frame of a sequence (lexicographic filename order) is taken as
the neutral face and the last as the apex expression.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from mfeo import DataError

FRAME_SUFFIXES = (".png", ".pgm")
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class EmotionClass:
    id: int
    name: str


@dataclass(frozen=True, eq=False)
class LabeledSample:
    sequence_id: str
    subject_id: str
    neutral: np.ndarray
    apex: np.ndarray
    label: EmotionClass

    def __post_init__(self):
        if self.neutral.shape != self.apex.shape:
            raise DataError(
                f"{self.sequence_id}: neutral {self.neutral.shape} and apex "
                f"{self.apex.shape} differ in size"
            )


@dataclass
class LoadResult:
    samples: list[LabeledSample]
    classes: list[EmotionClass]
    errors: list[tuple[str, str]] = field(default_factory=list)


def check_gray(img: np.ndarray) -> np.ndarray:
    """Validate a GrayImage: 2-D, at least 3x3, values in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"gray image must be 2-D, got shape {img.shape}")
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"gray image must be at least 3x3, got {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("gray image values must lie in [0, 1]")
    return img


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Luminance 0.299 R + 0.587 G + 0.114 B of an (H, W, 3) image in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {rgb.shape}")
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    gray = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    return np.clip(gray, 0.0, 1.0)


def to_grayscale_channels(r, g, b) -> np.ndarray:
    """Same as :func:`to_grayscale` but for three separate channel planes."""
    r, g, b = (np.asarray(c, dtype=np.float64) for c in (r, g, b))
    if not (r.shape == g.shape == b.shape):
        raise ValueError(f"channel sizes differ: {r.shape}, {g.shape}, {b.shape}")
    return to_grayscale(np.stack([r, g, b], axis=-1))


def resize_bilinear(img: np.ndarray, w: int, h: int) -> np.ndarray:
    """Bilinear resampling onto a ``h`` x ``w`` grid.

    Corner pixels are aligned (sample ``i`` maps to ``i * (H-1)/(h-1)``),
    so every output value is a convex combination of input values.
    """
    if w < 2 or h < 2:
        raise ValueError(f"target size must be at least 2x2, got {w}x{h}")
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape
    if (H, W) == (h, w):
        return img.copy()

    ys = np.linspace(0.0, H - 1, h)
    xs = np.linspace(0.0, W - 1, w)
    y0 = np.clip(np.floor(ys).astype(int), 0, max(H - 2, 0))
    x0 = np.clip(np.floor(xs).astype(int), 0, max(W - 2, 0))
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]

    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bottom = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    out = top * (1 - fy) + bottom * fy
    # guard against 1-ulp excursions from the blend arithmetic
    return np.clip(out, img.min(), img.max())


def read_frame(path) -> np.ndarray:
    """Read an 8-bit gray/RGB PNG or binary PGM into a [0, 1] gray image."""
    with Image.open(path) as im:
        if im.mode in ("L", "P", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        elif im.mode == "I;16" or im.mode == "I":
            raise DataError(f"{path}: only 8-bit frames are supported")
        else:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            arr = to_grayscale(rgb)
    return check_gray(arr)


def write_frame(path, img: np.ndarray) -> None:
    """Write a [0, 1] gray image as 8-bit PNG or PGM (by suffix)."""
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def list_frames(seq_dir: Path) -> list[Path]:
    return sorted(
        (p for p in seq_dir.iterdir() if p.is_file() and p.suffix.lower() in FRAME_SUFFIXES),
        key=lambda p: p.name,
    )


def read_labels(labels_path) -> list[dict]:
    labels_path = Path(labels_path)
    if not labels_path.is_file():
        raise DataError(f"labels file not found: {labels_path}")
    with open(labels_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"sequence_id", "subject_id", "label"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise DataError(f"{labels_path}: header must contain {sorted(required)}")
        rows = [
            {k: (row[k] or "").strip() for k in ("sequence_id", "subject_id", "label")}
            for row in reader
        ]
    if not rows:
        raise DataError("empty dataset")
    return rows


def build_classes(rows, class_names=None) -> list[EmotionClass]:
    names = list(class_names) if class_names else sorted({r["label"] for r in rows})
    if len(names) < 2:
        raise DataError(f"need at least 2 emotion classes, got {names}")
    if len(set(names)) != len(names):
        raise DataError(f"duplicate class names in {names}")
    return [EmotionClass(i, n) for i, n in enumerate(names)]


def _load_row(root: Path, row, by_name, size):
    seq = row["sequence_id"]
    if row["label"] not in by_name:
        raise DataError(f"label '{row['label']}' is not in the configured class set")
    seq_dir = root / seq
    if not seq_dir.is_dir():
        raise DataError(f"sequence directory missing: {seq_dir}")
    frames = list_frames(seq_dir)
    if len(frames) < 2:
        raise DataError(f"sequence has {len(frames)} frame(s), need at least 2")
    try:
        neutral = read_frame(frames[0])
        apex = read_frame(frames[-1])
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"unreadable frame: {exc}") from exc
    if size is not None:
        neutral = resize_bilinear(neutral, size[0], size[1])
        apex = resize_bilinear(apex, size[0], size[1])
    return LabeledSample(seq, row["subject_id"], neutral, apex, by_name[row["label"]])


def load_dataset(root_path, labels_path, class_names=None, size=None, threads=1) -> LoadResult:
    """Load every row of ``labels_path``.

    Rows that fail (missing directory, unreadable frame, unknown label) are
    collected in ``errors`` as ``(sequence_id, message)``; an empty labels
    file raises :class:`DataError`. Output order follows the labels file.
    ``size`` is an optional ``(width, height)`` resize target.
    """
    root = Path(root_path)
    rows = read_labels(labels_path)
    classes = build_classes(rows, class_names)
    by_name = {c.name: c for c in classes}

    def attempt(row):
        try:
            return _load_row(root, row, by_name, size), None
        except DataError as exc:
            return None, (row["sequence_id"], str(exc))

    if threads == 1:
        results = [attempt(r) for r in rows]
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as pool:
            results = list(pool.map(attempt, rows))

    samples = [s for s, _ in results if s is not None]
    errors = [e for _, e in results if e is not None]
    return LoadResult(samples, classes, errors)


def worker_count() -> int:
    """Thread cap from ``MFEO_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("MFEO_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise DataError(f"MFEO_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise DataError("MFEO_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)
