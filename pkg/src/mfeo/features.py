"""Geometric, LBP and HOG descriptors and the concatenated feature vector.

Conventions locked by the test-suite:

* LBP neighbours run clockwise from the top-left pixel; neighbour ``i``
  sets bit ``2**i``, and a tie with the centre counts as 1.
* HOG uses unsigned orientation in (-pi/2, pi/2], magnitude-weighted
  votes split linearly between the two nearest bin centres (cyclically),
  per-cell L2 normalisation and no block overlap.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

# (dy, dx), clockwise from top-left
LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))
LBP_BINS = 256
HOG_EPS = 1e-6
SEGMENTS = ("geo", "lbp", "hog")


@dataclass(frozen=True)
class LbpConfig:
    neighbors: int = 8

    def __post_init__(self):
        if self.neighbors != 8:
            raise ValueError("only 8-neighbour LBP is supported")


@dataclass(frozen=True)
class FeatureParams:
    eps: float = 0.05
    grid: int = 4
    hog_cell: int = 8
    hog_bins: int = 9


@dataclass(frozen=True)
class GradientField:
    gh: np.ndarray
    gv: np.ndarray
    magnitude: np.ndarray
    direction: np.ndarray


@dataclass(frozen=True)
class LandmarkMap:
    mask: np.ndarray
    distances: np.ndarray


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    length: int


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    schema: tuple[Segment, ...]

    def segment(self, name: str) -> np.ndarray:
        for seg in self.schema:
            if seg.name == name:
                return self.values[seg.offset:seg.offset + seg.length]
        raise KeyError(name)


# -- geometric ---------------------------------------------------------------

def euclidean_distance(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size == 0:
        raise ValueError("vectors must be non-empty")
    diff = y - x
    return math.sqrt(float(np.dot(diff, diff)))


def landmark_map(neutral: np.ndarray, expr: np.ndarray, eps: float = 0.05) -> LandmarkMap:
    """Per-pixel distance between the two frames; landmarks where it exceeds ``eps``.

    With a single intensity per pixel the Euclidean distance reduces to the
    absolute difference. ``eps=0`` marks every changed pixel.
    """
    neutral = np.asarray(neutral, dtype=np.float64)
    expr = np.asarray(expr, dtype=np.float64)
    if neutral.shape != expr.shape:
        raise ValueError(f"frame sizes differ: {neutral.shape} vs {expr.shape}")
    dist = np.abs(expr - neutral)
    return LandmarkMap(dist > eps, dist)


def _grid_edges(n: int, g: int) -> np.ndarray:
    return (np.arange(g + 1) * n) // g


def geometric_features(lmap: LandmarkMap, grid: int = 4) -> np.ndarray:
    """Summarise a landmark map as ``grid**2 + 2`` numbers.

    One entry per grid cell holds the landmark distance averaged over all
    of the cell's pixels (non-landmarks contribute 0). The last two entries
    are the fraction of landmark pixels and the mean distance over the
    landmark pixels (0 when there are none).
    """
    H, W = lmap.distances.shape
    if grid < 1:
        raise ValueError("grid must be >= 1")
    if grid > min(H, W):
        raise ValueError(f"grid {grid} larger than image side {min(H, W)}")
    kept = np.where(lmap.mask, lmap.distances, 0.0)
    ry, rx = _grid_edges(H, grid), _grid_edges(W, grid)
    cells = np.empty(grid * grid)
    for i in range(grid):
        for j in range(grid):
            cells[i * grid + j] = kept[ry[i]:ry[i + 1], rx[j]:rx[j + 1]].mean()
    n_marks = int(lmap.mask.sum())
    fraction = n_marks / lmap.mask.size
    mean_dist = float(kept.sum() / n_marks) if n_marks else 0.0
    return np.concatenate([cells, [fraction, mean_dist]])


# -- LBP -------------------------------------------------------------------

def lbp_code(patch, cfg: LbpConfig = LbpConfig()) -> int:
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape != (3, 3):
        raise ValueError(f"LBP patch must be 3x3, got {patch.shape}")
    center = patch[1, 1]
    code = 0
    for i, (dy, dx) in enumerate(LBP_OFFSETS):
        if patch[1 + dy, 1 + dx] - center >= 0:
            code |= 1 << i
    return code


def lbp_codes(img: np.ndarray) -> np.ndarray:
    """LBP code of every interior pixel, shape ``(H-2, W-2)``."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"image must be at least 3x3, got {img.shape}")
    H, W = img.shape
    center = img[1:H - 1, 1:W - 1]
    codes = np.zeros(center.shape, dtype=np.int64)
    for i, (dy, dx) in enumerate(LBP_OFFSETS):
        neigh = img[1 + dy:H - 1 + dy, 1 + dx:W - 1 + dx]
        codes |= (neigh - center >= 0).astype(np.int64) << i
    return codes


def lbp_histogram(img: np.ndarray, cfg: LbpConfig = LbpConfig()) -> np.ndarray:
    codes = lbp_codes(img)
    return np.bincount(codes.ravel(), minlength=LBP_BINS) / codes.size


# -- HOG -------------------------------------------------------------------

def _diff(img: np.ndarray, axis: int) -> np.ndarray:
    out = np.empty_like(img)
    a = np.moveaxis(img, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:-1] = (a[2:] - a[:-2]) / 2.0
    o[0] = a[1] - a[0]
    o[-1] = a[-1] - a[-2]
    return out


def orientation(gh: np.ndarray, gv: np.ndarray) -> np.ndarray:
    """arctan(gv/gh) with pi/2 for vertical gradients and 0 for flat pixels."""
    gh = np.asarray(gh, dtype=np.float64)
    gv = np.asarray(gv, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.arctan(gv / gh)
    d = np.where(gh == 0, np.where(gv == 0, 0.0, np.pi / 2), d)
    # arctan can round to exactly -pi/2; fold it onto the closed end
    return np.where(d <= -np.pi / 2, np.pi / 2, d)


def gradients(img: np.ndarray) -> GradientField:
    """Central differences inside, one-sided differences on the border."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"image must be at least 3x3, got {img.shape}")
    gh = _diff(img, axis=1)
    gv = _diff(img, axis=0)
    return GradientField(gh, gv, np.hypot(gh, gv), orientation(gh, gv))


def orientation_votes(direction, bins: int):
    """Lower bin index and upper-bin weight for each direction value."""
    width = np.pi / bins
    t = (np.asarray(direction) + np.pi / 2) / width - 0.5
    k0 = np.floor(t)
    frac = t - k0
    return k0.astype(np.int64) % bins, frac


def hog_descriptor(field: GradientField, cell: int = 8, bins: int = 9) -> np.ndarray:
    H, W = field.magnitude.shape
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if cell < 1 or H % cell or W % cell:
        raise ValueError(f"cell {cell} does not divide image size {H}x{W}")
    k0, frac = orientation_votes(field.direction, bins)
    k1 = (k0 + 1) % bins
    mag = field.magnitude
    cy, cx = H // cell, W // cell
    cell_id = (np.arange(H)[:, None] // cell) * cx + (np.arange(W)[None, :] // cell)
    hist = np.zeros(cy * cx * bins)
    np.add.at(hist, (cell_id * bins + k0).ravel(), (mag * (1 - frac)).ravel())
    np.add.at(hist, (cell_id * bins + k1).ravel(), (mag * frac).ravel())
    hist = hist.reshape(cy * cx, bins)
    norms = np.sqrt(np.sum(hist ** 2, axis=1, keepdims=True) + HOG_EPS ** 2)
    return (hist / norms).ravel()


# -- assembly --------------------------------------------------------------

def assemble(geo, lbp, hog) -> FeatureVector:
    parts = []
    schema = []
    offset = 0
    for name, seg in zip(SEGMENTS, (geo, lbp, hog)):
        seg = np.asarray(seg, dtype=np.float64).ravel()
        if seg.size == 0:
            raise ValueError(f"segment '{name}' is empty")
        if not np.all(np.isfinite(seg)):
            raise ValueError(f"segment '{name}' contains NaN or infinite values")
        parts.append(seg)
        schema.append(Segment(name, offset, seg.size))
        offset += seg.size
    return FeatureVector(np.concatenate(parts), tuple(schema))


def extract(neutral: np.ndarray, apex: np.ndarray, params: FeatureParams = FeatureParams()) -> FeatureVector:
    """Full descriptor for one neutral/apex pair.

    Geometric features compare the two frames; LBP and HOG describe the
    apex frame.
    """
    geo = geometric_features(landmark_map(neutral, apex, params.eps), params.grid)
    lbp = lbp_histogram(apex)
    hog = hog_descriptor(gradients(apex), params.hog_cell, params.hog_bins)
    return assemble(geo, lbp, hog)


def column_names(schema) -> list[str]:
    return [f"{seg.name}_{i}" for seg in schema for i in range(seg.length)]


def write_features_csv(path, sequence_ids, labels, vectors) -> None:
    """One row per sample: sequence_id, label, then every feature dimension.

    Values are written with 17 significant digits so the round trip through
    text is exact.
    """
    vectors = list(vectors)
    if not vectors:
        raise ValueError("no feature vectors to write")
    schema = vectors[0].schema
    for v in vectors:
        if v.schema != schema:
            raise ValueError("feature schema differs between samples")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence_id", "label"] + column_names(schema))
        for sid, lab, vec in zip(sequence_ids, labels, vectors):
            w.writerow([sid, int(lab)] + ["%.17g" % x for x in vec.values])


def _schema_from_header(names) -> tuple[Segment, ...]:
    schema = []
    offset = 0
    for seg_name in SEGMENTS:
        n = sum(1 for c in names if c.rsplit("_", 1)[0] == seg_name)
        expected = [f"{seg_name}_{i}" for i in range(n)]
        if names[offset:offset + n] != expected:
            raise ValueError(f"features header is malformed around segment '{seg_name}'")
        schema.append(Segment(seg_name, offset, n))
        offset += n
    if offset != len(names):
        raise ValueError("features header has unexpected columns")
    return tuple(schema)


def read_features_csv(path):
    """Inverse of :func:`write_features_csv`.

    Returns ``(sequence_ids, labels, X, schema)`` with ``X`` an
    ``(n_samples, n_features)`` float64 array.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["sequence_id", "label"]:
            raise ValueError("features CSV must start with sequence_id,label")
        schema = _schema_from_header(header[2:])
        ids, labels, rows = [], [], []
        for row in reader:
            ids.append(row[0])
            labels.append(int(row[1]))
            rows.append([float(x) for x in row[2:]])
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 2)
    return ids, np.array(labels, dtype=np.int64), X, schema
