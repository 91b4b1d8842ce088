"""Wrapper feature selection driven by the lion optimizer."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from mfeo.mlo import BestHistory, MloConfig, run


@dataclass(frozen=True)
class SelectionResult:
    mask: np.ndarray
    history: BestHistory

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


def binarize(position, threshold: float = 0.5, lo=0.0, hi=1.0) -> np.ndarray:
    """Boolean mask of coordinates whose bound-normalised value exceeds ``threshold``.

    An empty mask is never returned: the largest coordinate (first on
    ties) is switched on instead.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    position = np.asarray(position, dtype=np.float64)
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), position.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), position.shape)
    mask = (position - lo) / (hi - lo) > threshold
    if not mask.any():
        mask[int(np.argmax(position))] = True
    return mask


def stratified_folds(labels, k: int, rng) -> np.ndarray:
    """Fold id per sample; each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    folds = np.empty(len(labels), dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = np.arange(len(idx)) % k
    return folds


def knn1_accuracy(X, y, folds, mask) -> float:
    """Cross-validated accuracy of 1-nearest-neighbour on the masked columns.

    Every sample is classified by its nearest neighbour among the samples
    of the other folds; distance ties go to the lower sample index.
    """
    folds = np.asarray(folds)
    Xm = X[:, mask]
    sq = (Xm * Xm).sum(axis=1)
    d = sq[:, None] - 2.0 * (Xm @ Xm.T) + sq[None, :]
    d[folds[:, None] == folds[None, :]] = np.inf
    has_train = np.isfinite(d).any(axis=1)
    pred = y[np.argmin(d, axis=1)]
    return int(np.sum((pred == y) & has_train)) / len(y)


class WrapperFitness:
    """Fitness of a position: CV accuracy minus ``penalty * |mask| / d``.

    Accuracies are cached per mask, since many positions decode to the
    same subset.
    """

    def __init__(self, X, y, folds=3, penalty=0.01, threshold=0.5, seed=0):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        self.X = (X - mu) / sd
        self.y = y
        self.penalty = penalty
        self.threshold = threshold
        self.folds = stratified_folds(y, folds, np.random.default_rng(seed))
        self._cache = {}

    def mask(self, position) -> np.ndarray:
        return binarize(position, self.threshold)

    def accuracy(self, mask) -> float:
        key = np.packbits(mask).tobytes()
        acc = self._cache.get(key)
        if acc is None:
            acc = self._cache[key] = knn1_accuracy(self.X, self.y, self.folds, mask)
        return acc

    def __call__(self, position) -> float:
        m = self.mask(position)
        return self.accuracy(m) - self.penalty * m.sum() / m.size


def select_features(X, y, cfg: MloConfig | None = None, penalty: float = 0.01,
                    folds: int = 3, threshold: float = 0.5) -> SelectionResult:
    """Search for a feature subset that maximises 1-NN cross-validated accuracy.

    ``cfg.dim`` and the bounds are overridden to match ``X`` and the unit
    box. Only the rows passed in are ever looked at, so pass training rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n_samples, n_features) with one label per row")
    if len(y) < 10:
        raise ValueError(f"need at least 10 training samples, got {len(y)}")
    if len(np.unique(y)) < 2:
        raise ValueError("need at least 2 classes in the training set")
    d = X.shape[1]
    cfg = replace(cfg or MloConfig(dim=d), dim=d, lo=0.0, hi=1.0)
    fitness = WrapperFitness(X, y, folds, penalty, threshold, seed=cfg.seed)
    hist = run(cfg, fitness, mask_size=lambda p: fitness.mask(p).sum())
    return SelectionResult(fitness.mask(hist.gbest_position), hist)


def write_mask(path, mask) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{i}\n" for i in np.flatnonzero(mask))


def read_mask(path, n_features: int) -> np.ndarray:
    mask = np.zeros(n_features, dtype=bool)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                i = int(line)
                if not 0 <= i < n_features:
                    raise ValueError(f"mask index {i} out of range for {n_features} features")
                mask[i] = True
    return mask


def synthetic_selection_data(n_samples=120, n_noise=60, seed=0, margin=0.25):
    """Two informative columns (0 and 1) and ``n_noise`` uniform noise columns.

    The label is ``x0 + x1 > 0``; points closer than ``margin`` to the
    boundary are redrawn so that 1-NN on the informative pair is exact.
    """
    rng = np.random.default_rng(seed)
    informative = []
    while len(informative) < n_samples:
        p = rng.uniform(-1.0, 1.0, 2)
        if abs(p.sum()) >= margin:
            informative.append(p)
    informative = np.array(informative)
    y = (informative.sum(axis=1) > 0).astype(np.int64)
    X = np.hstack([informative, rng.uniform(-1.0, 1.0, (n_samples, n_noise))])
    return X, y
