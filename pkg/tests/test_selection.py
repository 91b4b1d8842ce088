import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfeo.mlo import MloConfig
from mfeo.selection import (
    WrapperFitness,
    binarize,
    knn1_accuracy,
    read_mask,
    select_features,
    stratified_folds,
    synthetic_selection_data,
    write_mask,
)


def knn_loop(X, y, folds, cols):
    correct = 0
    for i in range(len(X)):
        best, pred = None, None
        for j in range(len(X)):
            if folds[j] == folds[i]:
                continue
            d = sum((X[i, c] - X[j, c]) ** 2 for c in cols)
            if best is None or d < best:
                best, pred = d, y[j]
        correct += pred == y[i]
    return correct / len(X)


def test_binarize_examples(rng):
    m = binarize(np.array([0.0, 0.0, 0.0]))
    assert list(m) == [True, False, False]
    assert binarize(np.ones(5)).all()
    lo, hi = -2.0, 6.0
    pos = rng.uniform(lo, hi, 40)
    expected = [(p - lo) / (hi - lo) > 0.3 for p in pos]
    if not any(expected):
        expected[int(np.argmax(pos))] = True
    assert list(binarize(pos, 0.3, lo, hi)) == expected
    with pytest.raises(ValueError):
        binarize(pos, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.05, 0.95))
def test_binarize_never_empty(pos, t):
    m = binarize(np.array(pos), t)
    assert m.any()
    assert m[int(np.argmax(pos))]


def test_stratified_folds_balance(rng):
    y = np.array([0] * 10 + [1] * 7)
    f = stratified_folds(y, 3, rng)
    for c in (0, 1):
        counts = np.bincount(f[y == c], minlength=3)
        assert counts.max() - counts.min() <= 1


def test_knn_matches_loop(rng):
    X = rng.normal(size=(30, 6))
    y = rng.integers(0, 3, 30)
    folds = stratified_folds(y, 3, rng)
    for cols in ([0], [1, 4], [0, 2, 3, 5]):
        mask = np.zeros(6, dtype=bool)
        mask[cols] = True
        assert knn1_accuracy(X, y, folds, mask) == knn_loop(X, y, folds, cols)


def test_informative_pair_is_exact():
    X, y = synthetic_selection_data(n_samples=200, margin=0.5, seed=0)
    folds = stratified_folds(y, 3, np.random.default_rng(0))
    assert knn_loop(X, y, folds, [0, 1]) == 1.0
    assert knn_loop(X, y, folds, [0]) < 1.0


def test_evaluator_is_deterministic():
    X, y = synthetic_selection_data(seed=2)
    pos = np.random.default_rng(1).random(X.shape[1])
    a = WrapperFitness(X, y, seed=5)(pos)
    b = WrapperFitness(X, y, seed=5)
    assert a == b(pos) == b(pos)


def test_penalty_term():
    X, y = synthetic_selection_data(seed=2)
    pos = np.zeros(X.shape[1])
    pos[:2] = 1.0
    fit = WrapperFitness(X, y, penalty=0.5)
    assert fit(pos) == fit.accuracy(fit.mask(pos)) - 0.5 * 2 / X.shape[1]


def test_single_feature():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 1))
    y = (X[:, 0] > 0).astype(int)
    res = select_features(X, y, MloConfig(dim=1, pop_size=10, prides=2, max_iters=3))
    assert list(res.indices) == [0]


def test_degenerate_training_sets():
    X = np.zeros((9, 3))
    with pytest.raises(ValueError):
        select_features(X, np.arange(9) % 2)
    with pytest.raises(ValueError):
        select_features(np.zeros((12, 3)), np.zeros(12))


def test_recovers_informative_features():
    X, y = synthetic_selection_data(n_samples=200, margin=0.5, seed=0)
    res = select_features(X, y, MloConfig(dim=1, pop_size=50, max_iters=100, seed=0))
    assert res.mask[0] and res.mask[1]
    assert res.history.mask_size[-1] == res.mask.sum()
    assert all(b >= a for a, b in zip(res.history.best_fitness, res.history.best_fitness[1:]))


def test_heavier_penalty_gives_smaller_mask():
    X, y = synthetic_selection_data(seed=1)
    cfg = MloConfig(dim=1, pop_size=20, prides=2, max_iters=20, seed=3)
    loose = select_features(X, y, cfg, penalty=0.0)
    tight = select_features(X, y, cfg, penalty=0.5)
    assert tight.mask.sum() <= loose.mask.sum()


def test_mask_file_round_trip(tmp_path):
    mask = np.zeros(12, dtype=bool)
    mask[[0, 3, 11]] = True
    write_mask(tmp_path / "m.txt", mask)
    assert (tmp_path / "m.txt").read_text() == "0\n3\n11\n"
    assert np.array_equal(read_mask(tmp_path / "m.txt", 12), mask)
    with pytest.raises(ValueError):
        read_mask(tmp_path / "m.txt", 5)
