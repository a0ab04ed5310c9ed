import numpy as np
import pandas as pd
import pytest

from band_selection import (
    BandRanking,
    band_importance,
    feature_stats,
    normalize_features,
    rank_scores,
    select_bands,
    select_patch_bands,
)
from conftest import random_factors
from data_io import FeatureScaling, HyperCube, PatchDataset, split_per_class
from errors import BoundsError, ShapeError, UnsupportedOperationError
from experiments import band_reduction_experiment
from linear_model import TensorLRModel, TrainConfig, fit_tensor_lr
from rank1_fnn import Rank1FNNModel
from synthetic import planted_band_cube
from tensor_core import CPFactorSet, DenseTensor


def spectral_model(spectral, scaled=True):
    spectral = np.asarray(spectral, dtype=float)
    c = spectral.shape[1]
    f = CPFactorSet((np.ones((1, c)), np.ones((1, c)), spectral))
    scaling = FeatureScaling(np.zeros(spectral.shape[0]), np.ones(spectral.shape[0])) if scaled else None
    return TensorLRModel(f, c, (1, 1, spectral.shape[0]), scaling)


def test_single_class_order():
    ranking = rank_scores([0.0, 3.0, 5.0])
    assert ranking.order.tolist() == [2, 1, 0]
    f = CPFactorSet((np.ones((1, 2)), np.ones((1, 2)), np.array([[0.0, 0.0], [3.0, 0.0], [-5.0, 0.0]])))
    m = TensorLRModel(f, 2, (1, 1, 3), FeatureScaling(np.zeros(3), np.ones(3)))
    ranking = band_importance(m)
    assert ranking.order.tolist() == [2, 1, 0]
    assert ranking.scores.tolist() == [0.0, 3.0, 5.0]
    assert ranking.to_frame()["band"].tolist() == [3, 2, 1]


def test_ties_keep_lower_band_first():
    m = spectral_model([[1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [-1.0, -1.0]])
    assert band_importance(m).order.tolist() == [0, 1, 2, 3]


def test_scores_sum_over_classes_and_are_scale_invariant(rng):
    spectral = rng.standard_normal((6, 3))
    ranking = band_importance(spectral_model(spectral))
    assert np.allclose(ranking.scores, np.abs(spectral).sum(axis=1))
    scaled = band_importance(spectral_model(4.5 * spectral))
    assert scaled.order.tolist() == ranking.order.tolist()
    assert np.all(np.diff(ranking.scores[ranking.order]) <= 0)


def test_zero_model_warns(caplog):
    ranking = band_importance(spectral_model(np.zeros((3, 2))))
    assert ranking.order.tolist() == [0, 1, 2]
    assert "degenerate" in caplog.text


def test_unnormalized_model_warns(caplog):
    band_importance(spectral_model(np.eye(3)[:, :2], scaled=False))
    assert "without feature normalization" in caplog.text


def test_fnn_model_is_rejected(rng):
    m = Rank1FNNModel(random_factors(rng, (1, 1, 3), 2), np.zeros((2, 2)), 2, (1, 1, 3))
    with pytest.raises(UnsupportedOperationError):
        band_importance(m)


def test_ranking_rejects_non_permutation():
    with pytest.raises(ShapeError):
        BandRanking(np.zeros(3), np.array([0, 0, 1]))


def test_select_bands(rng):
    cube = HyperCube.from_array(rng.standard_normal((4, 5, 6)))
    ranking = rank_scores(rng.random(6))
    full = select_bands(cube, ranking, 6)
    inverse = np.argsort(ranking.order)
    assert np.array_equal(full.array[:, :, inverse], cube.array)
    one = select_bands(cube, ranking, 1)
    assert one.array.shape == (4, 5, 1)
    assert np.array_equal(one.array[:, :, 0], cube.array[:, :, ranking.order[0]])
    tensor = select_bands(DenseTensor.from_array(cube.array), ranking, 2)
    assert isinstance(tensor, DenseTensor) and tensor.shape == (4, 5, 2)
    for n in (0, 7):
        with pytest.raises(BoundsError):
            select_bands(cube, ranking, n)


def test_select_patch_bands(rng):
    data = PatchDataset.from_labels(rng.standard_normal((4, 3, 3, 5)), [0, 1, 0, 1], 2)
    ranking = rank_scores([1.0, 5.0, 2.0, 4.0, 3.0])
    reduced = select_patch_bands(data, ranking, 2)
    assert reduced.input_shape == (3, 3, 2)
    assert np.array_equal(reduced.patches[..., 0], data.patches[..., 1])
    assert np.array_equal(reduced.targets, data.targets)


def test_normalize_features(rng):
    patches = rng.normal(3.0, 2.0, size=(30, 3, 3, 4))
    patches[..., 2] = 7.0
    data = PatchDataset.from_labels(patches, np.arange(30) % 2, 2)
    normalized, stats = normalize_features(data)
    assert np.array_equal(normalized.patches[..., 2], np.zeros((30, 3, 3)))
    assert stats.std[2] == 1.0
    flat = normalized.patches.reshape(-1, 4)
    assert np.all(np.abs(flat.mean(axis=0)) < 1e-10)
    assert np.all(np.abs(flat[:, [0, 1, 3]].std(axis=0) - 1.0) < 1e-10)
    again, _ = normalize_features(normalized)
    assert np.allclose(again.patches, normalized.patches, atol=1e-10)


def test_test_split_uses_training_stats(rng):
    train = PatchDataset.from_labels(rng.normal(2.0, 1.0, size=(10, 1, 1, 2)), np.arange(10) % 2, 2)
    test = PatchDataset.from_labels(rng.normal(2.0, 1.0, size=(6, 1, 1, 2)), np.arange(6) % 2, 2)
    _, stats = normalize_features(train)
    normalized_test, same = normalize_features(test, stats)
    assert same is stats
    assert np.allclose(normalized_test.patches, (test.patches - stats.mean) / stats.std)
    assert np.allclose(feature_stats(train).mean, stats.mean)


def _planted_ranking(seed):
    cube, labels = planted_band_cube(seed=seed)
    train, test = split_per_class(cube, labels, 20, seed, window=3)
    normalized, stats = normalize_features(train)
    model = fit_tensor_lr(normalized, TrainConfig(seed=seed, max_sweeps=100), stats).model
    return band_importance(model), train, test


def test_planted_bands_are_recovered():
    hits = 0
    for seed in range(10):
        ranking, _, _ = _planted_ranking(seed)
        hits += set(ranking.top(2).tolist()) == {1, 4}
    assert hits >= 9


def test_top_ten_bands_keep_accuracy():
    ranking, train, test = _planted_ranking(0)
    frame = band_reduction_experiment(train, test, ranking, [10], TrainConfig(seed=0, max_sweeps=100))
    assert isinstance(frame, pd.DataFrame)
    assert frame["bands"].tolist() == [16, 10]
    full, reduced = frame["overall_accuracy"].tolist()
    assert full - reduced < 0.02
