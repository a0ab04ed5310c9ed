"""Seeded planted-signal generators for tests, demos and sweeps."""

from __future__ import annotations

import logging
from typing import NamedTuple, Sequence

import numpy as np

from data_io import HyperCube, LabelMap, PatchDataset, make_rng
from errors import ConfigError
from tensor_core import CPFactorSet, cp_reconstruct

logger = logging.getLogger(__name__)


class PlantedData(NamedTuple):
    train: PatchDataset
    test: PatchDataset
    factors: CPFactorSet


def random_cp_factors(shape: Sequence[int], k: int, rng: np.random.Generator,
                      unit: bool = True) -> CPFactorSet:
    """Gaussian factor matrices, optionally with unit-norm columns."""
    mats = []
    for p in shape:
        m = rng.standard_normal((p, k))
        if unit:
            m /= np.linalg.norm(m, axis=0)
        mats.append(m)
    return CPFactorSet(tuple(mats))


def _column_tensor(factors: CPFactorSet, k: int) -> np.ndarray:
    return cp_reconstruct(CPFactorSet(tuple(f[:, k:k + 1] for f in factors.factors))).array


def planted_rank1_dataset(shape=(5, 5, 8), num_classes: int = 3, train_per_class: int = 20,
                          num_test: int = 500, amplitude: float = 4.0, seed: int = 0) -> PlantedData:
    """Gaussian classes whose means are ``amplitude`` times unit rank-1 tensors.

    All means share the same norm, so the Bayes classifier is a tensor logistic
    regression whose class weights are the planted rank-1 tensors.
    """
    if num_classes < 2 or train_per_class < 1 or num_test < 1:
        raise ConfigError("planted data needs >= 2 classes and positive sample counts")
    rng = make_rng(seed)
    shape = tuple(shape)
    factors = random_cp_factors(shape, num_classes, rng)
    means = np.stack([amplitude * _column_tensor(factors, k) for k in range(num_classes)])

    def draw(labels: np.ndarray, split: str) -> PatchDataset:
        xs = means[labels] + rng.standard_normal((labels.size,) + shape)
        return PatchDataset.from_labels(xs, labels, num_classes, split=split)

    train_labels = np.repeat(np.arange(num_classes), train_per_class)
    train = draw(train_labels, "train")
    test = draw(rng.integers(0, num_classes, size=num_test), "test")
    return PlantedData(train, test, factors)


def xor_dataset(shape=(5, 5, 8), num_train: int = 200, num_test: int = 500,
                margin: float = 4.0, seed: int = 0) -> PlantedData:
    """Two-class parity task no linear classifier can solve.

    Two unit rank-1 tensors ``A`` and ``B`` share every factor but the first,
    with orthogonal first factors, so ``A + B`` and ``A - B`` are rank-1 too.
    Each sample is ``noise + margin * (s_1 A + s_2 B)`` with random signs;
    the class is 0 when ``s_1 == s_2`` and 1 otherwise. The returned factors
    hold ``A`` and ``B`` as columns.
    """
    shape = tuple(shape)
    if shape[0] < 2:
        raise ConfigError("the first mode needs at least 2 entries for orthogonal factors")
    rng = make_rng(seed)
    base = random_cp_factors(shape, 1, rng)
    first = rng.standard_normal((shape[0], 2))
    q, _ = np.linalg.qr(first)
    factors = CPFactorSet((q[:, :2],) + tuple(np.repeat(f, 2, axis=1) for f in base.factors[1:]))
    a = _column_tensor(factors, 0)
    b = _column_tensor(factors, 1)

    def draw(n: int, split: str) -> PatchDataset:
        signs = rng.choice(np.array([-1.0, 1.0]), size=(n, 2))
        labels = (signs[:, 0] != signs[:, 1]).astype(np.int64)
        xs = rng.standard_normal((n,) + shape)
        xs += margin * (signs[:, 0].reshape((n,) + (1,) * len(shape)) * a
                        + signs[:, 1].reshape((n,) + (1,) * len(shape)) * b)
        return PatchDataset.from_labels(xs, labels, 2, split=split)

    return PlantedData(draw(num_train, "train"), draw(num_test, "test"), factors)


def planted_band_cube(height: int = 24, width: int = 24, bands: int = 16,
                      informative: Sequence[int] = (1, 4), num_classes: int = 3,
                      amplitude: float = 3.0, seed: int = 0) -> tuple:
    """Cube whose classes differ only in the ``informative`` bands (0-based).

    Classes occupy vertical stripes. Every band is standard normal noise; the
    informative bands add a class-dependent offset of norm ``amplitude``.
    Returns ``(HyperCube, LabelMap)``.
    """
    informative = [int(b) for b in informative]
    if not informative or min(informative) < 0 or max(informative) >= bands:
        raise ConfigError(f"informative bands must lie in 0..{bands - 1}")
    if num_classes < 2 or width < num_classes:
        raise ConfigError("need at least 2 classes and one column per class")
    rng = make_rng(seed)
    grid = np.broadcast_to(1 + (np.arange(width) * num_classes) // width, (height, width))
    # class offsets equally spaced on a circle, rotated into the informative bands
    if len(informative) == 1:
        offsets = amplitude * np.linspace(-1.0, 1.0, num_classes)[:, None]
    else:
        basis, _ = np.linalg.qr(rng.standard_normal((len(informative), 2)))
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes + rng.uniform(0.0, 2.0 * np.pi)
        offsets = amplitude * np.column_stack([np.cos(angles), np.sin(angles)]) @ basis.T
    values = rng.standard_normal((height, width, bands))
    values[:, :, informative] += offsets[grid - 1]
    logger.debug("Planted bands %s for %d classes", informative, num_classes)
    return HyperCube.from_array(values), LabelMap(grid)


__all__ = [
    "PlantedData",
    "random_cp_factors",
    "planted_rank1_dataset",
    "xor_dataset",
    "planted_band_cube",
]
