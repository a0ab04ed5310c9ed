import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

from data_io import PatchDataset, make_rng, save_cube, save_labels, default_labels_path  # noqa: E402
from synthetic import planted_band_cube  # noqa: E402
from tensor_core import CPFactorSet  # noqa: E402


@pytest.fixture
def rng():
    return make_rng(1234)


def random_factors(rng, shape, k):
    return CPFactorSet(tuple(rng.standard_normal((p, k)) for p in shape))


def random_dataset(rng, shape, num_classes, n):
    labels = np.arange(n) % num_classes
    patches = rng.standard_normal((n,) + tuple(shape))
    return PatchDataset.from_labels(patches, labels, num_classes)


def finite_difference(objective, w, h=1e-6):
    """Central differences of ``objective`` with respect to every entry of ``w``."""
    grad = np.zeros_like(w)
    for idx in np.ndindex(*w.shape):
        plus = w.copy()
        minus = w.copy()
        plus[idx] += h
        minus[idx] -= h
        grad[idx] = (objective(plus) - objective(minus)) / (2 * h)
    return grad


@pytest.fixture
def small_data(rng):
    """Five random 3 x 4 x 2 samples over 3 classes."""
    return random_dataset(rng, (3, 4, 2), 3, 5)


@pytest.fixture
def planted_files(tmp_path):
    """A planted 24 x 24 x 16 cube with labels written to disk; returns the cube stem."""
    cube, labels = planted_band_cube(seed=3)
    stem = tmp_path / "planted"
    save_cube(cube, stem)
    save_labels(labels, default_labels_path(stem))
    return stem
