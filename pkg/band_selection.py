"""Spectral-band importance from a trained tensor logistic regression.

A band's score is the sum over classes of the absolute spectral-factor
coefficients. Scores are only comparable across bands when the model was
trained on per-band normalized features.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import pandas as pd

from data_io import STD_FLOOR, FeatureScaling, HyperCube, PatchDataset
from errors import BoundsError, ShapeError, UnsupportedOperationError
from linear_model import TensorLRModel
from tensor_core import DenseTensor, as_array

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BandRanking:
    """Per-band scores and the band indices (0-based) sorted by descending score."""

    scores: np.ndarray
    order: np.ndarray
    source_model: str = ""

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        order = np.asarray(self.order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(scores.size)):
            raise ShapeError("ranking order must be a permutation of the band indices")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "order", order)

    @property
    def num_bands(self) -> int:
        return self.scores.size

    def top(self, n: int) -> np.ndarray:
        _check_count(n, self.num_bands)
        return self.order[:n]

    def to_frame(self, n: Optional[int] = None) -> pd.DataFrame:
        """Table of ``rank, band, score`` with 1-based rank and band numbers."""
        n = self.num_bands if n is None else n
        bands = self.top(n)
        return pd.DataFrame({
            "rank": np.arange(1, n + 1),
            "band": bands + 1,
            "score": self.scores[bands],
        })


def rank_scores(scores, source_model: str = "") -> BandRanking:
    """Order bands by descending score; equal scores keep the lower band first."""
    scores = np.asarray(scores, dtype=np.float64)
    return BandRanking(scores, np.argsort(-scores, kind="stable"), source_model)


def band_importance(m: TensorLRModel, source_model: str = "") -> BandRanking:
    """Rank the bands of the last (spectral) mode of ``m``."""
    if not isinstance(m, TensorLRModel):
        raise UnsupportedOperationError(
            f"band ranking is defined for tensor_lr models, not {getattr(m, 'model_type', type(m).__name__)}"
        )
    if m.feature_scaling is None:
        logger.warning("Model was trained without feature normalization; band scores may reflect band variance")
    spectral = np.asarray(m.weights.factors[-1])
    if m.augment_ones:
        spectral = spectral[:-1]
    scores = np.abs(spectral).sum(axis=1)
    if not np.any(scores):
        logger.warning("All spectral coefficients are zero; the band ranking is degenerate")
    return rank_scores(scores, source_model or m.model_type)


def _check_count(n: int, bands: int) -> None:
    if not 1 <= n <= bands:
        raise BoundsError(f"number of selected bands must lie in 1..{bands}, got {n}")


def select_bands(cube: Union[HyperCube, DenseTensor, np.ndarray], ranking: BandRanking, n: int):
    """Keep the ``n`` top-ranked spectral slices, in ranking order."""
    arr = cube.array if isinstance(cube, HyperCube) else as_array(cube)
    if arr.ndim != 3 or arr.shape[2] != ranking.num_bands:
        raise ShapeError(f"cube shape {arr.shape} does not match a {ranking.num_bands}-band ranking")
    selected = arr[:, :, ranking.top(n)]
    if isinstance(cube, HyperCube):
        return HyperCube.from_array(selected)
    return DenseTensor.from_array(selected)


def select_patch_bands(data: PatchDataset, ranking: BandRanking, n: int) -> PatchDataset:
    """Restrict every patch to the ``n`` top-ranked bands (last mode)."""
    if data.input_shape[-1] != ranking.num_bands:
        raise ShapeError(f"patches have {data.input_shape[-1]} bands, ranking has {ranking.num_bands}")
    return data.with_patches(data.patches[..., ranking.top(n)])


def feature_stats(data: PatchDataset) -> FeatureScaling:
    """Per-band mean and std over every entry of the patches.

    Bands whose std falls below ``STD_FLOOR`` keep a unit std so they are only centered.
    """
    axes = tuple(range(data.patches.ndim - 1))
    mean = data.patches.mean(axis=axes)
    std = data.patches.std(axis=axes)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return FeatureScaling(mean, std)


def normalize_features(data: PatchDataset, stats: Optional[FeatureScaling] = None) -> tuple:
    """Return ``(normalized data, stats)``; stats come from ``data`` unless given.

    Compute the stats on the training split and pass them when normalizing the
    test split.
    """
    if stats is None:
        stats = feature_stats(data)
    return data.with_patches(stats.apply(data.patches)), stats


__all__ = [
    "BandRanking",
    "rank_scores",
    "band_importance",
    "select_bands",
    "select_patch_bands",
    "feature_stats",
    "normalize_features",
]
