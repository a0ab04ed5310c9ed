"""Training pipeline and repeated-run experiments.

``run_pipeline`` is the load -> split -> normalize -> fit chain shared by the
command line and the sweeps. Sweeps reseed every run as ``base_seed + run``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Dict, Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from band_selection import BandRanking, normalize_features, select_patch_bands
from data_io import FeatureScaling, HyperCube, LabelMap, PatchDataset, split_per_class
from errors import ConfigError
from linear_model import (
    TrainConfig,
    TrainResult,
    fit_tensor_lr,
    fit_vector_lr,
    tensor_lr_param_count,
    vector_lr_param_count,
)
from rank1_fnn import dense_fnn_fit, dense_fnn_param_count, fit_rank1_fnn, rank1_fnn_param_count
from reporting import EvalReport, evaluate
from run_config import MODEL_TYPES, RunConfig, worker_count

logger = logging.getLogger(__name__)

SWEEP_KEYS = ("model_type", "samples_per_class", "window", "hidden")
VECTORIZED = {"tensor_lr": "vector_lr", "rank1_fnn": "dense_fnn",
              "vector_lr": "vector_lr", "dense_fnn": "dense_fnn"}


def fit_model(model_type: str, data: PatchDataset, cfg: TrainConfig, num_hidden: int = 75,
              feature_scaling: Optional[FeatureScaling] = None) -> TrainResult:
    if model_type == "tensor_lr":
        return fit_tensor_lr(data, cfg, feature_scaling)
    if model_type == "vector_lr":
        return fit_vector_lr(data, cfg, feature_scaling)
    if model_type == "rank1_fnn":
        return fit_rank1_fnn(data, cfg, num_hidden, feature_scaling)
    if model_type == "dense_fnn":
        return dense_fnn_fit(data, cfg, num_hidden, feature_scaling)
    raise ConfigError(f"model type must be one of {MODEL_TYPES}, got {model_type!r}")


def param_count_for(model_type: str, shape, num_classes: int, num_hidden: int = 75) -> int:
    """Free parameters of ``model_type`` for inputs of ``shape``, without training."""
    if model_type == "tensor_lr":
        return tensor_lr_param_count(shape, num_classes)
    if model_type == "vector_lr":
        return vector_lr_param_count(shape, num_classes)
    if model_type == "rank1_fnn":
        return rank1_fnn_param_count(shape, num_hidden, num_classes)
    if model_type == "dense_fnn":
        return dense_fnn_param_count(shape, num_hidden, num_classes)
    raise ConfigError(f"model type must be one of {MODEL_TYPES}, got {model_type!r}")


def param_summary(model_type: str, shape, num_classes: int, num_hidden: int = 75) -> dict:
    """Parameter counts of the chosen model and its vectorized counterpart."""
    vectorized = VECTORIZED[model_type]
    return {
        model_type: param_count_for(model_type, shape, num_classes, num_hidden),
        vectorized: param_count_for(vectorized, shape, num_classes, num_hidden),
    }


@dataclass(frozen=True)
class PipelineResult:
    result: TrainResult
    train: PatchDataset
    test: PatchDataset
    scaling: FeatureScaling

    @property
    def model(self):
        return self.result.model


def prepare_split(cube: HyperCube, labels: LabelMap, run: RunConfig) -> tuple:
    """Split and normalize; returns ``(train, test, scaling)`` with train-split stats."""
    train, test = split_per_class(cube, labels, run.samples_per_class, run.seed,
                                  run.window, run.train_fraction)
    train, scaling = normalize_features(train)
    test, _ = normalize_features(test, scaling)
    return train, test, scaling


def run_pipeline(cube: HyperCube, labels: LabelMap, run: RunConfig) -> PipelineResult:
    run.validate(check_paths=False)
    train, test, scaling = prepare_split(cube, labels, run)
    result = fit_model(run.model_type, train, run.train, run.hidden, scaling)
    logger.info("Trained %s on %d patches in %d sweeps", run.model_type, len(train), result.sweeps)
    return PipelineResult(result, train, test, scaling)


def _test_accuracy(model, test: PatchDataset) -> EvalReport:
    # test patches are already normalized; evaluate on the unscaled model view
    return evaluate(replace(model, feature_scaling=None), test, worker_count())


def grid_points(grid: Dict[str, Sequence]) -> list:
    """Cartesian product of the sweep grid as a list of override dicts."""
    unknown = set(grid) - set(SWEEP_KEYS)
    if unknown:
        raise ConfigError(f"unknown sweep keys {sorted(unknown)}; expected a subset of {SWEEP_KEYS}")
    keys = [k for k in SWEEP_KEYS if k in grid]
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def run_sweep(cube: HyperCube, labels: LabelMap, base: RunConfig,
              grid: Dict[str, Sequence], runs: int = 10) -> pd.DataFrame:
    """Train and test every grid point ``runs`` times; one row per run."""
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")
    rows = []
    for point in grid_points(grid):
        for r in range(runs):
            run = base.with_overrides(dict(point, seed=base.seed + r))
            outcome = run_pipeline(cube, labels, run)
            report = _test_accuracy(outcome.model, outcome.test)
            rows.append({
                "model_type": run.model_type,
                "samples_per_class": run.samples_per_class,
                "window": run.window,
                "hidden": run.hidden,
                "run": r,
                "seed": run.seed,
                "train_samples": len(outcome.train),
                "test_samples": len(outcome.test),
                "param_count": outcome.model.param_count(),
                "sweeps": outcome.result.sweeps,
                "overall_accuracy": report.overall_accuracy,
            })
            logger.info("Sweep point %s run %d: OA %.4f", point, r, report.overall_accuracy)
    return pd.DataFrame(rows)


def summarize(runs: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard deviation of test OA per grid point."""
    keys = [k for k in SWEEP_KEYS if k in runs.columns]
    summary = (
        runs.groupby(keys, sort=False)
        .agg(runs=("run", "count"),
             param_count=("param_count", "first"),
             oa_mean=("overall_accuracy", "mean"),
             oa_std=("overall_accuracy", "std"))
        .reset_index()
    )
    summary["oa_std"] = summary["oa_std"].fillna(0.0)
    return summary


def band_reduction_experiment(train: PatchDataset, test: PatchDataset, ranking: BandRanking,
                              n_values: Iterable[int], cfg: TrainConfig = TrainConfig()) -> pd.DataFrame:
    """Retrain a tensor LR on the top-n bands for each ``n``.

    ``train`` and ``test`` hold raw patches; each reduced copy is normalized
    with its own training stats. The first row is the full-band model.
    """
    rows = []
    counts = [ranking.num_bands] + [int(n) for n in n_values]
    for n in counts:
        reduced_train = select_patch_bands(train, ranking, n)
        reduced_test = select_patch_bands(test, ranking, n)
        reduced_train, stats = normalize_features(reduced_train)
        reduced_test, _ = normalize_features(reduced_test, stats)
        model = fit_tensor_lr(reduced_train, cfg).model
        report = evaluate(model, reduced_test)
        rows.append({
            "bands": n,
            "selected": " ".join(str(b + 1) for b in ranking.top(n)) if n < ranking.num_bands else "all",
            "param_count": model.param_count(),
            "overall_accuracy": report.overall_accuracy,
        })
        logger.info("Top-%d bands: OA %.4f", n, report.overall_accuracy)
    return pd.DataFrame(rows)


__all__ = [
    "fit_model",
    "param_count_for",
    "param_summary",
    "PipelineResult",
    "prepare_split",
    "run_pipeline",
    "grid_points",
    "run_sweep",
    "summarize",
    "band_reduction_experiment",
]
