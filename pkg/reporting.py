"""Evaluation reports, training traces and classification-map images.

Reports are written as JSON with a flat CSV mirror; maps are binary portable
graymaps (``P5``, maxval 255).
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pandas as pd
from PIL import Image

from data_io import LabelMap, PatchDataset
from linear_model import TraceEntry

logger = logging.getLogger(__name__)

PREDICT_CHUNK = 1024
MISCLASSIFIED_GRAY = 255
CORRECT_GRAY = 0
UNLABELED_GRAY = 128


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Test-set accuracy summary; ``confusion`` rows are the true classes."""

    overall_accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray
    counts: np.ndarray
    wall_time: float = 0.0

    @property
    def num_classes(self) -> int:
        return self.confusion.shape[0]

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self, record_timing: bool = False) -> dict:
        doc = {
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": [None if np.isnan(a) else float(a) for a in self.per_class_accuracy],
            "confusion": self.confusion.tolist(),
            "counts": self.counts.tolist(),
            "total": self.total,
        }
        if record_timing:
            doc["wall_time_s"] = self.wall_time
        return doc

    def to_frame(self) -> pd.DataFrame:
        """One row per class (1-based) plus an ``overall`` row."""
        correct = np.diag(self.confusion)
        frame = pd.DataFrame({
            "class": [str(c) for c in range(1, self.num_classes + 1)],
            "test_count": self.counts,
            "correct": correct,
            "accuracy": self.per_class_accuracy,
        })
        overall = pd.DataFrame({
            "class": ["overall"],
            "test_count": [self.total],
            "correct": [int(correct.sum())],
            "accuracy": [self.overall_accuracy],
        })
        return pd.concat([frame, overall], ignore_index=True)


def confusion_matrix(truth, predicted, num_classes: int) -> np.ndarray:
    """``C x C`` counts; ``truth`` and ``predicted`` are 0-based class indices."""
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (np.asarray(truth, dtype=np.int64), np.asarray(predicted, dtype=np.int64)), 1)
    return matrix


def report_from_predictions(truth, predicted, num_classes: int, wall_time: float = 0.0) -> EvalReport:
    matrix = confusion_matrix(truth, predicted, num_classes)
    counts = matrix.sum(axis=1)
    total = counts.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(counts > 0, np.diag(matrix) / np.maximum(counts, 1), np.nan)
    overall = float(np.trace(matrix) / total) if total else float("nan")
    return EvalReport(overall, per_class, matrix, counts, wall_time)


def predict_labels(model, patches: np.ndarray, threads: int = 1, chunk: int = PREDICT_CHUNK) -> np.ndarray:
    """0-based predicted classes; chunks may run on ``threads`` workers, output stays in order."""
    if patches.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    chunks = [patches[i:i + chunk] for i in range(0, patches.shape[0], chunk)]

    def _predict(block: np.ndarray) -> np.ndarray:
        return np.argmax(model.predict_proba_batch(block), axis=1)

    if threads <= 1 or len(chunks) == 1:
        return np.concatenate([_predict(block) for block in chunks])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.concatenate(list(pool.map(_predict, chunks)))


def evaluate(model, data: PatchDataset, threads: int = 1) -> EvalReport:
    started = time.perf_counter()
    predicted = predict_labels(model, data.patches, threads)
    elapsed = time.perf_counter() - started
    report = report_from_predictions(data.labels, predicted, data.num_classes, elapsed)
    logger.info("Evaluated %d samples: OA %.4f in %.2fs", report.total, report.overall_accuracy, elapsed)
    return report


def write_report(report: EvalReport, out_dir, record_timing: bool = False) -> tuple:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    csv_path = out_dir / "report.csv"
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(record_timing), f, indent=2)
        f.write("\n")
    report.to_frame().to_csv(csv_path, index=False)
    return json_path, csv_path


def trace_frame(trace: Iterable[TraceEntry]) -> pd.DataFrame:
    return pd.DataFrame(
        [(e.sweep, e.block, e.objective) for e in trace],
        columns=["sweep", "block", "objective"],
    )


def write_trace(trace: Iterable[TraceEntry], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace_frame(trace).to_csv(path, index=False, float_format="%.17g")
    return path


# ---------------------------------------------------------------------------
# Classification maps
# ---------------------------------------------------------------------------


def class_map(predicted: np.ndarray, labels: LabelMap, num_classes: int) -> np.ndarray:
    """Gray image of predicted class ids (1..C scaled to 255); unlabeled pixels are 0."""
    grid = np.zeros(labels.shape, dtype=np.uint8)
    mask = labels.grid > 0
    grid[mask] = np.rint((predicted[mask] + 1) * 255.0 / num_classes).astype(np.uint8)
    return grid


def misclassification_map(predicted: np.ndarray, labels: LabelMap) -> np.ndarray:
    """255 where the prediction is wrong, 0 where right, 128 on unlabeled pixels."""
    grid = np.full(labels.shape, UNLABELED_GRAY, dtype=np.uint8)
    mask = labels.grid > 0
    wrong = mask & (predicted + 1 != labels.grid)
    grid[mask] = CORRECT_GRAY
    grid[wrong] = MISCLASSIFIED_GRAY
    return grid


def write_pgm(image: np.ndarray, path) -> Path:
    """Save an 8-bit grayscale array as a binary portable graymap."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8), mode="L").save(path, format="PPM")
    return path


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"))


__all__ = [
    "EvalReport",
    "confusion_matrix",
    "report_from_predictions",
    "predict_labels",
    "evaluate",
    "write_report",
    "trace_frame",
    "write_trace",
    "class_map",
    "misclassification_map",
    "write_pgm",
    "read_pgm",
]
