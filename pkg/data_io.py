"""Hyperspectral cube and label ingestion, patch datasets and model files.

Cube format (``<name>.json`` header + ``<name>.raw`` payload)::

    {"magic": "HSTC1", "height": H, "width": W, "bands": B,
     "dtype": "f32", "order": "bsq", "endianness": "little"}

The payload holds ``B`` contiguous ``H x W`` planes, row-major within each
plane, as 32-bit little-endian floats. Labels live in ``<name>.labels.raw``:
``H x W`` row-major unsigned 16-bit little-endian ids, 0 meaning unlabeled.

Pixel coordinates are 0-based ``(row, col)`` pairs.

Model files are JSON. Floats are written with Python's shortest repr, which
reads back to the identical double, so no fixed digit count is needed.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from errors import BoundsError, ConfigError, FormatError, InputError, ShapeError
from tensor_core import DenseTensor

logger = logging.getLogger(__name__)

CUBE_MAGIC = "HSTC1"
CUBE_HEADER_SUFFIX = ".json"
CUBE_PAYLOAD_SUFFIX = ".raw"
LABELS_SUFFIX = ".labels.raw"
MODEL_FORMAT_VERSION = 1
STD_FLOOR = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    """The project's portable 64-bit generator: numpy ``PCG64`` seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(int(seed)))


# ---------------------------------------------------------------------------
# In-memory types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HyperCube:
    """An ``H x W x B`` hyperspectral image."""

    values: DenseTensor

    def __post_init__(self) -> None:
        if self.values.ndim != 3:
            raise ShapeError(f"a cube needs 3 modes, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values.data)):
            raise FormatError("cube contains non-finite values")

    @classmethod
    def from_array(cls, arr) -> "HyperCube":
        return cls(DenseTensor.from_array(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def array(self) -> np.ndarray:
        return self.values.array


@dataclass(frozen=True, eq=False)
class LabelMap:
    """``H x W`` grid of class ids; 0 is unlabeled, 1..C labeled."""

    grid: np.ndarray

    def __post_init__(self) -> None:
        grid = np.array(self.grid, dtype=np.int64)
        if grid.ndim != 2:
            raise ShapeError(f"label map must be 2-D, got shape {grid.shape}")
        if grid.size and grid.min() < 0:
            raise FormatError("label ids must be non-negative")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self) -> tuple:
        return self.grid.shape

    @property
    def num_classes(self) -> int:
        return int(self.grid.max()) if self.grid.size else 0

    def labeled_coords(self) -> np.ndarray:
        """Row-major ``(row, col)`` pairs of every labeled pixel."""
        return np.argwhere(self.grid > 0)


@dataclass(frozen=True, eq=False)
class FeatureScaling:
    """Affine per-band normalization ``(x - mean) / std`` over the last mode."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=np.float64)
        std = np.array(self.std, dtype=np.float64)
        if mean.shape != std.shape:
            raise ShapeError(f"mean shape {mean.shape} differs from std shape {std.shape}")
        if np.any(std <= 0.0):
            raise InputError("feature scaling std must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def apply(self, xs: np.ndarray) -> np.ndarray:
        return (xs - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureScaling":
        if not isinstance(doc, dict):
            raise FormatError("field 'normalization' must be an object with 'mean' and 'std'")
        return cls(np.asarray(require_field(doc, "mean"), dtype=np.float64),
                   np.asarray(require_field(doc, "std"), dtype=np.float64))


@dataclass(frozen=True, eq=False)
class PatchDataset:
    """Labeled patches stacked along axis 0 with one-hot targets.

    ``patches`` is ``N x p_1 x ... x p_D``; ``targets`` is ``N x C``;
    ``coords`` holds the source pixel of each patch (``-1`` when synthetic).
    """

    patches: np.ndarray
    targets: np.ndarray
    coords: Optional[np.ndarray] = None
    split: str = "train"

    def __post_init__(self) -> None:
        patches = np.asarray(self.patches, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        if patches.ndim < 2:
            raise ShapeError("patches must be stacked along axis 0")
        if targets.ndim != 2 or targets.shape[0] != patches.shape[0]:
            raise ShapeError(
                f"targets shape {targets.shape} does not match {patches.shape[0]} patches"
            )
        if targets.size and (
            not np.all((targets == 0.0) | (targets == 1.0))
            or not np.all(targets.sum(axis=1) == 1.0)
        ):
            raise InputError("targets must be one-hot rows")
        coords = self.coords
        if coords is None:
            coords = -np.ones((patches.shape[0], 2), dtype=np.int64)
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
        if coords.shape[0] != patches.shape[0]:
            raise ShapeError("one coordinate pair per patch is required")
        object.__setattr__(self, "patches", patches)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "coords", coords)

    @classmethod
    def from_labels(cls, patches, labels, num_classes: int, coords=None, split: str = "train") -> "PatchDataset":
        """Build from 0-based class indices."""
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise InputError(f"labels must lie in 0..{num_classes - 1}")
        targets = np.zeros((labels.size, num_classes))
        targets[np.arange(labels.size), labels] = 1.0
        return cls(patches, targets, coords, split)

    def __len__(self) -> int:
        return self.patches.shape[0]

    @property
    def num_samples(self) -> int:
        return self.patches.shape[0]

    @property
    def num_classes(self) -> int:
        return self.targets.shape[1]

    @property
    def input_shape(self) -> tuple:
        return tuple(self.patches.shape[1:])

    @property
    def labels(self) -> np.ndarray:
        """0-based class index of every sample."""
        return np.argmax(self.targets, axis=1)

    def patch(self, i: int) -> DenseTensor:
        return DenseTensor.from_array(self.patches[i])

    def with_patches(self, patches: np.ndarray) -> "PatchDataset":
        return PatchDataset(patches, self.targets, self.coords, self.split)


# ---------------------------------------------------------------------------
# Cube and label files
# ---------------------------------------------------------------------------


def cube_paths(path) -> tuple:
    """Return ``(header, payload)`` for a cube given its stem or header path."""
    path = Path(path)
    if path.suffix in (CUBE_HEADER_SUFFIX, CUBE_PAYLOAD_SUFFIX):
        path = path.with_suffix("")
    return (
        path.with_name(path.name + CUBE_HEADER_SUFFIX),
        path.with_name(path.name + CUBE_PAYLOAD_SUFFIX),
    )


def default_labels_path(path) -> Path:
    header, _ = cube_paths(path)
    stem = header.with_suffix("")
    return stem.with_name(stem.name + LABELS_SUFFIX)


def _header_int(header: dict, name: str) -> int:
    if name not in header:
        raise FormatError(f"cube header is missing field '{name}'")
    value = header[name]
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise FormatError(f"cube header field '{name}' must be a positive integer, got {value!r}")
    return value


def load_cube(path) -> HyperCube:
    """Read a cube header and its band-sequential payload, widening to float64."""
    header_path, payload_path = cube_paths(path)
    try:
        with open(header_path, "r", encoding="utf-8") as f:
            header = json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"cube header {header_path} is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"cube header {header_path} must be a JSON object")
    if header.get("magic") != CUBE_MAGIC:
        raise FormatError(f"bad cube magic {header.get('magic')!r}, expected {CUBE_MAGIC!r}")
    for name, expected in (("dtype", "f32"), ("order", "bsq"), ("endianness", "little")):
        if header.get(name) != expected:
            raise FormatError(f"cube header field '{name}' must be {expected!r}, got {header.get(name)!r}")
    height = _header_int(header, "height")
    width = _header_int(header, "width")
    bands = _header_int(header, "bands")

    expected_bytes = height * width * bands * 4
    actual_bytes = os.path.getsize(payload_path)
    if actual_bytes != expected_bytes:
        raise FormatError(
            f"cube payload {payload_path} has {actual_bytes} bytes, expected {expected_bytes}"
        )
    planes = np.fromfile(payload_path, dtype="<f4").reshape(bands, height, width)
    cube = HyperCube.from_array(np.transpose(planes, (1, 2, 0)).astype(np.float64))
    logger.info("Loaded cube %s (%d x %d x %d)", header_path, height, width, bands)
    return cube


def save_cube(cube: HyperCube, path) -> tuple:
    """Write ``cube`` as header + BSQ payload; values are narrowed to float32."""
    header_path, payload_path = cube_paths(path)
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "magic": CUBE_MAGIC,
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "dtype": "f32",
        "order": "bsq",
        "endianness": "little",
    }
    with open(header_path, "w", encoding="utf-8") as f:
        json.dump(header, f)
    np.ascontiguousarray(np.transpose(cube.array, (2, 0, 1))).astype("<f4").tofile(payload_path)
    return header_path, payload_path


def save_labels(labels: LabelMap, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if labels.grid.size and labels.grid.max() > np.iinfo(np.uint16).max:
        raise FormatError("label ids do not fit in 16 bits")
    np.ascontiguousarray(labels.grid).astype("<u2").tofile(path)
    return path


def load_labels(path, height: int, width: int) -> LabelMap:
    expected_bytes = height * width * 2
    actual_bytes = os.path.getsize(path)
    if actual_bytes != expected_bytes:
        raise FormatError(f"label file {path} has {actual_bytes} bytes, expected {expected_bytes}")
    grid = np.fromfile(path, dtype="<u2").reshape(height, width)
    return LabelMap(grid)


def convert_mat(cube_mat, out_stem, cube_key: Optional[str] = None,
                labels_mat=None, labels_key: Optional[str] = None) -> tuple:
    """Convert ``.mat`` containers (e.g. Indian Pines, Pavia) to the cube format.

    When a key is omitted the container must hold exactly one array.
    """
    from scipy.io import loadmat

    def _array(mat_path, key):
        contents = {k: v for k, v in loadmat(mat_path).items() if not k.startswith("__")}
        if key is None:
            if len(contents) != 1:
                raise FormatError(f"{mat_path} holds {sorted(contents)}; pass the variable name")
            key = next(iter(contents))
        if key not in contents:
            raise FormatError(f"{mat_path} has no variable '{key}'")
        return np.asarray(contents[key])

    values = _array(cube_mat, cube_key)
    if values.ndim != 3:
        raise FormatError(f"cube variable must be H x W x B, got shape {values.shape}")
    cube = HyperCube.from_array(values.astype(np.float64))
    written = save_cube(cube, out_stem)
    labels_path = None
    if labels_mat is not None:
        grid = _array(labels_mat, labels_key)
        if grid.shape != (cube.height, cube.width):
            raise FormatError(f"label grid {grid.shape} does not match cube {cube.height} x {cube.width}")
        labels_path = save_labels(LabelMap(grid), default_labels_path(out_stem))
    return written + (labels_path,)


# ---------------------------------------------------------------------------
# Patches and splits
# ---------------------------------------------------------------------------


def _check_window(s: int) -> int:
    if not isinstance(s, (int, np.integer)) or s < 1 or s % 2 == 0:
        raise ConfigError(f"patch size must be a positive odd integer, got {s!r}")
    return int(s)


def extract_patch(cube: HyperCube, row: int, col: int, s: int) -> DenseTensor:
    """``s x s x B`` window centered at ``(row, col)``; positions off the image are 0."""
    s = _check_window(s)
    if not (0 <= row < cube.height and 0 <= col < cube.width):
        raise BoundsError(f"pixel ({row}, {col}) outside {cube.height} x {cube.width} image")
    r = s // 2
    out = np.zeros((s, s, cube.bands))
    top, bottom = max(row - r, 0), min(row + r + 1, cube.height)
    left, right = max(col - r, 0), min(col + r + 1, cube.width)
    out[top - (row - r):bottom - (row - r), left - (col - r):right - (col - r)] = \
        cube.array[top:bottom, left:right]
    return DenseTensor.from_array(out)


def extract_patches(cube: HyperCube, coords, s: int) -> np.ndarray:
    """Stack the patches of every ``(row, col)`` in ``coords`` into ``N x s x s x B``."""
    s = _check_window(s)
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    r = s // 2
    padded = np.pad(cube.array, ((r, r), (r, r), (0, 0)))
    out = np.empty((coords.shape[0], s, s, cube.bands))
    for n, (row, col) in enumerate(coords):
        if not (0 <= row < cube.height and 0 <= col < cube.width):
            raise BoundsError(f"pixel ({row}, {col}) outside {cube.height} x {cube.width} image")
        out[n] = padded[row:row + s, col:col + s]
    return out


def build_dataset(cube: HyperCube, labels: LabelMap, coords, window: int,
                  num_classes: Optional[int] = None, split: str = "train") -> PatchDataset:
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    num_classes = num_classes or labels.num_classes
    ids = labels.grid[coords[:, 0], coords[:, 1]] if coords.size else np.zeros(0, dtype=np.int64)
    if np.any(ids < 1):
        raise InputError("every patch must come from a labeled pixel")
    return PatchDataset.from_labels(
        extract_patches(cube, coords, window), ids - 1, num_classes, coords, split
    )


def _check_labels(cube: HyperCube, labels: LabelMap) -> None:
    if labels.shape != (cube.height, cube.width):
        raise ShapeError(f"label map {labels.shape} does not match cube {cube.height} x {cube.width}")


def training_count(class_count: int, n_per_class: int, train_fraction: Optional[float] = None) -> int:
    """Number of training pixels drawn from a class with ``class_count`` pixels."""
    if train_fraction is not None:
        if class_count < 2:
            return class_count
        return int(min(max(1, round(train_fraction * class_count)), class_count - 1))
    if class_count < n_per_class:
        return class_count // 2
    return n_per_class


def split_indices(labels: LabelMap, n_per_class: int, seed: int,
                  train_fraction: Optional[float] = None) -> tuple:
    """Per-class random split of labeled pixels into train/test coordinates.

    Classes with fewer than ``n_per_class`` pixels contribute half of them.
    """
    if n_per_class < 1:
        raise ConfigError(f"samples per class must be >= 1, got {n_per_class}")
    if train_fraction is not None and not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train fraction must lie in (0, 1), got {train_fraction}")
    rng = make_rng(seed)
    grid = labels.grid
    train, test = [], []
    for c in range(1, labels.num_classes + 1):
        members = np.argwhere(grid == c)
        if members.shape[0] == 0:
            logger.warning("Class %d has no labeled pixels; skipped in the split", c)
            continue
        n_train = training_count(members.shape[0], n_per_class, train_fraction)
        chosen = np.zeros(members.shape[0], dtype=bool)
        chosen[rng.choice(members.shape[0], size=n_train, replace=False)] = True
        train.append(members[chosen])
        test.append(members[~chosen])
    empty = np.zeros((0, 2), dtype=np.int64)
    train_coords = np.concatenate(train) if train else empty
    test_coords = np.concatenate(test) if test else empty
    return train_coords, test_coords


def split_per_class(cube: HyperCube, labels: LabelMap, n_per_class: int, seed: int,
                    window: int = 5, train_fraction: Optional[float] = None) -> tuple:
    """Return ``(train, test)`` patch datasets; unlabeled pixels are excluded."""
    _check_labels(cube, labels)
    train_coords, test_coords = split_indices(labels, n_per_class, seed, train_fraction)
    num_classes = labels.num_classes
    train = build_dataset(cube, labels, train_coords, window, num_classes, "train")
    test = build_dataset(cube, labels, test_coords, window, num_classes, "test")
    logger.info("Split %d train / %d test patches (seed %d)", len(train), len(test), seed)
    return train, test


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------


def _model_classes() -> dict:
    # imported lazily: the model modules depend on this one
    from linear_model import TensorLRModel, VectorLRModel
    from rank1_fnn import DenseFNNModel, Rank1FNNModel

    return {
        cls.model_type: cls
        for cls in (TensorLRModel, VectorLRModel, Rank1FNNModel, DenseFNNModel)
    }


def require_field(doc: dict, name: str):
    if name not in doc:
        raise FormatError(f"model file is missing field '{name}'")
    return doc[name]


def model_to_json(model, metadata: Optional[dict] = None) -> str:
    doc = {"format_version": MODEL_FORMAT_VERSION}
    doc.update(model.to_document())
    if metadata:
        doc["training"] = metadata
    return json.dumps(doc, indent=1) + "\n"


def save_model(model, path, metadata: Optional[dict] = None) -> Path:
    """Write ``model`` as a JSON document; floats use their shortest exact repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(model_to_json(model, metadata))
    return path


def model_from_document(doc: dict):
    if not isinstance(doc, dict):
        raise FormatError("model file must hold a JSON object")
    version = require_field(doc, "format_version")
    if version != MODEL_FORMAT_VERSION:
        raise FormatError(f"unsupported model format_version {version!r}, expected {MODEL_FORMAT_VERSION}")
    model_type = require_field(doc, "model_type")
    classes = _model_classes()
    if model_type not in classes:
        raise FormatError(f"unknown model_type {model_type!r}")
    try:
        model = classes[model_type].from_document(doc)
    except FormatError:
        raise
    except (ShapeError, InputError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid {model_type} model: {exc}") from exc
    scaling = model.feature_scaling
    if scaling is not None and scaling.mean.shape != (model.input_shape[-1],):
        raise FormatError(
            f"normalization has {scaling.mean.size} entries for {model.input_shape[-1]} bands"
        )
    return model


def load_model(path, with_metadata: bool = False):
    """Read a model file; optionally also return its ``training`` metadata."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file {path} is not valid JSON: {exc}") from exc
    model = model_from_document(doc)
    if with_metadata:
        return model, dict(doc.get("training") or {})
    return model


__all__ = [
    "CUBE_MAGIC",
    "HyperCube",
    "LabelMap",
    "FeatureScaling",
    "PatchDataset",
    "make_rng",
    "cube_paths",
    "default_labels_path",
    "load_cube",
    "save_cube",
    "load_labels",
    "save_labels",
    "convert_mat",
    "extract_patch",
    "extract_patches",
    "build_dataset",
    "training_count",
    "split_indices",
    "split_per_class",
    "require_field",
    "save_model",
    "load_model",
    "model_to_json",
    "model_from_document",
]
