"""Tensor-based multinomial logistic regression and its vectorized baseline.

The tensor model scores class ``k`` with ``<w_D^{(k)} (x) ... (x) w_1^{(k)}, vec(X)>``
where the per-class weight tensor is rank-1; the factors are stored as a
:class:`~tensor_core.CPFactorSet` with one column per class. Training cycles
through the modes, solving each block as an ordinary logistic regression on
transformed inputs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, List, Optional

import numpy as np
from scipy.special import log_softmax, softmax

from data_io import FeatureScaling, PatchDataset, make_rng, require_field
from errors import ConfigError, FormatError, InputError, ShapeError, TrainingError
from tensor_core import (
    CPFactorSet,
    TensorLike,
    as_array,
    batch_logits,
    batch_transformed_inputs,
    normalize_columns,
    rank1_approximation,
)

logger = logging.getLogger(__name__)

LOG_FLOOR = math.log(1e-300)
# relative-change denominator floor
_TINY = 1e-300
INIT_MODES = ("data", "random")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings shared by every trainer.

    ``init`` picks the starting point: ``"data"`` derives it from the training
    inputs, ``"random"`` draws every factor uniformly with bound
    ``init_scale / sqrt(p_l)``. Steps are ``learning_rate / N`` times the
    gradient of the summed objective and are halved until the objective does
    not increase.
    """

    max_sweeps: int = 200
    inner_steps: int = 5
    learning_rate: float = 1.0
    l2: float = 1.0
    rel_tol: float = 1e-6
    seed: int = 0
    init_scale: float = 0.1
    max_halvings: int = 40
    augment_ones: bool = False
    init: str = "data"

    def validate(self) -> "TrainConfig":
        if self.max_sweeps < 1:
            raise ConfigError(f"max_sweeps must be >= 1, got {self.max_sweeps}")
        if self.inner_steps < 1:
            raise ConfigError(f"inner_steps must be >= 1, got {self.inner_steps}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not self.l2 >= 0:
            raise ConfigError(f"l2 must be non-negative, got {self.l2}")
        if not 0 < self.rel_tol < 1:
            raise ConfigError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if not self.init_scale > 0:
            raise ConfigError(f"init_scale must be positive, got {self.init_scale}")
        if self.max_halvings < 0:
            raise ConfigError(f"max_halvings must be >= 0, got {self.max_halvings}")
        if self.init not in INIT_MODES:
            raise ConfigError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        return self

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def updated(self, **changes) -> "TrainConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


@dataclass(frozen=True)
class TraceEntry:
    sweep: int
    block: str
    objective: float


@dataclass
class TrainResult:
    model: object
    trace: List[TraceEntry] = field(default_factory=list)
    sweeps: int = 0
    converged: bool = False

    @property
    def objectives(self) -> np.ndarray:
        return np.array([entry.objective for entry in self.trace])


# ---------------------------------------------------------------------------
# Input preparation shared by all models
# ---------------------------------------------------------------------------


def augment_with_ones(xs: np.ndarray) -> np.ndarray:
    """Append an all-ones slice along the last mode of every sample."""
    pad_shape = xs.shape[:-1] + (1,)
    return np.concatenate([xs, np.ones(pad_shape)], axis=-1)


def prepare_inputs(xs, input_shape: tuple, scaling: Optional[FeatureScaling],
                   augment: bool) -> np.ndarray:
    """Validate a batch ``N x input_shape`` and apply scaling and augmentation."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.shape[1:] != tuple(input_shape):
        raise ShapeError(f"input shape {xs.shape[1:]} does not match model shape {tuple(input_shape)}")
    if not np.all(np.isfinite(xs)):
        raise InputError("inputs contain non-finite values")
    if scaling is not None:
        xs = scaling.apply(xs)
    if augment:
        xs = augment_with_ones(xs)
    return xs


def single_batch(x: TensorLike) -> np.ndarray:
    return as_array(x)[None, ...]


def class_probabilities(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with the max logit subtracted first."""
    return softmax(logits, axis=-1)


def finite_logits(logits: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(logits)):
        raise InputError("logits overflow: inputs are too large for the model weights")
    return logits


def summed_nll(logits: np.ndarray, targets: np.ndarray) -> float:
    """``-sum_i sum_k t_ik log p_ik`` with probabilities floored at 1e-300."""
    log_p = np.maximum(log_softmax(logits, axis=1), LOG_FLOOR)
    return float(-np.sum(targets * log_p))


def l2_penalty(l2: float, mats) -> float:
    if l2 <= 0:
        return 0.0
    return 0.5 * l2 * float(sum(np.sum(m * m) for m in mats))


def uniform_init(rng: np.random.Generator, rows: int, cols: int, scale: float) -> np.ndarray:
    bound = scale / math.sqrt(rows)
    return rng.uniform(-bound, bound, size=(rows, cols))


def check_classes(data: PatchDataset) -> None:
    if data.num_samples == 0:
        raise InputError("training data is empty")
    present = int(np.count_nonzero(data.targets.sum(axis=0)))
    if present < 2:
        raise InputError(f"training needs at least 2 classes present, found {present}")


def backtracking_descent(objective: Callable[[np.ndarray], float],
                         gradient: Callable[[np.ndarray], np.ndarray],
                         w: np.ndarray, current: float, steps: int,
                         cfg: TrainConfig, num_samples: int, where: str) -> tuple:
    """Take up to ``steps`` gradient steps on ``w``, halving the step on increase.

    Returns ``(w, objective)``; the objective never increases.
    """
    for _ in range(steps):
        grad = gradient(w)
        rate = cfg.learning_rate / num_samples
        for _ in range(cfg.max_halvings + 1):
            candidate = w - rate * grad
            value = objective(candidate)
            if math.isfinite(value) and value <= current:
                w, current = candidate, value
                break
            rate *= 0.5
        else:
            logger.debug("Backtracking exhausted at %s", where)
            break
    return w, current


def check_finite(value: float, sweep: int, block: str) -> float:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite objective at sweep {sweep}, block {block}")
    return value


def relative_decrease(before: float, after: float) -> float:
    return (before - after) / max(abs(before), _TINY)


def rebalance(factors: CPFactorSet, l2: float) -> CPFactorSet:
    """Fix the scale indeterminacy of the CP columns after a sweep.

    Without a penalty every factor but the last gets unit-norm columns and the
    last absorbs the scale. With ``l2 > 0`` the column norms are equalized
    instead, which keeps every product and minimizes the penalty.
    """
    if l2 <= 0 or factors.ndim == 1:
        return normalize_columns(factors)
    mats = [np.array(m) for m in factors.factors]
    norms = np.stack([np.linalg.norm(m, axis=0) for m in mats])
    alive = np.all(norms > 0.0, axis=0)
    target = np.exp(np.mean(np.log(np.where(norms > 0.0, norms, 1.0)), axis=0))
    for l, m in enumerate(mats):
        scale = np.where(alive, target / np.where(norms[l] > 0.0, norms[l], 1.0), 1.0)
        mats[l] = m * scale
    return CPFactorSet(tuple(mats))


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


def _matrix(doc: dict, name: str) -> np.ndarray:
    value = np.asarray(require_field(doc, name), dtype=np.float64)
    if value.ndim != 2:
        raise FormatError(f"field '{name}' must be a matrix")
    return value


def _scaling_from(doc: dict) -> Optional[FeatureScaling]:
    stats = require_field(doc, "normalization")
    return None if stats is None else FeatureScaling.from_dict(stats)


def _scaling_to(scaling: Optional[FeatureScaling]):
    return None if scaling is None else scaling.to_dict()


def factor_shape(input_shape: tuple, augment: bool) -> tuple:
    shape = tuple(input_shape)
    return shape[:-1] + (shape[-1] + 1,) if augment else shape


@dataclass(frozen=True, eq=False)
class TensorLRModel:
    """Rank-1 tensor logistic regression: ``weights`` has one column per class."""

    weights: CPFactorSet
    num_classes: int
    input_shape: tuple
    feature_scaling: Optional[FeatureScaling] = None
    augment_ones: bool = False

    model_type = "tensor_lr"

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(p) for p in self.input_shape))
        if self.num_classes < 2:
            raise ShapeError(f"a classifier needs at least 2 classes, got {self.num_classes}")
        if self.weights.rank != self.num_classes:
            raise ShapeError(f"weights have {self.weights.rank} columns for {self.num_classes} classes")
        expected = factor_shape(self.input_shape, self.augment_ones)
        if self.weights.shape != expected:
            raise ShapeError(f"factor rows {self.weights.shape} do not match input shape {expected}")

    def prepare(self, xs) -> np.ndarray:
        return prepare_inputs(xs, self.input_shape, self.feature_scaling, self.augment_ones)

    def logits_batch(self, xs) -> np.ndarray:
        return finite_logits(batch_logits(self.prepare(xs), self.weights))

    def predict_proba_batch(self, xs) -> np.ndarray:
        return class_probabilities(self.logits_batch(xs))

    def param_count(self) -> int:
        return self.weights.param_count()

    def to_document(self) -> dict:
        return {
            "model_type": self.model_type,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "augment_ones": self.augment_ones,
            "factors": [m.tolist() for m in self.weights.factors],
            "normalization": _scaling_to(self.feature_scaling),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "TensorLRModel":
        factors = require_field(doc, "factors")
        if not isinstance(factors, list) or not factors:
            raise FormatError("field 'factors' must be a non-empty list of matrices")
        mats = tuple(_matrix({"factors": m}, "factors") for m in factors)
        return cls(
            CPFactorSet(mats),
            int(require_field(doc, "num_classes")),
            tuple(require_field(doc, "input_shape")),
            _scaling_from(doc),
            bool(doc.get("augment_ones", False)),
        )


@dataclass(frozen=True, eq=False)
class VectorLRModel:
    """Softmax regression on ``vec(X)``: ``weights`` is ``prod(p_l) x C``."""

    weights: np.ndarray
    num_classes: int
    input_shape: tuple
    feature_scaling: Optional[FeatureScaling] = None
    augment_ones: bool = False

    model_type = "vector_lr"

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(p) for p in self.input_shape))
        weights = np.array(self.weights, dtype=np.float64)
        rows = int(np.prod(self.input_shape)) + int(self.augment_ones)
        if weights.shape != (rows, self.num_classes):
            raise ShapeError(f"weights shape {weights.shape}, expected {(rows, self.num_classes)}")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    def prepare(self, xs) -> np.ndarray:
        xs = prepare_inputs(xs, self.input_shape, self.feature_scaling, False)
        xs = xs.reshape(xs.shape[0], -1, order="F")
        return augment_with_ones(xs) if self.augment_ones else xs

    def logits_batch(self, xs) -> np.ndarray:
        return finite_logits(self.prepare(xs) @ self.weights)

    def predict_proba_batch(self, xs) -> np.ndarray:
        return class_probabilities(self.logits_batch(xs))

    def param_count(self) -> int:
        return int(self.weights.size)

    def to_document(self) -> dict:
        return {
            "model_type": self.model_type,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "augment_ones": self.augment_ones,
            "weights": self.weights.tolist(),
            "normalization": _scaling_to(self.feature_scaling),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "VectorLRModel":
        return cls(
            _matrix(doc, "weights"),
            int(require_field(doc, "num_classes")),
            tuple(require_field(doc, "input_shape")),
            _scaling_from(doc),
            bool(doc.get("augment_ones", False)),
        )


# ---------------------------------------------------------------------------
# Prediction and objective
# ---------------------------------------------------------------------------


def predict_proba(m, x: TensorLike) -> np.ndarray:
    """Class probabilities for a single input tensor."""
    return m.predict_proba_batch(single_batch(x))[0]


def predict_class(m, x: TensorLike) -> int:
    """Most probable class (0-based); ties go to the lowest index."""
    return int(np.argmax(predict_proba(m, x)))


def predict_classes(m, xs) -> np.ndarray:
    return np.argmax(m.predict_proba_batch(xs), axis=1)


def accuracy(m, data: PatchDataset) -> float:
    if data.num_samples == 0:
        return float("nan")
    return float(np.mean(predict_classes(m, data.patches) == data.labels))


def _model_mats(m) -> list:
    if isinstance(m, TensorLRModel):
        return list(m.weights.factors)
    return [m.weights]


def nll(m, data: PatchDataset, regularized: bool = False, l2: float = 0.0) -> float:
    """Negative log-likelihood of ``data``; adds ``(l2/2) sum ||W_l||^2`` when ``regularized``."""
    if data.num_samples == 0:
        raise InputError("nll needs a non-empty dataset")
    value = summed_nll(m.logits_batch(data.patches), data.targets)
    if regularized:
        value += l2_penalty(l2, _model_mats(m))
    return value


def _block_grad(tau: np.ndarray, targets: np.ndarray, w: np.ndarray, l2: float) -> np.ndarray:
    logits = np.einsum("nic,ic->nc", tau, w)
    residual = class_probabilities(logits) - targets
    grad = np.einsum("nc,nic->ic", residual, tau)
    if l2 > 0:
        grad = grad + l2 * w
    return grad


def _block_objective(tau: np.ndarray, targets: np.ndarray, w: np.ndarray,
                     l2: float, other_penalty: float) -> float:
    logits = np.einsum("nic,ic->nc", tau, w)
    return summed_nll(logits, targets) + l2_penalty(l2, [w]) + other_penalty


def block_gradient(m: TensorLRModel, data: PatchDataset, l: int, l2: float = 0.0) -> np.ndarray:
    """Exact ``p_l x C`` gradient of the (regularized) objective w.r.t. factor ``l``."""
    xs = m.prepare(data.patches)
    tau = batch_transformed_inputs(xs, m.weights, l)
    return _block_grad(tau, data.targets, m.weights.factors[l], l2)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def init_factors(shape: tuple, columns: int, cfg: TrainConfig,
                 rng: np.random.Generator) -> CPFactorSet:
    return CPFactorSet(tuple(uniform_init(rng, p, columns, cfg.init_scale) for p in shape))


def class_mean_init(xs: np.ndarray, targets: np.ndarray, cfg: TrainConfig) -> CPFactorSet:
    """Rank-1 fit of every class-mean input, its scale split evenly over the modes.

    With identity noise this is the nearest-class-mean scorer restricted to
    rank-1 weights. Classes without samples fall back to random columns.
    """
    shape = xs.shape[1:]
    counts = np.maximum(targets.sum(axis=0), 1.0).reshape((-1,) + (1,) * len(shape))
    means = np.einsum("nc,n...->c...", targets, xs) / counts
    factors = [np.array(m) for m in init_factors(shape, targets.shape[1], cfg, make_rng(cfg.seed)).factors]
    for k in range(targets.shape[1]):
        sigma, vectors = rank1_approximation(means[k])
        if sigma <= 0.0:
            logger.debug("Class %d has no mean signal; keeping its random start", k)
            continue
        scale = sigma ** (1.0 / len(shape))
        for l, v in enumerate(vectors):
            factors[l][:, k] = scale * v
    return CPFactorSet(tuple(factors))


def initial_factors(xs: np.ndarray, targets: np.ndarray, cfg: TrainConfig) -> CPFactorSet:
    if cfg.init == "random":
        return init_factors(xs.shape[1:], targets.shape[1], cfg, make_rng(cfg.seed))
    return class_mean_init(xs, targets, cfg)


def _fit_factors(xs: np.ndarray, targets: np.ndarray, factors: CPFactorSet,
                 cfg: TrainConfig) -> tuple:
    """Block-alternating minimization over the factors of ``factors``."""
    n = xs.shape[0]
    objective = check_finite(
        summed_nll(batch_logits(xs, factors), targets) + l2_penalty(cfg.l2, factors.factors),
        0, "init",
    )
    trace: List[TraceEntry] = [TraceEntry(0, "init", objective)]
    converged = False
    sweep = 0
    for sweep in range(1, cfg.max_sweeps + 1):
        start = objective
        for l in range(factors.ndim):
            tau = batch_transformed_inputs(xs, factors, l)
            others = l2_penalty(cfg.l2, [f for q, f in enumerate(factors.factors) if q != l])
            w, objective = backtracking_descent(
                lambda w: _block_objective(tau, targets, w, cfg.l2, others),
                lambda w: _block_grad(tau, targets, w, cfg.l2),
                np.array(factors.factors[l]), objective, cfg.inner_steps, cfg, n,
                f"sweep {sweep}, mode {l}",
            )
            check_finite(objective, sweep, f"mode {l}")
            factors = factors.replace(l, w)
            trace.append(TraceEntry(sweep, f"mode {l}", objective))
        rescaled = rebalance(factors, cfg.l2)
        rescaled_objective = summed_nll(batch_logits(xs, rescaled), targets) + \
            l2_penalty(cfg.l2, rescaled.factors)
        if math.isfinite(rescaled_objective) and rescaled_objective <= objective + 1e-12 * max(1.0, abs(objective)):
            factors, objective = rescaled, rescaled_objective
        change = relative_decrease(start, objective)
        logger.info("Sweep %d: objective %.6g (relative decrease %.3g)", sweep, objective, change)
        if change < cfg.rel_tol:
            converged = True
            break
    logger.info("Training stopped after %d sweeps (%s)", sweep,
                "converged" if converged else "max_sweeps reached")
    return factors, trace, sweep, converged


def fit_tensor_lr(data: PatchDataset, cfg: TrainConfig = TrainConfig(),
                  feature_scaling: Optional[FeatureScaling] = None,
                  init: Optional[CPFactorSet] = None) -> TrainResult:
    """Train a :class:`TensorLRModel` by block-alternating descent.

    ``data`` must already be normalized; ``feature_scaling`` is only recorded
    in the model so raw inputs are normalized at prediction time.
    """
    cfg.validate()
    check_classes(data)
    xs = prepare_inputs(data.patches, data.input_shape, None, cfg.augment_ones)
    shape = xs.shape[1:]
    if init is None:
        init = initial_factors(xs, data.targets, cfg)
    elif init.shape != shape or init.rank != data.num_classes:
        raise ShapeError(f"initial factors {init} do not fit input {shape} with {data.num_classes} classes")
    factors, trace, sweeps, converged = _fit_factors(xs, data.targets, init, cfg)
    model = TensorLRModel(factors, data.num_classes, data.input_shape, feature_scaling, cfg.augment_ones)
    return TrainResult(model, trace, sweeps, converged)


def fit_vector_lr(data: PatchDataset, cfg: TrainConfig = TrainConfig(),
                  feature_scaling: Optional[FeatureScaling] = None,
                  init: Optional[np.ndarray] = None) -> TrainResult:
    """Train the vectorized softmax-regression baseline with the same safeguards.

    The single weight matrix is one block; each sweep takes ``inner_steps`` steps.
    """
    cfg.validate()
    check_classes(data)
    xs = data.patches.reshape(data.num_samples, -1, order="F")
    if cfg.augment_ones:
        xs = augment_with_ones(xs)
    init = initial_factors(xs, data.targets, cfg) if init is None else CPFactorSet((init,))
    factors, trace, sweeps, converged = _fit_factors(xs, data.targets, init, cfg)
    model = VectorLRModel(factors.factors[0], data.num_classes, data.input_shape,
                          feature_scaling, cfg.augment_ones)
    return TrainResult(model, trace, sweeps, converged)


def param_count(model) -> int:
    """``C * sum(p_l)`` for the tensor model, ``C * prod(p_l)`` for the vector model."""
    return model.param_count()


def tensor_lr_param_count(shape, num_classes: int) -> int:
    return num_classes * int(sum(shape))


def vector_lr_param_count(shape, num_classes: int) -> int:
    return num_classes * int(np.prod(shape))


__all__ = [
    "TrainConfig",
    "TraceEntry",
    "TrainResult",
    "TensorLRModel",
    "VectorLRModel",
    "predict_proba",
    "predict_class",
    "predict_classes",
    "accuracy",
    "nll",
    "block_gradient",
    "init_factors",
    "class_mean_init",
    "initial_factors",
    "fit_tensor_lr",
    "fit_vector_lr",
    "param_count",
    "tensor_lr_param_count",
    "vector_lr_param_count",
    "prepare_inputs",
    "finite_logits",
    "backtracking_descent",
    "rebalance",
]
