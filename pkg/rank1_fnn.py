"""One-hidden-layer networks for tensor inputs.

``Rank1FNNModel`` constrains the input-to-hidden weights of every neuron to a
rank-1 tensor, so neuron ``i`` computes ``g(<w_D^{(i)} (x) ... (x) w_1^{(i)}, vec(X)>)``
with ``g`` the logistic sigmoid; a softmax output layer with weights ``V``
(``Q x C``) follows. ``DenseFNNModel`` is the fully connected network on
``vec(X)``; with one mode the two coincide.

Both are trained by the same block procedure: for each mode, every neuron's
factor column takes one backtracking gradient step against its transformed
input, then every output column takes one step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np
from scipy.special import expit

from data_io import FeatureScaling, PatchDataset, make_rng, require_field
from errors import ConfigError, FormatError, ShapeError
from linear_model import (
    TraceEntry,
    TrainConfig,
    TrainResult,
    augment_with_ones,
    backtracking_descent,
    check_classes,
    check_finite,
    class_probabilities,
    factor_shape,
    finite_logits,
    l2_penalty,
    prepare_inputs,
    rebalance,
    relative_decrease,
    single_batch,
    summed_nll,
    uniform_init,
)
from tensor_core import (
    CPFactorSet,
    TensorLike,
    batch_logits,
    batch_transformed_inputs,
    devectorize,
    khatri_rao_chain,
    rank1_approximation,
)

logger = logging.getLogger(__name__)

# pre-activation clip used only inside the sigmoid derivative
SATURATION = 35.0
# pre-activation spread and scatter-matrix power steps of data-initialized neurons
ACTIVATION_SPREAD = 2.0
POWER_STEPS = 3
# hidden-layer sizes used for the two reference scenes
HIDDEN_PRESETS = {"indian_pines": 75, "pavia": 100}


def sigmoid(x):
    """``1 / (1 + exp(-x))`` evaluated without overflow."""
    return expit(x)


def sigmoid_grad(x):
    g = expit(np.clip(x, -SATURATION, SATURATION))
    return g * (1.0 - g)


class BlockGradients(NamedTuple):
    hidden: np.ndarray
    output: np.ndarray


def _check_output(output: np.ndarray, hidden: int, classes: int) -> np.ndarray:
    output = np.array(output, dtype=np.float64)
    if output.shape != (hidden, classes):
        raise ShapeError(f"output weights shape {output.shape}, expected {(hidden, classes)}")
    output.setflags(write=False)
    return output


@dataclass(frozen=True, eq=False)
class Rank1FNNModel:
    hidden_weights: CPFactorSet
    output_weights: np.ndarray
    num_classes: int
    input_shape: tuple
    feature_scaling: Optional[FeatureScaling] = None
    augment_ones: bool = False

    model_type = "rank1_fnn"

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(p) for p in self.input_shape))
        if self.num_classes < 2:
            raise ShapeError(f"a classifier needs at least 2 classes, got {self.num_classes}")
        expected = factor_shape(self.input_shape, self.augment_ones)
        if self.hidden_weights.shape != expected:
            raise ShapeError(f"hidden factor rows {self.hidden_weights.shape} do not match {expected}")
        object.__setattr__(
            self, "output_weights",
            _check_output(self.output_weights, self.hidden_weights.rank, self.num_classes),
        )

    @property
    def num_hidden(self) -> int:
        return self.hidden_weights.rank

    def prepare(self, xs) -> np.ndarray:
        return prepare_inputs(xs, self.input_shape, self.feature_scaling, self.augment_ones)

    def preactivations(self, xs, mode: Optional[int] = None) -> np.ndarray:
        """``N x Q`` hidden pre-activations; ``mode`` selects the transformed-input route."""
        xs = self.prepare(xs)
        if mode is None:
            return batch_logits(xs, self.hidden_weights)
        tau = batch_transformed_inputs(xs, self.hidden_weights, mode)
        return np.einsum("niq,iq->nq", tau, self.hidden_weights.factors[mode])

    def logits_batch(self, xs) -> np.ndarray:
        return finite_logits(sigmoid(self.preactivations(xs)) @ self.output_weights)

    def predict_proba_batch(self, xs) -> np.ndarray:
        return class_probabilities(self.logits_batch(xs))

    def param_count(self) -> int:
        return self.hidden_weights.param_count() + int(self.output_weights.size)

    def to_document(self) -> dict:
        return {
            "model_type": self.model_type,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "Q": self.num_hidden,
            "augment_ones": self.augment_ones,
            "factors": [m.tolist() for m in self.hidden_weights.factors],
            "output_weights": self.output_weights.tolist(),
            "normalization": None if self.feature_scaling is None else self.feature_scaling.to_dict(),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "Rank1FNNModel":
        factors = require_field(doc, "factors")
        if not isinstance(factors, list) or not factors:
            raise FormatError("field 'factors' must be a non-empty list of matrices")
        hidden = CPFactorSet(tuple(np.asarray(m, dtype=np.float64) for m in factors))
        q = int(require_field(doc, "Q"))
        if hidden.rank != q:
            raise FormatError(f"field 'Q' is {q} but the factors have {hidden.rank} columns")
        stats = require_field(doc, "normalization")
        return cls(
            hidden,
            np.asarray(require_field(doc, "output_weights"), dtype=np.float64),
            int(require_field(doc, "num_classes")),
            tuple(require_field(doc, "input_shape")),
            None if stats is None else FeatureScaling.from_dict(stats),
            bool(doc.get("augment_ones", False)),
        )


@dataclass(frozen=True, eq=False)
class DenseFNNModel:
    """Fully connected network on ``vec(X)``; ``hidden_weights`` is ``Q x prod(p_l)``."""

    hidden_weights: np.ndarray
    output_weights: np.ndarray
    num_classes: int
    input_shape: tuple
    feature_scaling: Optional[FeatureScaling] = None
    augment_ones: bool = False

    model_type = "dense_fnn"

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(p) for p in self.input_shape))
        hidden = np.array(self.hidden_weights, dtype=np.float64)
        cols = int(np.prod(self.input_shape)) + int(self.augment_ones)
        if hidden.ndim != 2 or hidden.shape[1] != cols:
            raise ShapeError(f"hidden weights shape {hidden.shape}, expected (Q, {cols})")
        hidden.setflags(write=False)
        object.__setattr__(self, "hidden_weights", hidden)
        object.__setattr__(
            self, "output_weights",
            _check_output(self.output_weights, hidden.shape[0], self.num_classes),
        )

    @property
    def num_hidden(self) -> int:
        return self.hidden_weights.shape[0]

    def prepare(self, xs) -> np.ndarray:
        xs = prepare_inputs(xs, self.input_shape, self.feature_scaling, False)
        xs = xs.reshape(xs.shape[0], -1, order="F")
        return augment_with_ones(xs) if self.augment_ones else xs

    def logits_batch(self, xs) -> np.ndarray:
        return finite_logits(sigmoid(self.prepare(xs) @ self.hidden_weights.T) @ self.output_weights)

    def predict_proba_batch(self, xs) -> np.ndarray:
        return class_probabilities(self.logits_batch(xs))

    def param_count(self) -> int:
        return int(self.hidden_weights.size + self.output_weights.size)

    def to_document(self) -> dict:
        return {
            "model_type": self.model_type,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "Q": self.num_hidden,
            "augment_ones": self.augment_ones,
            "hidden_weights": self.hidden_weights.tolist(),
            "output_weights": self.output_weights.tolist(),
            "normalization": None if self.feature_scaling is None else self.feature_scaling.to_dict(),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "DenseFNNModel":
        hidden = np.asarray(require_field(doc, "hidden_weights"), dtype=np.float64)
        if hidden.ndim != 2 or hidden.shape[0] != int(require_field(doc, "Q")):
            raise FormatError("field 'hidden_weights' must be a Q x prod(p_l) matrix")
        stats = require_field(doc, "normalization")
        return cls(
            hidden,
            np.asarray(require_field(doc, "output_weights"), dtype=np.float64),
            int(require_field(doc, "num_classes")),
            tuple(require_field(doc, "input_shape")),
            None if stats is None else FeatureScaling.from_dict(stats),
            bool(doc.get("augment_ones", False)),
        )


# ---------------------------------------------------------------------------
# Forward pass and gradients
# ---------------------------------------------------------------------------


def hidden_activations(m: Rank1FNNModel, x: TensorLike, mode: Optional[int] = None) -> np.ndarray:
    """Hidden outputs ``u_i`` for one input; identical for every ``mode``."""
    return sigmoid(m.preactivations(single_batch(x), mode))[0]


def forward(m, x: TensorLike) -> np.ndarray:
    """Class probabilities ``softmax(V^T u)`` for one input."""
    return m.predict_proba_batch(single_batch(x))[0]


def dense_fnn_forward(m: DenseFNNModel, x: TensorLike) -> np.ndarray:
    return forward(m, x)


def _network_gradients(inputs: np.ndarray, weights: np.ndarray, output: np.ndarray,
                       targets: np.ndarray, l2: float) -> tuple:
    """Backprop through ``a = einsum(inputs, weights)``.

    ``inputs`` is ``N x p x Q`` (one transformed input per neuron). Returns
    ``(d_weights, d_output)``.
    """
    a = np.einsum("niq,iq->nq", inputs, weights)
    u = sigmoid(a)
    residual = class_probabilities(u @ output) - targets
    d_output = u.T @ residual
    delta = (residual @ output.T) * sigmoid_grad(a)
    d_weights = np.einsum("nq,niq->iq", delta, inputs)
    if l2 > 0:
        d_weights = d_weights + l2 * weights
        d_output = d_output + l2 * output
    return d_weights, d_output


def block_backprop(m: Rank1FNNModel, data: PatchDataset, l: int, l2: float = 0.0) -> BlockGradients:
    """Exact gradients of the objective w.r.t. hidden factor ``l`` and ``V``.

    The transformed inputs of mode ``l`` do not depend on factor ``l``, so
    this is the true partial derivative with the other factors held fixed.
    """
    xs = m.prepare(data.patches)
    tau = batch_transformed_inputs(xs, m.hidden_weights, l)
    d_hidden, d_output = _network_gradients(
        tau, m.hidden_weights.factors[l], m.output_weights, data.targets, l2
    )
    return BlockGradients(d_hidden, d_output)


def dense_fnn_backprop(m: DenseFNNModel, data: PatchDataset, l2: float = 0.0) -> BlockGradients:
    """Standard backprop; ``hidden`` is ``Q x prod(p_l)`` like the weights."""
    xs = m.prepare(data.patches)
    a = xs @ m.hidden_weights.T
    u = sigmoid(a)
    residual = class_probabilities(u @ m.output_weights) - data.targets
    d_output = u.T @ residual
    delta = (residual @ m.output_weights.T) * sigmoid_grad(a)
    d_hidden = delta.T @ xs
    if l2 > 0:
        d_hidden = d_hidden + l2 * m.hidden_weights
        d_output = d_output + l2 * m.output_weights
    return BlockGradients(d_hidden, d_output)


def network_nll(m, data: PatchDataset, l2: float = 0.0) -> float:
    """Summed negative log-likelihood plus ``(l2/2)`` times all squared weights."""
    value = summed_nll(m.logits_batch(data.patches), data.targets)
    if l2 > 0:
        if isinstance(m, Rank1FNNModel):
            mats = list(m.hidden_weights.factors) + [m.output_weights]
        else:
            mats = [m.hidden_weights, m.output_weights]
        value += l2_penalty(l2, mats)
    return value


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _principal_neurons(xs: np.ndarray, hidden: CPFactorSet, rng: np.random.Generator,
                       augmented: bool) -> CPFactorSet:
    """Pull random neurons into the leading principal subspace of ``xs``.

    Each neuron's weight tensor takes ``POWER_STEPS`` multiplications by the
    sample scatter matrix, keeps its rank-1 part and is scaled so that its
    pre-activations spread by ``ACTIVATION_SPREAD`` around a random offset.
    The offset goes into the ones row when inputs are augmented.
    """
    shape = xs.shape[1:]
    flat = xs.reshape(xs.shape[0], -1, order="F")
    mean = flat.mean(axis=0)
    centered = flat - mean
    directions = khatri_rao_chain(reversed(hidden.factors), hidden.rank)
    for _ in range(POWER_STEPS):
        directions = centered.T @ (centered @ directions)
        norms = np.linalg.norm(directions, axis=0)
        directions = directions / np.where(norms > 0.0, norms, 1.0)
    offsets = rng.uniform(-ACTIVATION_SPREAD, ACTIVATION_SPREAD, size=hidden.rank)
    mats = [np.array(m) for m in hidden.factors]
    for i in range(hidden.rank):
        sigma, vectors = rank1_approximation(devectorize(directions[:, i], shape))
        if sigma <= 0.0:
            continue
        unit = khatri_rao_chain([v[:, None] for v in reversed(vectors)])[:, 0]
        spread = float(np.std(centered @ unit))
        if spread <= 0.0:
            continue
        gain = (ACTIVATION_SPREAD / spread) ** (1.0 / len(shape))
        columns = [gain * v for v in vectors]
        if augmented:
            ones = float(np.prod([np.sum(c) for c in columns[:-1]]))
            if abs(ones) > 1e-6:
                columns[-1][-1] = (offsets[i] - gain ** len(shape) * float(mean @ unit)) / ones
        for l, c in enumerate(columns):
            mats[l][:, i] = c
    logger.debug("Initialized %d neurons from %d power steps", hidden.rank, POWER_STEPS)
    return CPFactorSet(tuple(mats))


def init_network(xs: np.ndarray, num_hidden: int, num_classes: int, cfg: TrainConfig) -> tuple:
    """Initial ``(hidden CPFactorSet, output matrix)`` for prepared inputs ``xs``.

    Factors start ``U(+-s/sqrt(p_l))`` in mode order, then ``V ~ U(+-s/sqrt(Q))``;
    with ``cfg.init == "data"`` the neurons are then moved by
    :func:`_principal_neurons`.
    """
    rng = make_rng(cfg.seed)
    hidden = CPFactorSet(tuple(uniform_init(rng, p, num_hidden, cfg.init_scale) for p in xs.shape[1:]))
    output = uniform_init(rng, num_hidden, num_classes, cfg.init_scale)
    if cfg.init == "data":
        hidden = _principal_neurons(xs, hidden, rng, cfg.augment_ones)
    return hidden, output


def _objective_from(z: np.ndarray, targets: np.ndarray, penalty: float) -> float:
    return summed_nll(z, targets) + penalty


def _fit_network(xs: np.ndarray, targets: np.ndarray, hidden: CPFactorSet,
                 output: np.ndarray, cfg: TrainConfig) -> tuple:
    n = xs.shape[0]
    num_hidden = hidden.rank
    num_classes = targets.shape[1]
    output = np.array(output)
    l2 = cfg.l2

    def total_sq() -> float:
        return float(sum(np.sum(m * m) for m in hidden.factors) + np.sum(output * output))

    def penalty_without(sq: float, w: np.ndarray) -> float:
        return 0.5 * l2 * (sq - float(np.sum(w * w))) if l2 > 0 else 0.0

    objective = check_finite(
        _objective_from(sigmoid(batch_logits(xs, hidden)) @ output, targets,
                        l2_penalty(l2, list(hidden.factors) + [output])),
        0, "init",
    )
    trace: List[TraceEntry] = [TraceEntry(0, "init", objective)]
    converged = False
    sweep = 0
    for sweep in range(1, cfg.max_sweeps + 1):
        start = objective
        u = None
        for l in range(hidden.ndim):
            tau = batch_transformed_inputs(xs, hidden, l)
            weights = np.array(hidden.factors[l])
            a = np.einsum("niq,iq->nq", tau, weights)
            u = sigmoid(a)
            z = u @ output
            for i in range(num_hidden):
                tau_i = tau[:, :, i]
                v_i = output[i]
                u_i = u[:, i].copy()
                rest = penalty_without(total_sq(), weights[:, i])

                def neuron_objective(w, tau_i=tau_i, v_i=v_i, u_i=u_i, rest=rest, z=z):
                    shifted = z + np.outer(sigmoid(tau_i @ w) - u_i, v_i)
                    return _objective_from(shifted, targets, rest + l2_penalty(l2, [w]))

                def neuron_gradient(w, tau_i=tau_i, v_i=v_i, u_i=u_i, z=z):
                    a_i = tau_i @ w
                    shifted = z + np.outer(sigmoid(a_i) - u_i, v_i)
                    residual = class_probabilities(shifted) - targets
                    grad = tau_i.T @ ((residual @ v_i) * sigmoid_grad(a_i))
                    return grad + l2 * w if l2 > 0 else grad

                where = f"mode {l}, neuron {i}"
                current = neuron_objective(weights[:, i])
                w_new, objective = backtracking_descent(
                    neuron_objective, neuron_gradient, weights[:, i].copy(), current, 1, cfg, n,
                    f"sweep {sweep}, {where}",
                )
                check_finite(objective, sweep, where)
                weights[:, i] = w_new
                a[:, i] = tau_i @ w_new
                u[:, i] = sigmoid(a[:, i])
                z = z + np.outer(u[:, i] - u_i, v_i)
                hidden = hidden.replace(l, weights)
                trace.append(TraceEntry(sweep, where, objective))

        z = u @ output
        for k in range(num_classes):
            rest = penalty_without(total_sq(), output[:, k])

            def output_objective(v, k=k, rest=rest, z=z):
                shifted = z.copy()
                shifted[:, k] = u @ v
                return _objective_from(shifted, targets, rest + l2_penalty(l2, [v]))

            def output_gradient(v, k=k, z=z):
                shifted = z.copy()
                shifted[:, k] = u @ v
                residual = class_probabilities(shifted)[:, k] - targets[:, k]
                grad = u.T @ residual
                return grad + l2 * v if l2 > 0 else grad

            where = f"output {k}"
            current = output_objective(output[:, k])
            v_new, objective = backtracking_descent(
                output_objective, output_gradient, output[:, k].copy(), current, 1, cfg, n,
                f"sweep {sweep}, {where}",
            )
            check_finite(objective, sweep, where)
            output[:, k] = v_new
            z = z.copy()
            z[:, k] = u @ v_new
            trace.append(TraceEntry(sweep, where, objective))

        rescaled = rebalance(hidden, l2)
        rescaled_objective = _objective_from(
            sigmoid(batch_logits(xs, rescaled)) @ output, targets,
            l2_penalty(l2, list(rescaled.factors) + [output]),
        )
        if math.isfinite(rescaled_objective) and rescaled_objective <= objective + 1e-12 * max(1.0, abs(objective)):
            hidden, objective = rescaled, rescaled_objective
        change = relative_decrease(start, objective)
        logger.info("Sweep %d: loss %.6g (relative decrease %.3g)", sweep, objective, change)
        if change < cfg.rel_tol:
            converged = True
            break
    logger.info("Training stopped after %d sweeps (%s)", sweep,
                "converged" if converged else "max_sweeps reached")
    return hidden, output, trace, sweep, converged


def _check_hidden(num_hidden: int) -> None:
    if num_hidden < 1:
        raise ConfigError(f"the hidden layer needs at least one neuron, got {num_hidden}")


def fit_rank1_fnn(data: PatchDataset, cfg: TrainConfig = TrainConfig(), num_hidden: int = 75,
                  feature_scaling: Optional[FeatureScaling] = None,
                  init: Optional[tuple] = None) -> TrainResult:
    """Train a :class:`Rank1FNNModel` with ``num_hidden`` sigmoid neurons.

    ``init`` may supply ``(hidden CPFactorSet, output matrix)``.
    """
    cfg.validate()
    _check_hidden(num_hidden)
    check_classes(data)
    xs = prepare_inputs(data.patches, data.input_shape, None, cfg.augment_ones)
    if init is None:
        init = init_network(xs, num_hidden, data.num_classes, cfg)
    hidden, output = init
    if hidden.shape != xs.shape[1:] or hidden.rank != num_hidden:
        raise ShapeError(f"initial hidden factors {hidden} do not fit input {xs.shape[1:]} and Q={num_hidden}")
    hidden, output, trace, sweeps, converged = _fit_network(xs, data.targets, hidden, output, cfg)
    model = Rank1FNNModel(hidden, output, data.num_classes, data.input_shape,
                          feature_scaling, cfg.augment_ones)
    return TrainResult(model, trace, sweeps, converged)


def dense_fnn_fit(data: PatchDataset, cfg: TrainConfig = TrainConfig(), num_hidden: int = 75,
                  feature_scaling: Optional[FeatureScaling] = None,
                  init: Optional[tuple] = None) -> TrainResult:
    """Train the fully connected baseline on ``vec(X)`` with the same schedule.

    The dense network is the one-mode case of the rank-1 network, so it runs
    through the same per-neuron engine: each sweep steps every row of the
    hidden matrix once, then every output column. The per-row gradients are
    the rows of :func:`dense_fnn_backprop`. ``init`` may supply
    ``(hidden Q x prod(p_l), output Q x C)``.
    """
    cfg.validate()
    _check_hidden(num_hidden)
    check_classes(data)
    xs = data.patches.reshape(data.num_samples, -1, order="F")
    if cfg.augment_ones:
        xs = augment_with_ones(xs)
    if init is None:
        hidden_set, output = init_network(xs, num_hidden, data.num_classes, cfg)
    else:
        hidden_set, output = CPFactorSet((np.asarray(init[0]).T,)), init[1]
    hidden_set, output, trace, sweeps, converged = _fit_network(xs, data.targets, hidden_set, output, cfg)
    model = DenseFNNModel(hidden_set.factors[0].T, output, data.num_classes, data.input_shape,
                          feature_scaling, cfg.augment_ones)
    return TrainResult(model, trace, sweeps, converged)


def rank1_fnn_param_count(shape, num_hidden: int, num_classes: int) -> int:
    return num_hidden * int(sum(shape)) + num_hidden * num_classes


def dense_fnn_param_count(shape, num_hidden: int, num_classes: int) -> int:
    return num_hidden * int(np.prod(shape)) + num_hidden * num_classes


__all__ = [
    "HIDDEN_PRESETS",
    "sigmoid",
    "sigmoid_grad",
    "BlockGradients",
    "Rank1FNNModel",
    "DenseFNNModel",
    "hidden_activations",
    "forward",
    "dense_fnn_forward",
    "block_backprop",
    "dense_fnn_backprop",
    "network_nll",
    "init_network",
    "fit_rank1_fnn",
    "dense_fnn_fit",
    "rank1_fnn_param_count",
    "dense_fnn_param_count",
]
