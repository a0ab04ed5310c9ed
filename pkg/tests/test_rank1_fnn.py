import numpy as np
import pytest

from conftest import finite_difference, random_dataset, random_factors
from data_io import PatchDataset
from errors import ConfigError, InputError, ShapeError
from linear_model import TrainConfig, accuracy, fit_tensor_lr, prepare_inputs
from rank1_fnn import (
    DenseFNNModel,
    Rank1FNNModel,
    block_backprop,
    dense_fnn_backprop,
    dense_fnn_fit,
    dense_fnn_forward,
    dense_fnn_param_count,
    fit_rank1_fnn,
    forward,
    hidden_activations,
    init_network,
    network_nll,
    rank1_fnn_param_count,
    sigmoid,
    sigmoid_grad,
)
from synthetic import xor_dataset
from tensor_core import CPFactorSet, batch_logits, kronecker


def expanded_rows(f: CPFactorSet) -> np.ndarray:
    rows = []
    for i in range(f.rank):
        vec = np.ones(1)
        for w in f.column(i):
            vec = kronecker(w, vec)
        rows.append(vec)
    return np.stack(rows)


def test_sigmoid_values(rng):
    assert sigmoid(0.0) == 0.5
    x = rng.uniform(-700, 700, size=50)
    assert np.allclose(sigmoid(x) + sigmoid(-x), 1.0, rtol=0, atol=1e-15)
    assert np.all(np.isfinite(sigmoid(np.array([-800.0, 800.0]))))


def test_sigmoid_derivative(rng):
    x = rng.uniform(-5, 5, size=20)
    h = 1e-6
    numeric = (sigmoid(x + h) - sigmoid(x - h)) / (2 * h)
    assert np.allclose(sigmoid_grad(x), numeric, rtol=1e-7)


def test_zero_factors_give_half_activations():
    f = CPFactorSet((np.zeros((2, 4)), np.zeros((3, 4))))
    m = Rank1FNNModel(f, np.zeros((4, 3)), 3, (2, 3))
    assert np.allclose(hidden_activations(m, np.ones((2, 3))), 0.5)
    assert np.allclose(forward(m, np.ones((2, 3))), 1.0 / 3.0)


def test_hidden_activations_mode_independent(rng):
    f = random_factors(rng, (3, 4, 2), 5)
    m = Rank1FNNModel(f, rng.standard_normal((5, 2)), 2, (3, 4, 2))
    x = rng.standard_normal((3, 4, 2))
    ref = hidden_activations(m, x)
    for l in range(3):
        assert np.allclose(hidden_activations(m, x, mode=l), ref, rtol=0, atol=1e-12)


def test_forward_matches_kronecker_expanded_network(rng):
    f = random_factors(rng, (3, 4, 2), 4)
    v = rng.standard_normal((4, 3))
    m = Rank1FNNModel(f, v, 3, (3, 4, 2))
    dense = DenseFNNModel(expanded_rows(f), v, 3, (3, 4, 2))
    for _ in range(5):
        x = rng.standard_normal((3, 4, 2))
        assert np.allclose(forward(m, x), dense_fnn_forward(dense, x), atol=1e-10)


def test_one_mode_model_equals_dense(rng):
    w = rng.standard_normal((6, 4))
    v = rng.standard_normal((4, 3))
    m = Rank1FNNModel(CPFactorSet((w,)), v, 3, (6,))
    dense = DenseFNNModel(w.T, v, 3, (6,))
    x = rng.standard_normal(6)
    assert np.allclose(hidden_activations(m, x), sigmoid(w.T @ x), atol=1e-12)
    assert np.allclose(forward(m, x), dense_fnn_forward(dense, x), atol=1e-12)

    data = random_dataset(rng, (6,), 3, 7)
    g = block_backprop(m, data, 0)
    gd = dense_fnn_backprop(dense, data)
    assert np.allclose(g.hidden, gd.hidden.T, atol=1e-10)
    assert np.allclose(g.output, gd.output, atol=1e-10)


@pytest.mark.parametrize("l2", [0.0, 0.2])
def test_block_backprop_matches_finite_differences(small_data, rng, l2):
    f = random_factors(rng, (3, 4, 2), 4)
    v = rng.standard_normal((4, 3))
    m = Rank1FNNModel(f, v, 3, (3, 4, 2))
    for l in range(3):
        grads = block_backprop(m, small_data, l, l2)
        numeric = finite_difference(
            lambda w, l=l: network_nll(Rank1FNNModel(f.replace(l, w), v, 3, (3, 4, 2)), small_data, l2),
            np.array(f.factors[l]),
        )
        assert np.allclose(grads.hidden, numeric, rtol=1e-5, atol=1e-7)
    numeric_v = finite_difference(
        lambda out: network_nll(Rank1FNNModel(f, out, 3, (3, 4, 2)), small_data, l2), v.copy()
    )
    assert np.allclose(grads.output, numeric_v, rtol=1e-5, atol=1e-7)


def test_dense_backprop_matches_finite_differences(small_data, rng):
    hidden = rng.standard_normal((4, 24))
    v = rng.standard_normal((4, 3))
    m = DenseFNNModel(hidden, v, 3, (3, 4, 2))
    grads = dense_fnn_backprop(m, small_data)
    numeric = finite_difference(
        lambda w: network_nll(DenseFNNModel(w, v, 3, (3, 4, 2)), small_data), hidden.copy()
    )
    assert np.allclose(grads.hidden, numeric, rtol=1e-5, atol=1e-7)
    numeric_v = finite_difference(
        lambda out: network_nll(DenseFNNModel(hidden, out, 3, (3, 4, 2)), small_data), v.copy()
    )
    assert np.allclose(grads.output, numeric_v, rtol=1e-5, atol=1e-7)


def test_saturated_perfect_prediction_has_tiny_gradients():
    data = PatchDataset.from_labels(np.array([[[1.0]], [[-1.0]]]), [0, 1], 2)
    f = CPFactorSet((np.array([[1.0, -1.0]]), np.array([[60.0, 60.0]])))
    m = Rank1FNNModel(f, np.array([[60.0, -60.0], [-60.0, 60.0]]), 2, (1, 1))
    assert forward(m, np.array([[-1.0]]))[1] > 1.0 - 1e-12
    grads = block_backprop(m, data, 1)
    assert np.max(np.abs(grads.hidden)) < 1e-10
    assert np.max(np.abs(grads.output)) < 1e-10


def test_zero_dense_weights_give_uniform():
    m = DenseFNNModel(np.zeros((3, 4)), np.zeros((3, 2)), 2, (2, 2))
    assert np.allclose(dense_fnn_forward(m, np.ones((2, 2))), 0.5)


def test_param_counts():
    assert rank1_fnn_param_count((5, 5, 200), 75, 16) == 16950
    assert dense_fnn_param_count((5, 5, 200), 75, 16) == 376200


def test_param_counts_on_random_shapes(rng):
    for _ in range(20):
        shape = tuple(int(p) for p in rng.integers(1, 6, size=int(rng.integers(1, 4))))
        q = int(rng.integers(1, 5))
        c = int(rng.integers(2, 5))
        m = Rank1FNNModel(random_factors(rng, shape, q), np.zeros((q, c)), c, shape)
        d = DenseFNNModel(np.zeros((q, int(np.prod(shape)))), np.zeros((q, c)), c, shape)
        assert m.param_count() == q * sum(shape) + q * c == rank1_fnn_param_count(shape, q, c)
        assert d.param_count() == q * int(np.prod(shape)) + q * c == dense_fnn_param_count(shape, q, c)


def test_training_trace_is_monotone(small_data):
    result = fit_rank1_fnn(small_data, TrainConfig(max_sweeps=20, seed=1), num_hidden=4)
    assert np.all(np.diff(result.objectives) <= 1e-9)
    blocks = {e.block for e in result.trace}
    assert "mode 2, neuron 3" in blocks
    assert "output 2" in blocks


def test_one_mode_training_trajectory_equals_dense(rng):
    data = random_dataset(rng, (6,), 3, 12)
    cfg = TrainConfig(max_sweeps=10, seed=4)
    rank1 = fit_rank1_fnn(data, cfg, num_hidden=3)
    dense = dense_fnn_fit(data, cfg, num_hidden=3)
    assert [e.block for e in rank1.trace] == [e.block for e in dense.trace]
    assert np.allclose(rank1.objectives, dense.objectives, rtol=0, atol=1e-10)
    assert np.allclose(rank1.model.hidden_weights.factors[0], dense.model.hidden_weights.T, atol=1e-10)
    assert np.allclose(rank1.model.output_weights, dense.model.output_weights, atol=1e-10)


def test_hidden_size_validation(small_data):
    with pytest.raises(ConfigError):
        fit_rank1_fnn(small_data, TrainConfig(max_sweeps=1), num_hidden=0)


def test_output_shape_validation(rng):
    with pytest.raises(ShapeError):
        Rank1FNNModel(random_factors(rng, (2, 2), 3), np.zeros((2, 2)), 2, (2, 2))


def test_xor_task_needs_the_nonlinear_model():
    fnn_scores, lr_scores = [], []
    cfg = TrainConfig(max_sweeps=150, augment_ones=True)
    for seed in range(10):
        planted = xor_dataset(seed=seed)
        run_cfg = cfg.updated(seed=seed)
        fnn = fit_rank1_fnn(planted.train, run_cfg, num_hidden=16).model
        lr = fit_tensor_lr(planted.train, run_cfg).model
        fnn_scores.append(accuracy(fnn, planted.test))
        lr_scores.append(accuracy(lr, planted.test))
    assert np.mean(fnn_scores) >= 0.95
    assert np.mean(lr_scores) <= 0.70


def test_data_init_places_neurons_in_the_signal_plane():
    planted = xor_dataset(seed=0)
    xs = prepare_inputs(planted.train.patches, planted.train.input_shape, None, False)
    hidden, output = init_network(xs, 8, 2, TrainConfig(seed=0))
    assert output.shape == (8, 2)
    first, *rest = planted.factors.factors
    for l, shared in enumerate(rest, start=1):
        w = hidden.factors[l]
        cos = np.abs(shared[:, 0] @ w) / np.linalg.norm(w, axis=0)
        assert np.all(cos > 0.9)
    w = hidden.factors[0]
    inside = np.linalg.norm(first.T @ w, axis=0) / np.linalg.norm(w, axis=0)
    assert np.all(inside > 0.9)
    assert np.allclose(np.std(batch_logits(xs, hidden), axis=0), 2.0, rtol=1e-8)


def test_data_init_offsets_go_into_the_ones_row():
    planted = xor_dataset(seed=1)
    xs = prepare_inputs(planted.train.patches, planted.train.input_shape, None, True)
    hidden, _ = init_network(xs, 6, 2, TrainConfig(seed=1, augment_ones=True))
    centers = batch_logits(xs, hidden).mean(axis=0)
    assert np.all(np.abs(centers) <= 2.0 + 1e-8)
    assert np.any(hidden.factors[-1][-1] != 0.0)


def test_dense_training_steps_along_backprop_rows(rng):
    data = random_dataset(rng, (2, 3), 3, 10)
    hidden = 0.5 * rng.standard_normal((4, 6))
    output = 0.5 * rng.standard_normal((4, 3))
    cfg = TrainConfig(max_sweeps=1, learning_rate=1e-3, l2=0.1)
    trained = dense_fnn_fit(data, cfg, num_hidden=4, init=(hidden, output)).model
    grad = dense_fnn_backprop(DenseFNNModel(hidden, output, 3, (2, 3)), data, 0.1).hidden
    assert np.allclose(trained.hidden_weights[0], hidden[0] - 1e-4 * grad[0], rtol=0, atol=1e-12)


def test_network_rejects_overflowing_logits():
    m = DenseFNNModel(np.ones((2, 1)), np.full((2, 2), 1e308) * [1.0, -1.0], 2, (1,))
    with pytest.raises(InputError, match="overflow"):
        m.predict_proba_batch(np.array([[5.0]]))
