import numpy as np
import pytest

from conftest import random_factors
from errors import BoundsError, ShapeError
from tensor_core import (
    CPFactorSet,
    DenseTensor,
    batch_logits,
    batch_transformed_inputs,
    cp_inner_product,
    cp_reconstruct,
    devectorize,
    fold,
    khatri_rao,
    khatri_rao_chain,
    kronecker,
    matricize,
    multi_index,
    normalize_columns,
    outer_product,
    rank1_approximation,
    transformed_input,
    vec_index,
    vectorize,
)


def test_vec_index_examples():
    assert vec_index((1, 1), (2, 3)) == 1
    assert vec_index((2, 1), (2, 3)) == 2
    assert vec_index((2, 3), (2, 3)) == 6


def test_vec_index_round_trip_every_index():
    shape = (2, 3, 4)
    seen = set()
    for j in range(1, 25):
        multi = multi_index(j, shape)
        assert vec_index(multi, shape) == j
        seen.add(multi)
    assert len(seen) == 24


def test_vec_index_out_of_range_names_mode():
    with pytest.raises(BoundsError, match="mode 2"):
        vec_index((1, 4), (2, 3))


def test_vectorize_examples():
    assert np.array_equal(vectorize(np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])
    assert np.array_equal(vectorize(np.array([[1.0, 3.0], [2.0, 4.0]])), [1.0, 2.0, 3.0, 4.0])


def test_vectorize_matches_vec_index(rng):
    t = DenseTensor.from_array(rng.standard_normal((2, 3, 4)))
    v = vectorize(t)
    for j in range(1, v.size + 1):
        i = multi_index(j, t.shape)
        assert v[j - 1] == t[tuple(k - 1 for k in i)]


def test_vectorize_outer_is_kronecker(rng):
    a = rng.standard_normal(3)
    b = rng.standard_normal(2)
    assert np.allclose(vectorize(outer_product([a, b])), kronecker(b, a), atol=1e-15)


def test_dense_tensor_rejects_bad_length():
    with pytest.raises(ShapeError):
        DenseTensor((2, 3), np.zeros(5))


def test_matricize_matrix_cases(rng):
    m = rng.standard_normal((3, 4))
    assert np.array_equal(matricize(m, 0), m)
    assert np.array_equal(matricize(m, 1), m.T)


def test_matricize_column_formula(rng):
    t = rng.standard_normal((2, 3, 4))
    shape = t.shape
    for d in range(3):
        mat = matricize(t, d)
        assert mat.shape == (shape[d], 24 // shape[d])
        for idx in np.ndindex(*shape):
            col, stride = 0, 1
            for q in range(3):
                if q == d:
                    continue
                col += idx[q] * stride
                stride *= shape[q]
            assert mat[idx[d], col] == t[idx]


def test_matricize_invalid_mode():
    with pytest.raises(BoundsError):
        matricize(np.zeros((2, 2)), 2)


def test_round_trips(rng):
    for ndim in range(1, 5):
        shape = tuple(rng.integers(1, 6, size=ndim))
        t = DenseTensor.from_array(rng.standard_normal(shape))
        assert np.array_equal(devectorize(vectorize(t), shape).array, t.array)
        for d in range(ndim):
            assert np.array_equal(fold(matricize(t, d), d, shape).array, t.array)


def test_kronecker_examples(rng):
    assert np.array_equal(kronecker(np.eye(2), np.eye(2)), np.eye(4))
    assert np.array_equal(kronecker([[1, 2]], [[0, 1]]), [[0, 1, 0, 2]])
    assert kronecker(rng.standard_normal((3, 2)), rng.standard_normal((4, 5))).shape == (12, 10)


def test_kronecker_mixed_product(rng):
    a, b, c, d = (rng.standard_normal((2, 2)) for _ in range(4))
    assert np.allclose(kronecker(a, b) @ kronecker(c, d), kronecker(a @ c, b @ d), atol=1e-12)


def test_khatri_rao(rng):
    a = rng.standard_normal(3)
    b = rng.standard_normal(4)
    assert np.allclose(khatri_rao(a, b)[:, 0], kronecker(a, b))
    eye = khatri_rao(np.eye(2), np.eye(2))
    assert np.array_equal(eye, np.eye(4)[:, [0, 3]])
    a = rng.standard_normal((3, 2))
    b = rng.standard_normal((4, 2))
    kr = khatri_rao(a, b)
    for k in range(2):
        assert np.allclose(kr[:, k], kronecker(a[:, k], b[:, k]))


def test_khatri_rao_column_mismatch():
    with pytest.raises(ShapeError):
        khatri_rao(np.ones((2, 2)), np.ones((2, 3)))


def test_outer_product_examples(rng):
    e1 = np.array([1.0, 0.0])
    assert np.array_equal(outer_product([e1, e1]).array, [[1.0, 0.0], [0.0, 0.0]])
    assert np.array_equal(outer_product([[1, 2], [3, 4]]).array, [[3, 4], [6, 8]])
    vecs = [rng.standard_normal(p) for p in (2, 3, 4)]
    chain = khatri_rao_chain(reversed(vecs))[:, 0]
    assert np.allclose(vectorize(outer_product(vecs)), chain, atol=1e-12)


def test_cp_reconstruct_basis_and_sum(rng):
    e1 = np.eye(3)[:, :1]
    t = cp_reconstruct(CPFactorSet((e1, e1, e1)))
    expected = np.zeros((3, 3, 3))
    expected[0, 0, 0] = 1.0
    assert np.array_equal(t.array, expected)

    q = np.linalg.qr(rng.standard_normal((4, 2)))[0]
    f = CPFactorSet((q, q))
    direct = sum(np.outer(q[:, k], q[:, k]) for k in range(2))
    assert np.allclose(cp_reconstruct(f).array, direct, atol=1e-12)


def test_cp_matricization_identity(rng):
    f = random_factors(rng, (3, 4, 2), 2)
    t = cp_reconstruct(f)
    for d in range(3):
        others = [f.factors[q] for q in reversed(range(3)) if q != d]
        rhs = f.factors[d] @ khatri_rao_chain(others).T
        assert np.allclose(matricize(t, d), rhs, atol=1e-12)
    # vectorized form: (B_D (.) ... (.) B_1) 1_K
    chain = khatri_rao_chain(reversed(f.factors))
    assert np.allclose(vectorize(t), chain @ np.ones(2), atol=1e-12)


def test_cp_inner_product_all_ones():
    f = CPFactorSet((np.ones((2, 1)), np.ones((3, 1)), np.ones((4, 1))))
    assert cp_inner_product(f, 0, np.ones((2, 3, 4))) == pytest.approx(24.0)


def test_cp_inner_product_matches_kronecker_oracle(rng):
    for _ in range(200):
        ndim = int(rng.integers(2, 5))
        shape = tuple(int(p) for p in rng.integers(1, 7, size=ndim))
        k = int(rng.integers(1, 4))
        f = random_factors(rng, shape, k)
        x = rng.standard_normal(shape)
        col = int(rng.integers(0, k))
        naive = kronecker_vector(f, col) @ vectorize(x)
        values = [cp_inner_product(f, col, x, mode=l) for l in range(ndim)]
        assert values[0] == pytest.approx(naive, rel=1e-10, abs=1e-12)
        assert np.allclose(values, values[0], rtol=0, atol=1e-12 * max(1.0, abs(naive)))


def kronecker_vector(f, k):
    vec = np.ones(1)
    for w in f.column(k):
        vec = kronecker(w, vec)
    return vec


def test_transformed_input_special_cases(rng):
    f = random_factors(rng, (3, 4), 1)
    x = rng.standard_normal((3, 4))
    assert np.allclose(transformed_input(x, f, 0, 0), x @ f.factors[1][:, 0], atol=1e-14)

    f1 = random_factors(rng, (5,), 1)
    v = rng.standard_normal(5)
    assert np.array_equal(transformed_input(v, f1, 0, 0), v)


def test_transformed_input_consistency(rng):
    f = random_factors(rng, (3, 4, 2), 2)
    x = rng.standard_normal((3, 4, 2))
    for k in range(2):
        ref = cp_inner_product(f, k, x)
        for l in range(3):
            tau = transformed_input(x, f, k, l)
            assert f.factors[l][:, k] @ tau == pytest.approx(ref, abs=1e-12)


def test_transformed_input_shape_mismatch(rng):
    f = random_factors(rng, (3, 4), 1)
    with pytest.raises(ShapeError):
        transformed_input(np.zeros((4, 3)), f, 0, 0)


def test_batch_kernels_match_single(rng):
    f = random_factors(rng, (3, 4, 2), 3)
    xs = rng.standard_normal((6, 3, 4, 2))
    logits = batch_logits(xs, f)
    for n in range(6):
        for k in range(3):
            assert logits[n, k] == pytest.approx(cp_inner_product(f, k, xs[n]), abs=1e-12)
    tau = batch_transformed_inputs(xs, f, 1)
    assert tau.shape == (6, 4, 3)
    assert np.allclose(tau[2, :, 1], transformed_input(xs[2], f, 1, 1), atol=1e-12)


def test_normalize_columns_keeps_tensor(rng):
    f = random_factors(rng, (3, 4, 2), 2)
    g = normalize_columns(f)
    assert np.allclose(np.linalg.norm(g.factors[0], axis=0), 1.0)
    assert np.allclose(np.linalg.norm(g.factors[1], axis=0), 1.0)
    assert np.allclose(cp_reconstruct(g).array, cp_reconstruct(f).array, atol=1e-12)


def test_factor_set_validation():
    with pytest.raises(ShapeError):
        CPFactorSet((np.ones((2, 2)), np.ones((3, 1))))
    f = CPFactorSet((np.ones(3), np.ones(2)))
    assert f.rank == 1
    assert f.shape == (3, 2)
    assert f.param_count() == 5
    with pytest.raises(BoundsError):
        f.column(1)


def test_rank1_approximation_recovers_exact_rank1(rng):
    a, b, c = rng.normal(size=3), rng.normal(size=4), rng.normal(size=2)
    t = -2.5 * outer_product([a, b, c]).array / (np.linalg.norm(a) * np.linalg.norm(b) * np.linalg.norm(c))
    sigma, vectors = rank1_approximation(t)
    assert sigma == pytest.approx(2.5, rel=1e-10)
    assert np.allclose(sigma * outer_product(vectors).array, t, atol=1e-10)
    for v in vectors:
        assert np.linalg.norm(v) == pytest.approx(1.0)


def test_rank1_approximation_of_zero_tensor():
    sigma, vectors = rank1_approximation(np.zeros((2, 3)))
    assert sigma == 0.0
    assert [v.shape for v in vectors] == [(2,), (3,)]
