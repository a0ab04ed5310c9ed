"""Dense tensor container and the tensor-algebra kernels the models build on.

Linearization is first-index-fastest throughout: the (1-based) multi-index
``(i_1, ..., i_D)`` of a tensor with shape ``(p_1, ..., p_D)`` maps to
``1 + sum_d (i_d - 1) * prod_{d' < d} p_{d'}``. In numpy terms this is
Fortran order, so vectorizing a tensor is ``arr.ravel(order="F")``.

``vec_index`` and ``multi_index`` keep the 1-based convention of the formula.
Every other function takes 0-based modes, indices and columns.
"""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence, Union

import numpy as np

from errors import BoundsError, ShapeError

logger = logging.getLogger(__name__)

# einsum subscripts: sample axis, mode axes, column axis
_SAMPLE = "z"
_COLUMN = "y"
_MODE_LETTERS = string.ascii_letters.replace(_SAMPLE, "").replace(_COLUMN, "")


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """D-dimensional float64 tensor stored as a flat first-index-fastest buffer."""

    shape: tuple
    data: np.ndarray

    def __post_init__(self) -> None:
        shape = tuple(int(p) for p in self.shape)
        if not shape or any(p < 1 for p in shape):
            raise ShapeError(f"tensor shape must be non-empty positive integers, got {shape}")
        data = np.array(self.data, dtype=np.float64).reshape(-1)
        if data.size != int(np.prod(shape)):
            raise ShapeError(
                f"data length {data.size} does not match shape {shape} "
                f"(expected {int(np.prod(shape))})"
            )
        data.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr) -> "DenseTensor":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        return cls(arr.shape, arr.ravel(order="F"))

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def array(self) -> np.ndarray:
        """Read-only ndarray view with the tensor's shape."""
        return self.data.reshape(self.shape, order="F")

    def __getitem__(self, index):
        return self.array[index]

    def __repr__(self) -> str:
        return f"DenseTensor(shape={self.shape})"


TensorLike = Union[DenseTensor, np.ndarray, Sequence]


def as_array(t: TensorLike) -> np.ndarray:
    """Return ``t`` as a float64 ndarray without copying DenseTensor data."""
    if isinstance(t, DenseTensor):
        return t.array
    return np.asarray(t, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class CPFactorSet:
    """Rank-1 decomposed weight bank: D factor matrices sharing ``K`` columns.

    Column ``k`` across all factors defines the rank-1 tensor
    ``w_1^{(k)} o ... o w_D^{(k)}``, whose vectorization is
    ``w_D^{(k)} (x) ... (x) w_1^{(k)}``.
    """

    factors: tuple

    def __post_init__(self) -> None:
        mats = []
        for l, factor in enumerate(self.factors):
            mat = np.array(factor, dtype=np.float64)
            if mat.ndim == 1:
                mat = mat[:, None]
            if mat.ndim != 2 or mat.shape[0] < 1:
                raise ShapeError(f"factor {l} must be a non-empty matrix, got shape {mat.shape}")
            mats.append(mat)
        if not mats:
            raise ShapeError("a CPFactorSet needs at least one factor")
        columns = {m.shape[1] for m in mats}
        if len(columns) != 1:
            raise ShapeError(f"factors disagree on column count: {[m.shape[1] for m in mats]}")
        for mat in mats:
            mat.setflags(write=False)
        object.__setattr__(self, "factors", tuple(mats))

    @property
    def ndim(self) -> int:
        return len(self.factors)

    @property
    def rank(self) -> int:
        """Shared column count ``K``."""
        return self.factors[0].shape[1]

    @property
    def shape(self) -> tuple:
        return tuple(f.shape[0] for f in self.factors)

    def column(self, k: int) -> list:
        """Factor vectors ``[w_1^{(k)}, ..., w_D^{(k)}]`` of column ``k``."""
        if not 0 <= k < self.rank:
            raise BoundsError(f"column {k} out of range for rank {self.rank}")
        return [f[:, k] for f in self.factors]

    def replace(self, mode: int, factor: np.ndarray) -> "CPFactorSet":
        """Copy with factor ``mode`` swapped for ``factor``."""
        mats = list(self.factors)
        mats[mode] = factor
        return CPFactorSet(tuple(mats))

    def param_count(self) -> int:
        return self.rank * sum(self.shape)

    def __repr__(self) -> str:
        return f"CPFactorSet(shape={self.shape}, rank={self.rank})"


def vec_index(multi: Sequence[int], shape: Sequence[int]) -> int:
    """1-based linear index of the 1-based ``multi`` index, first index fastest."""
    if len(multi) != len(shape):
        raise ShapeError(f"index has {len(multi)} modes but shape has {len(shape)}")
    j = 1
    stride = 1
    for d, (i, p) in enumerate(zip(multi, shape)):
        if not 1 <= i <= p:
            raise BoundsError(f"index {i} out of range 1..{p} in mode {d + 1}")
        j += (i - 1) * stride
        stride *= p
    return j


def multi_index(j: int, shape: Sequence[int]) -> tuple:
    """Inverse of :func:`vec_index`."""
    total = int(np.prod(shape))
    if not 1 <= j <= total:
        raise BoundsError(f"linear index {j} out of range 1..{total}")
    rest = j - 1
    multi = []
    for p in shape:
        multi.append(rest % p + 1)
        rest //= p
    return tuple(multi)


def vectorize(t: TensorLike) -> np.ndarray:
    """Stack the entries of ``t`` into a vector, first index fastest."""
    if isinstance(t, DenseTensor):
        return t.data
    return as_array(t).ravel(order="F")


def devectorize(vec, shape: Sequence[int]) -> DenseTensor:
    return DenseTensor(tuple(shape), np.asarray(vec, dtype=np.float64))


def _check_mode(d: int, ndim: int) -> None:
    if not 0 <= d < ndim:
        raise BoundsError(f"mode {d} out of range for a {ndim}-mode tensor")


def matricize(t: TensorLike, d: int) -> np.ndarray:
    """Mode-``d`` unfolding: a ``p_d x prod(p_{d'}, d' != d)`` matrix of mode-d fibers."""
    arr = as_array(t)
    _check_mode(d, arr.ndim)
    return np.moveaxis(arr, d, 0).reshape(arr.shape[d], -1, order="F")


def fold(matrix, d: int, shape: Sequence[int]) -> DenseTensor:
    """Refold a mode-``d`` unfolding back into a tensor of ``shape``."""
    shape = tuple(shape)
    _check_mode(d, len(shape))
    rest = shape[:d] + shape[d + 1:]
    arr = np.asarray(matrix, dtype=np.float64).reshape((shape[d],) + rest, order="F")
    return DenseTensor.from_array(np.moveaxis(arr, 0, d))


def kronecker(a, b) -> np.ndarray:
    """Kronecker product; block ``(i, j)`` equals ``a[i, j] * b``."""
    return np.kron(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def _as_columns(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    return m[:, None] if m.ndim == 1 else m


def khatri_rao(a, b) -> np.ndarray:
    """Column-wise Kronecker product of two matrices with equal column counts."""
    a = _as_columns(a)
    b = _as_columns(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"Khatri-Rao needs equal column counts, got {a.shape[1]} and {b.shape[1]}")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def khatri_rao_chain(matrices: Iterable, columns: int = 1) -> np.ndarray:
    """``M_1 (.) M_2 (.) ... (.) M_n`` in the order given.

    An empty chain is the ``1 x columns`` matrix of ones, so multiplying by it
    leaves its operand unchanged.
    """
    mats = [_as_columns(m) for m in matrices]
    if not mats:
        return np.ones((1, columns))
    return reduce(khatri_rao, mats)


def outer_product(vectors: Sequence) -> DenseTensor:
    """Tensor whose element ``(i_1, ..., i_D)`` is ``prod_j vectors[j][i_j]``."""
    if not vectors:
        raise ShapeError("outer product needs at least one vector")
    vecs = [np.asarray(v, dtype=np.float64).reshape(-1) for v in vectors]
    if any(v.size == 0 for v in vecs):
        raise ShapeError("outer product of an empty vector")
    return DenseTensor.from_array(reduce(np.multiply.outer, vecs))


def _subscripts(ndim: int) -> str:
    if ndim > len(_MODE_LETTERS):
        raise ShapeError(f"tensors with more than {len(_MODE_LETTERS)} modes are not supported")
    return _MODE_LETTERS[:ndim]


def cp_reconstruct(f: CPFactorSet) -> DenseTensor:
    """``sum_r b_1^{(r)} o ... o b_D^{(r)}``."""
    modes = _subscripts(f.ndim)
    spec = ",".join(m + _COLUMN for m in modes) + "->" + modes
    return DenseTensor.from_array(np.einsum(spec, *f.factors, optimize=True))


def check_factor_shape(f: CPFactorSet, shape: Sequence[int]) -> None:
    if tuple(shape) != f.shape:
        raise ShapeError(f"input shape {tuple(shape)} does not match factor rows {f.shape}")


def transformed_input(x: TensorLike, f: CPFactorSet, k: int, l: int) -> np.ndarray:
    """``X_(l) (w_D (.) ... (.) w_{l+1} (.) w_{l-1} (.) ... (.) w_1)`` for column ``k``.

    Returns a vector of length ``p_l`` whose inner product with ``w_l^{(k)}``
    equals :func:`cp_inner_product` for every choice of ``l``.
    """
    arr = as_array(x)
    check_factor_shape(f, arr.shape)
    _check_mode(l, arr.ndim)
    col = f.column(k)
    others = [col[q] for q in reversed(range(f.ndim)) if q != l]
    return matricize(arr, l) @ khatri_rao_chain(others)[:, 0]


def cp_inner_product(f: CPFactorSet, k: int, x: TensorLike, mode: int = 0) -> float:
    """``<w_D^{(k)} (.) ... (.) w_1^{(k)}, vec(x)>`` without forming the full Kronecker vector."""
    return float(f.column(k)[mode] @ transformed_input(x, f, k, mode))


def batch_logits(xs: np.ndarray, f: CPFactorSet) -> np.ndarray:
    """Inner products of every sample in ``xs`` (``N x p_1 x ... x p_D``) with every column.

    Returns an ``N x K`` matrix.
    """
    if xs.shape[1:] != f.shape:
        raise ShapeError(f"sample shape {xs.shape[1:]} does not match factor rows {f.shape}")
    modes = _subscripts(f.ndim)
    spec = (
        _SAMPLE + modes + ","
        + ",".join(m + _COLUMN for m in modes)
        + "->" + _SAMPLE + _COLUMN
    )
    return np.einsum(spec, xs, *f.factors, optimize=True)


def batch_transformed_inputs(xs: np.ndarray, f: CPFactorSet, l: int) -> np.ndarray:
    """Transformed inputs of mode ``l`` for every sample and column: ``N x p_l x K``.

    ``tau[n, :, k]`` equals ``transformed_input(xs[n], f, k, l)``; it does not
    depend on factor ``l``.
    """
    if xs.shape[1:] != f.shape:
        raise ShapeError(f"sample shape {xs.shape[1:]} does not match factor rows {f.shape}")
    _check_mode(l, f.ndim)
    modes = _subscripts(f.ndim)
    others = [q for q in range(f.ndim) if q != l]
    operands = [xs] + [f.factors[q] for q in others]
    spec = (
        _SAMPLE + modes + ","
        + ",".join(modes[q] + _COLUMN for q in others)
        + "->" + _SAMPLE + modes[l] + _COLUMN
    )
    if not others:
        spec = _SAMPLE + modes + "->" + _SAMPLE + modes
        tau = np.einsum(spec, xs)
        return np.repeat(tau[:, :, None], f.rank, axis=2)
    return np.einsum(spec, *operands, optimize=True)


def normalize_columns(f: CPFactorSet) -> CPFactorSet:
    """Unit-norm columns for every factor but the last; the scale moves into the last.

    Columns with zero norm are left untouched.
    """
    mats = [np.array(m) for m in f.factors]
    for l in range(f.ndim - 1):
        norms = np.linalg.norm(mats[l], axis=0)
        scale = np.where(norms > 0.0, norms, 1.0)
        mats[l] = mats[l] / scale
        mats[-1] = mats[-1] * scale
    return CPFactorSet(tuple(mats))


def rank1_approximation(t: TensorLike, iterations: int = 10) -> tuple:
    """Rank-1 fit ``sigma * a_1 o ... o a_D`` by the higher-order power method.

    Starts from the leading left singular vector of every unfolding. Returns
    ``(sigma, vectors)`` with unit-norm vectors and ``sigma >= 0``.
    """
    arr = as_array(t)
    vectors = []
    for d in range(arr.ndim):
        u, _, _ = np.linalg.svd(matricize(arr, d), full_matrices=False)
        vectors.append(u[:, 0])
    for _ in range(iterations):
        for d in range(arr.ndim):
            f = CPFactorSet(tuple(v[:, None] for v in vectors))
            v = batch_transformed_inputs(arr[None], f, d)[0, :, 0]
            norm = float(np.linalg.norm(v))
            if norm == 0.0:
                return 0.0, vectors
            vectors[d] = v / norm
    f = CPFactorSet(tuple(v[:, None] for v in vectors))
    sigma = float(batch_logits(arr[None], f)[0, 0])
    if sigma < 0.0:
        vectors[0] = -vectors[0]
        sigma = -sigma
    return sigma, vectors


__all__ = [
    "DenseTensor",
    "CPFactorSet",
    "as_array",
    "vec_index",
    "multi_index",
    "vectorize",
    "devectorize",
    "matricize",
    "fold",
    "kronecker",
    "khatri_rao",
    "khatri_rao_chain",
    "outer_product",
    "cp_reconstruct",
    "check_factor_shape",
    "transformed_input",
    "cp_inner_product",
    "batch_logits",
    "batch_transformed_inputs",
    "normalize_columns",
    "rank1_approximation",
]
