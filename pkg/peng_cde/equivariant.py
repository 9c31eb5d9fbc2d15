"""Linear permutation equivariant maps on n x n matrices.

Index meaning of the 15 basis maps (``1`` is the all-ones vector)::

     1  A                      2  A^T                    3  diag(diag(A))
     4  1 1^T A                5  A^T 1 1^T              6  diag(A^T 1)
     7  1 (A 1)^T              8  A 1 1^T                9  diag(A 1)
    10  (1^T A 1) 1 1^T       11  (1^T A 1) I
    12  (1^T diag(A)) 1 1^T   13  (1^T diag(A)) I
    14  diag(A) 1^T           15  1 diag(A)^T

All maps are evaluated with O(n^2) closed forms; dense n^2 x n^2 matrices are
only built by the materialization helpers used as test oracles.
"""
import dataclasses
import itertools
import logging
import math
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, overload

import numpy as np

from .constants import IDENTITY_INDEX, NUM_BASIS_MAPS
from .errors import InvalidParameterError, RankDeficientBasisError, ShapeError
from .tensor import Array, Tensor, add_n

logger = logging.getLogger(__name__)

MAX_GROUP_AVERAGE_N = 5


@dataclasses.dataclass(frozen=True)
class Permutation:
    """Bijection on range(n); node i of a permuted object is node p[i] of the input."""

    p: Tuple[int, ...]

    def __post_init__(self) -> None:
        if sorted(self.p) != list(range(len(self.p))):
            raise InvalidParameterError(f"{self.p} is not a permutation")

    @property
    def n(self) -> int:
        return len(self.p)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "Permutation":
        return cls(tuple(int(i) for i in rng.permutation(n)))

    @classmethod
    def all(cls, n: int) -> Iterator["Permutation"]:
        for p in itertools.permutations(range(n)):
            yield cls(p)

    def inverse(self) -> "Permutation":
        inv = [0] * self.n
        for i, j in enumerate(self.p):
            inv[j] = i
        return Permutation(tuple(inv))

    def matrix(self) -> Array:
        m = np.zeros((self.n, self.n))
        m[np.arange(self.n), self.p] = 1.0
        return m

    @property
    def index(self) -> Array:
        return np.asarray(self.p, dtype=np.intp)


@overload
def conjugate(perm: Permutation, a: Tensor) -> Tensor:
    ...


@overload
def conjugate(perm: Permutation, a: Array) -> Array:
    ...


def conjugate(perm, a):  # type: ignore[no-untyped-def]
    """P A P^T, computed by index permutation of rows and columns."""
    if a.shape[:2] != (perm.n, perm.n):
        raise ShapeError(
            f"cannot conjugate shape {a.shape} by a permutation of {perm.n}"
        )
    rows, cols = np.ix_(perm.index, perm.index)
    return a[rows, cols]


@overload
def permute_rows(perm: Permutation, x: Tensor) -> Tensor:
    ...


@overload
def permute_rows(perm: Permutation, x: Array) -> Array:
    ...


def permute_rows(perm, x):  # type: ignore[no-untyped-def]
    """P X."""
    if x.shape[0] != perm.n:
        raise ShapeError(
            f"cannot permute {x.shape[0]} rows by a permutation of {perm.n}"
        )
    return x[perm.index]


@dataclasses.dataclass
class PermEquivWeights:
    """15 coefficients over the equivariant basis, stored as a (15,) parameter."""

    w: Tensor

    def __post_init__(self) -> None:
        if self.w.shape != (NUM_BASIS_MAPS,):
            raise ShapeError(
                f"expected {NUM_BASIS_MAPS} weights, got shape {self.w.shape}"
            )

    @classmethod
    def from_values(
        cls, values: Sequence[float], name: Optional[str] = None
    ) -> "PermEquivWeights":
        return cls(Tensor.parameter(np.asarray(values, dtype=np.float64), name=name))

    @classmethod
    def one_hot(cls, index: int, name: Optional[str] = None) -> "PermEquivWeights":
        values = np.zeros(NUM_BASIS_MAPS)
        values[index - 1] = 1.0
        return cls.from_values(values, name=name)

    @classmethod
    def identity(cls, name: Optional[str] = None) -> "PermEquivWeights":
        return cls.one_hot(IDENTITY_INDEX, name=name)

    @classmethod
    def zeros(cls, name: Optional[str] = None) -> "PermEquivWeights":
        return cls.from_values(np.zeros(NUM_BASIS_MAPS), name=name)

    def values(self) -> Array:
        return self.w.data.copy()


def _eye(n: int) -> Tensor:
    return Tensor._wrap(np.eye(n))


def _ones(n: int) -> Tensor:
    return Tensor._wrap(np.ones((n, n)))


def _check_square(a: Tensor) -> int:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    return a.shape[0]


def _basis_terms(a: Tensor) -> Dict[int, Callable[[], Tensor]]:
    n = _check_square(a)
    eye, ones = _eye(n), _ones(n)
    diag = (a * eye).sum(axis=1, keepdims=True)  # (n, 1)
    row_sums = a.sum(axis=1, keepdims=True)  # A 1, (n, 1)
    col_sums = a.sum(axis=0, keepdims=True)  # 1^T A, (1, n)
    return {
        1: lambda: a,
        2: lambda: a.T,
        3: lambda: a * eye,
        4: lambda: col_sums * ones,
        5: lambda: col_sums.T * ones,
        6: lambda: col_sums.T * eye,
        7: lambda: row_sums.T * ones,
        8: lambda: row_sums * ones,
        9: lambda: row_sums * eye,
        10: lambda: a.sum() * ones,
        11: lambda: a.sum() * eye,
        12: lambda: diag.sum() * ones,
        13: lambda: diag.sum() * eye,
        14: lambda: diag * ones,
        15: lambda: diag.T * ones,
    }


def basis_apply(index: int, a: Tensor) -> Tensor:
    if not 1 <= index <= NUM_BASIS_MAPS:
        raise InvalidParameterError(
            f"basis index must be 1..{NUM_BASIS_MAPS}, got {index}"
        )
    return _basis_terms(a)[index]()


def equiv_apply(weights: PermEquivWeights, a: Tensor) -> Tensor:
    """sum_k w_k * basis_apply(k, A), sharing the row/column/diagonal reductions."""
    n = _check_square(a)
    w = [weights.w[k] for k in range(NUM_BASIS_MAPS)]
    eye = _eye(n)
    diag = (a * eye).sum(axis=1, keepdims=True)
    row_sums = a.sum(axis=1, keepdims=True)
    col_sums = a.sum(axis=0, keepdims=True)
    total = a.sum()
    trace = diag.sum()

    # Entries that vary along columns only (1, n) or rows only (n, 1).
    along_columns = w[3] * col_sums + w[6] * row_sums.T + w[14] * diag.T
    along_rows = w[4] * col_sums.T + w[7] * row_sums + w[13] * diag
    constant = w[9] * total + w[11] * trace
    on_diagonal = w[5] * col_sums.T + w[8] * row_sums + (w[10] * total + w[12] * trace)

    return add_n(
        [
            w[0] * a,
            w[1] * a.T,
            w[2] * (a * eye),
            along_columns + along_rows + constant,
            on_diagonal * eye,
        ]
    )


def fuse(
    l1: PermEquivWeights, l2: PermEquivWeights, a: Tensor, da: Tensor
) -> Tensor:
    """Effective adjacency L1(A) + L2(dA/dt)."""
    if a.shape != da.shape:
        raise ShapeError(f"A and dA shapes differ: {a.shape} vs {da.shape}")
    return equiv_apply(l1, a) + equiv_apply(l2, da)


# Dense oracles ----------------------------------------------------------------


def materialize(fn: Callable[[Tensor], Tensor], n: int) -> Array:
    """n^2 x n^2 matrix M with vec(fn(A)) = M vec(A) (row-major vec)."""
    columns = []
    for k in range(n * n):
        unit = np.zeros(n * n)
        unit[k] = 1.0
        columns.append(fn(Tensor._wrap(unit.reshape(n, n))).data.reshape(-1))
    return np.stack(columns, axis=1)


def basis_matrices(n: int) -> List[Array]:
    return [
        materialize(lambda a, k=k: basis_apply(k, a), n)
        for k in range(1, NUM_BASIS_MAPS + 1)
    ]


def basis_rank(n: int) -> int:
    stacked = np.stack([m.reshape(-1) for m in basis_matrices(n)], axis=1)
    return int(np.linalg.matrix_rank(stacked))


def conjugation_matrix(perm: Permutation) -> Array:
    """rho(perm) with vec(P A P^T) = rho vec(A)."""
    p = perm.matrix()
    return np.kron(p, p)


def project_group_average(m: Array, n: int) -> Array:
    """(1/n!) sum over S_n of rho^-1 M rho: the projection onto equivariant maps."""
    if n > MAX_GROUP_AVERAGE_N:
        raise InvalidParameterError(
            f"group averaging enumerates n! permutations; n={n} > {MAX_GROUP_AVERAGE_N}"
        )
    if m.shape != (n * n, n * n):
        raise ShapeError(f"expected a {n * n} x {n * n} map, got {m.shape}")
    total = np.zeros_like(m)
    for perm in Permutation.all(n):
        rho = conjugation_matrix(perm)
        total += rho.T @ m @ rho
    return total / math.factorial(n)


@dataclasses.dataclass(frozen=True)
class Decomposition:
    coefficients: Array
    residual: float
    rank: int

    def weights(self, name: Optional[str] = None) -> PermEquivWeights:
        return PermEquivWeights.from_values(self.coefficients, name=name)


def lsq_decompose(m: Array, n: int) -> Decomposition:
    """Least-squares coefficients of M over the 15 materialized basis maps."""
    design = np.stack([b.reshape(-1) for b in basis_matrices(n)], axis=1)
    coefficients, _, rank, _ = np.linalg.lstsq(design, m.reshape(-1), rcond=None)
    if rank < NUM_BASIS_MAPS:
        logger.warning("basis rank=%d n=%d", rank, n)
        raise RankDeficientBasisError(n, int(rank))
    residual = float(np.linalg.norm(design @ coefficients - m.reshape(-1)))
    return Decomposition(coefficients=coefficients, residual=residual, rank=int(rank))
