"""Dense linear algebra and seeded random matrices used by every other module.

All matrices are 2-D float64 numpy arrays with finite entries (row-major).
Vectorization is column-major throughout the package so that
``vec(P @ X @ Q.T) == kron(Q, P) @ vec(X)`` holds exactly; see :func:`vec_cm`.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.fft

from .errors import (
    DegenerateColumnError,
    InvalidDimensionError,
    ShapeError,
    SizeBudgetError,
)

DEFAULT_ELEMENT_BUDGET = 1 << 26
BUDGET_ENV_VAR = "AKCS_ELEMENT_BUDGET"


def element_budget(override: int | None = None) -> int:
    """Maximum element count for materialized matrices.

    Resolution order: explicit argument, then the AKCS_ELEMENT_BUDGET
    environment variable, then the built-in default (2**26 entries).
    """
    if override is not None:
        return int(override)
    env = os.environ.get(BUDGET_ENV_VAR)
    if env is not None:
        return int(env)
    return DEFAULT_ELEMENT_BUDGET


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream...).

    Philox gives the same sample stream on every platform for a given key,
    and distinct ``stream`` indices give statistically independent streams,
    so parallel Monte Carlo trials stay reproducible per (seed, trial).
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *stream: int) -> int:
    """Collapse (seed, stream...) into a single u64 usable with make_rng."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.size and not np.all(np.isfinite(m)):
        raise ShapeError(f"{name} contains non-finite entries")
    return m


def gaussian_matrix(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """rows x cols matrix of i.i.d. standard normal entries drawn from rng."""
    if rows < 1 or cols < 1:
        raise InvalidDimensionError(f"gaussian_matrix needs positive dims, got {rows}x{cols}")
    return rng.standard_normal((rows, cols))


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    return a @ b


def transpose(a) -> np.ndarray:
    return as_matrix(a).T.copy()


def kron(a, b, budget: int | None = None) -> np.ndarray:
    """Kronecker product with an element-budget guard.

    Result shape (a.rows*b.rows, a.cols*b.cols); block (i, j) is a[i, j] * b.
    """
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    n_elems = a.shape[0] * b.shape[0] * a.shape[1] * b.shape[1]
    limit = element_budget(budget)
    if n_elems > limit:
        raise SizeBudgetError(
            f"kron result would hold {n_elems} elements, over the budget of {limit}"
        )
    return np.kron(a, b)


def vec_cm(x) -> np.ndarray:
    """Column-major vectorization: output[w*rows + h] = x[h, w], as a column.

    Column-major stacking is what makes the Kronecker identity
    ``vec(P @ X @ Q.T) == kron(Q, P) @ vec(X)`` hold.
    """
    x = as_matrix(x)
    return x.reshape(-1, 1, order="F").copy()


def unvec_cm(v, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec_cm` for a rows x cols target."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size != rows * cols:
        raise ShapeError(f"cannot reshape {v.size} entries into {rows}x{cols}")
    return v.reshape(rows, cols, order="F").copy()


def normalize_columns(a) -> np.ndarray:
    """Scale every column to unit Euclidean norm; zero columns are an error."""
    a = as_matrix(a)
    norms = np.linalg.norm(a, axis=0)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateColumnError(int(zero[0]))
    return a / norms


def dct2(x) -> np.ndarray:
    """Orthonormal 2-D type-II DCT (the package's sparsifying transform)."""
    x = as_matrix(x)
    return scipy.fft.dct(scipy.fft.dct(x, type=2, norm="ortho", axis=0),
                         type=2, norm="ortho", axis=1)


def idct2(x) -> np.ndarray:
    """Inverse of :func:`dct2` (orthonormal type-III DCT along both axes)."""
    x = as_matrix(x)
    return scipy.fft.idct(scipy.fft.idct(x, type=2, norm="ortho", axis=0),
                          type=2, norm="ortho", axis=1)


def dct_basis(n: int) -> np.ndarray:
    """Explicit n x n orthonormal DCT-II basis matrix (reference/oracle use)."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    basis = np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    basis[0, :] *= np.sqrt(1.0 / n)
    basis[1:, :] *= np.sqrt(2.0 / n)
    return basis
