"""Sensing operators: dense Gaussian matrices and randomized partial-DCT.

The partial-DCT operator realizes A = sqrt(N/M) * S * F^T * D1 * F * D2 with
S a uniform random row selection, F the orthonormal DCT-II and D1, D2 random
+-1 diagonals, so that A A^T = (N/M) I and trace(A^T A) = N hold exactly.
Forward and adjoint ride on fast transforms; ``materialize`` builds the
explicit matrix for small problems and cross-checks.

Operators are immutable after construction and safe to share across
concurrent recovery runs (the lazy eigendecomposition cache is idempotent).
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.fft import dct as _fast_dct, idct as _fast_idct

from . import _kernels
from .errors import InvalidDimensionsError, SingularSystemError

GAUSSIAN = "dense-gaussian"
PARTIAL_DCT = "partial-dct"


@dataclass
class SensingOperator:
    """A measurement map y = A x, either dense Gaussian or fast partial-DCT.

    ``dense_entries`` is present only for the dense kind; ``row_select``,
    ``signs_outer``, ``signs_inner`` and ``scale`` only for partial-DCT.
    ``explicit`` optionally holds a materialized copy of A; when set,
    forward/adjoint use plain matrix products (the slow reference path used
    by equivalence tests).
    """

    kind: str
    m: int
    n: int
    dense_entries: np.ndarray | None = None
    row_select: np.ndarray | None = None
    signs_outer: np.ndarray | None = None
    signs_inner: np.ndarray | None = None
    scale: float = 1.0
    explicit: np.ndarray | None = field(default=None, repr=False)
    _gram_eig: tuple | None = field(default=None, repr=False, compare=False)


def _check_dims(m: int, n: int) -> None:
    if m < 1 or n < 1 or m > n:
        raise InvalidDimensionsError(f"need 1 <= m <= n, got m={m}, n={n}")


def make_gaussian(m: int, n: int, seed: int) -> SensingOperator:
    """Dense operator with i.i.d. N(0, 1/m) entries, deterministic per seed."""
    _check_dims(m, n)
    rng = np.random.default_rng(seed)
    entries = rng.normal(0.0, 1.0 / np.sqrt(m), size=(m, n))
    return SensingOperator(kind=GAUSSIAN, m=m, n=n, dense_entries=entries)


def make_partial_dct(m: int, n: int, seed: int) -> SensingOperator:
    """Randomized partial-DCT operator, deterministic per seed.

    Rows are sampled uniformly without replacement; the two sign diagonals
    are i.i.d. equiprobable +-1. Draw order is fixed: rows, outer signs,
    inner signs.
    """
    _check_dims(m, n)
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(n, size=m, replace=False))
    signs_outer = rng.integers(0, 2, size=n).astype(np.float64) * 2.0 - 1.0
    signs_inner = rng.integers(0, 2, size=n).astype(np.float64) * 2.0 - 1.0
    return SensingOperator(
        kind=PARTIAL_DCT,
        m=m,
        n=n,
        row_select=rows,
        signs_outer=signs_outer,
        signs_inner=signs_inner,
        scale=float(np.sqrt(n / m)),
    )


def dct_orthonormal(x: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II (norm-preserving; fast O(n log n) transform)."""
    return _fast_dct(np.asarray(x, dtype=np.float64), type=2, norm="ortho")


def idct_orthonormal(c: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct_orthonormal`."""
    return _fast_idct(np.asarray(c, dtype=np.float64), type=2, norm="ortho")


def dct_direct(x: np.ndarray) -> np.ndarray:
    """Direct O(n^2) cosine-sum DCT-II, the reference the fast path must match."""
    return _kernels.dct2_direct(np.asarray(x, dtype=np.float64))


def idct_direct(c: np.ndarray) -> np.ndarray:
    """Direct O(n^2) inverse of :func:`dct_direct`."""
    return _kernels.idct2_direct(np.asarray(c, dtype=np.float64))


def _as_vector(v, length: int, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != length:
        raise InvalidDimensionsError(
            f"{name} must be a length-{length} vector, got shape {arr.shape}"
        )
    return arr


def forward(op: SensingOperator, x) -> np.ndarray:
    """Apply A to a length-n signal."""
    x = _as_vector(x, op.n, "x")
    if op.explicit is not None:
        return op.explicit @ x
    if op.kind == GAUSSIAN:
        return op.dense_entries @ x
    t = dct_orthonormal(op.signs_inner * x)
    t = idct_orthonormal(op.signs_outer * t)
    return op.scale * t[op.row_select]


def adjoint(op: SensingOperator, z) -> np.ndarray:
    """Apply A^T to a length-m measurement vector."""
    z = _as_vector(z, op.m, "z")
    if op.explicit is not None:
        return op.explicit.T @ z
    if op.kind == GAUSSIAN:
        return op.dense_entries.T @ z
    u = np.zeros(op.n)
    u[op.row_select] = z
    t = op.signs_outer * dct_orthonormal(u)
    return op.scale * op.signs_inner * idct_orthonormal(t)


def trace_gram(op: SensingOperator) -> float:
    """trace(A^T A): exactly n for partial-DCT, summed entries otherwise."""
    if op.explicit is not None:
        return float(np.sum(op.explicit**2))
    if op.kind == PARTIAL_DCT:
        return float(op.n)
    return float(np.sum(op.dense_entries**2))


def materialize(op: SensingOperator) -> np.ndarray:
    """Explicit m x n matrix of the operator, built column by column."""
    cols = np.eye(op.n)
    return np.column_stack([forward(op, cols[:, j]) for j in range(op.n)])


def as_materialized(op: SensingOperator) -> SensingOperator:
    """Copy of ``op`` that applies the explicit matrix instead of transforms."""
    return replace(op, explicit=materialize(op), _gram_eig=None)


def _gram_eigendecomposition(op: SensingOperator):
    # Eigendecomposition of A A^T, cached on the operator. v2 changes every
    # iteration but A does not, so this turns each LMMSE solve into O(m^2).
    if op._gram_eig is None:
        a = op.explicit if op.explicit is not None else op.dense_entries
        lam, u = np.linalg.eigh(a @ a.T)
        op._gram_eig = (np.maximum(lam, 0.0), u)
    return op._gram_eig


def oamp_filter(op: SensingOperator, z, v2: float, sigma2: float) -> np.ndarray:
    """Apply the trace-normalized linear filter W to z.

    For partial-DCT the de-correlated filter reduces exactly to A^T (its
    trace normalization is already n). For dense operators W is the LMMSE
    matrix v2 A^T (v2 A A^T + sigma2 I)^{-1} rescaled so trace(W A) = n.
    """
    z = _as_vector(z, op.m, "z")
    if v2 < 0 or sigma2 < 0:
        raise ValueError("v2 and sigma2 must be nonnegative")
    if op.kind == PARTIAL_DCT:
        return adjoint(op, z)
    if v2 == 0.0 and sigma2 == 0.0:
        raise SingularSystemError("LMMSE filter needs v2 > 0 or sigma2 > 0")
    lam, u = _gram_eigendecomposition(op)
    denom = v2 * lam + sigma2
    if np.any(denom <= 0.0):
        raise SingularSystemError("gram matrix is singular at sigma2 = 0")
    a = op.explicit if op.explicit is not None else op.dense_entries
    trace_wa = v2 * float(np.sum(lam / denom))
    w_hat_z = v2 * (a.T @ (u @ ((u.T @ z) / denom)))
    return (op.n / trace_wa) * w_hat_z
