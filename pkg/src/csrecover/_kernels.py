"""Hot componentwise kernels, numba-compiled when available.

Set ``CSRECOVER_NO_NUMBA=1`` to force the pure-numpy fallbacks (useful for
debugging and for timing comparisons; see ``benchmarks/bench_kernels.py``).
The active path is reported by ``NUMBA_ENABLED``. Both paths compute the
same values; only summation order inside the direct transforms differs, at
the level of float rounding.
"""

import math
import os
from functools import lru_cache

import numpy as np


def _numba_disabled() -> bool:
    return os.environ.get("CSRECOVER_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}


NUMBA_ENABLED = False
if not _numba_disabled():
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:
        pass


# ---------------------------------------------------------------------------
# pure-numpy path

def soft_threshold_np(r, lam):
    return np.sign(r) * np.maximum(np.abs(r) - lam, 0.0)


def count_above_np(r, lam):
    return int(np.count_nonzero(np.abs(r) > lam))


def let_bank_np(r, thresholds):
    out = np.empty((thresholds.shape[0], r.shape[0]))
    for k in range(thresholds.shape[0]):
        out[k] = soft_threshold_np(r, thresholds[k])
    return out


@lru_cache(maxsize=8)
def _dct2_basis(n: int) -> np.ndarray:
    # Orthonormal DCT-II matrix F with F[k, i] = s_k sqrt(2/n) cos(pi k (2i+1) / 2n)
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    f = np.cos(np.pi * k * (2 * i + 1) / (2.0 * n)) * math.sqrt(2.0 / n)
    f[0] *= 1.0 / math.sqrt(2.0)
    return f


def dct2_direct_np(x):
    return _dct2_basis(x.shape[0]) @ x


def idct2_direct_np(c):
    return _dct2_basis(c.shape[0]).T @ c


# ---------------------------------------------------------------------------
# numba path

if NUMBA_ENABLED:

    @njit(cache=True)
    def soft_threshold_nb(r, lam):  # pragma: no cover - exercised via dispatch
        n = r.shape[0]
        out = np.empty(n)
        for i in range(n):
            v = abs(r[i]) - lam
            if v > 0.0:
                out[i] = v if r[i] >= 0.0 else -v
            else:
                out[i] = 0.0
        return out

    @njit(cache=True)
    def count_above_nb(r, lam):  # pragma: no cover
        c = 0
        for i in range(r.shape[0]):
            if abs(r[i]) > lam:
                c += 1
        return c

    @njit(cache=True)
    def let_bank_nb(r, thresholds):  # pragma: no cover
        nk = thresholds.shape[0]
        n = r.shape[0]
        out = np.zeros((nk, n))
        for i in range(n):
            ai = abs(r[i])
            neg = r[i] < 0.0
            for k in range(nk):
                v = ai - thresholds[k]
                if v > 0.0:
                    out[k, i] = -v if neg else v
        return out

    @njit(cache=True)
    def dct2_direct_nb(x):  # pragma: no cover
        n = x.shape[0]
        out = np.empty(n)
        scale = math.sqrt(2.0 / n)
        for k in range(n):
            acc = 0.0
            w = math.pi * k / (2.0 * n)
            for i in range(n):
                acc += x[i] * math.cos(w * (2 * i + 1))
            out[k] = acc * scale
        out[0] /= math.sqrt(2.0)
        return out

    @njit(cache=True)
    def idct2_direct_nb(c):  # pragma: no cover
        n = c.shape[0]
        out = np.empty(n)
        scale = math.sqrt(2.0 / n)
        for i in range(n):
            acc = c[0] * scale / math.sqrt(2.0)
            for k in range(1, n):
                acc += c[k] * scale * math.cos(math.pi * k * (2 * i + 1) / (2.0 * n))
            out[i] = acc
        return out

    soft_threshold = soft_threshold_nb
    count_above = count_above_nb
    let_bank = let_bank_nb
    dct2_direct = dct2_direct_nb
    idct2_direct = idct2_direct_nb
else:
    soft_threshold = soft_threshold_np
    count_above = count_above_np
    let_bank = let_bank_np
    dct2_direct = dct2_direct_np
    idct2_direct = idct2_direct_np
