"""D-AMP and D-OAMP iteration loops with variance estimators.

D-AMP alternates r_t = x_t + A^T z_t, x_{t+1} = D(r_t, sigma_t) and the
Onsager-corrected residual z_{t+1} = y - A x_{t+1} + z_t (n/m) d_t, where
d_t is the normalized divergence of the denoiser at r_t.

D-OAMP replaces the Onsager correction with a trace-normalized linear filter
and a divergence-free denoiser: v_t^2 estimated from the plain residual,
r_t = x_t + W z_t, sigma_t^2 = Phi(v_t^2), x_{t+1} the divergence-free
estimate, z_{t+1} = y - A x_{t+1} with no correction term, and a final
tuned (non-divergence-free) output estimate at the last r.
"""

from dataclasses import dataclass, field

import numpy as np

from .denoisers import DenoiserSpec, base_denoise, df_denoise
from .errors import (
    InvalidDimensionsError,
    InvalidOperatorStatsError,
    MissingNoiseLevelError,
)
from .operators import GAUSSIAN, SensingOperator, adjoint, forward, oamp_filter, trace_gram
from .seeding import derive_seed
from .state_evolution import phi_gaussian_lmmse, phi_partial_orthogonal

DAMP = "damp"
DOAMP = "doamp"

MEAN_SQUARE = "mean-square"
MEDIAN = "median"

#: floor applied to every variance estimate
EPS_V = 1e-12
#: a run is flagged divergent once its tracked variance exceeds this multiple
#: of the initial value
DIVERGENCE_FACTOR = 1e6

# 0.75 quantile of the standard normal; calibrates the median estimator
_MAD_SCALE = 0.6745


@dataclass
class IterationRecord:
    t: int
    sigma_hat2: float
    v_hat2: float
    residual_norm2: float
    nmse: float | None = None


@dataclass
class RecoveryTrace:
    """Per-iteration record of one recovery run.

    Each record captures the state at the top of iteration t, before that
    iteration's denoising step; ``nmse`` is the error of the entering
    estimate x_t against the ground truth when one was supplied.
    """

    per_iteration: list = field(default_factory=list)
    x_final: np.ndarray | None = None
    converged_at: int | None = None
    diverged: bool = False


@dataclass
class RecoveryConfig:
    algorithm: str = DAMP
    max_iters: int = 30
    stop_rel_tol: float = 1e-4
    sigma_estimator: str = MEDIAN
    sigma2_known: float | None = None

    def __post_init__(self):
        if self.algorithm not in (DAMP, DOAMP):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.stop_rel_tol < 0:
            raise ValueError("stop_rel_tol must be >= 0")
        if self.sigma_estimator not in (MEAN_SQUARE, MEDIAN):
            raise ValueError(f"unknown sigma estimator {self.sigma_estimator!r}")


def estimate_sigma_mean_square(z) -> float:
    """Residual energy per measurement: ||z||^2 / m."""
    z = np.asarray(z, dtype=np.float64)
    return float(z @ z) / z.shape[0]


def estimate_sigma_median(z) -> float:
    """Robust squared scale (median(|z|) / 0.6745)^2; insensitive to outliers."""
    z = np.asarray(z, dtype=np.float64)
    return (float(np.median(np.abs(z))) / _MAD_SCALE) ** 2


def estimate_v_oamp(z_norm2: float, m: int, sigma2: float, trace_gram: float) -> float:
    """Signal-error variance estimate (||z||^2 - m sigma^2) / tr(A^T A), floored."""
    if trace_gram <= 0:
        raise InvalidOperatorStatsError("trace_gram must be > 0")
    return max((z_norm2 - m * sigma2) / trace_gram, EPS_V)


def onsager_coefficient(div_norm: float, m: int, n: int) -> float:
    """Multiplier of z_t in the D-AMP residual update: (n/m) * d."""
    if m < 1:
        raise InvalidDimensionsError("m must be >= 1")
    return (n / m) * div_norm


def _nmse_or_none(x, x0_truth, x0_norm2):
    if x0_truth is None:
        return None
    d = x - x0_truth
    return float(d @ d) / x0_norm2


def run_damp(
    op: SensingOperator,
    y,
    spec: DenoiserSpec,
    cfg: RecoveryConfig,
    seed: int = 0,
    x0_truth=None,
) -> RecoveryTrace:
    """Run D-AMP and return the full trace.

    Early-stops once the noise-variance estimate changes by less than
    ``stop_rel_tol`` relatively; flags (and returns) a divergent trace once
    it exceeds 1e6 times its initial value. The trace's ``v_hat2`` column
    holds the signal-error estimate (||z||^2 - m sigma^2)/tr(A^T A) using
    ``cfg.sigma2_known`` when given, 0 otherwise; it is informational for
    D-AMP.
    """
    if cfg.algorithm != DAMP:
        raise ValueError("cfg.algorithm must be 'damp'")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (op.m,):
        raise InvalidDimensionsError(f"y must have length {op.m}")
    estimator = (
        estimate_sigma_median if cfg.sigma_estimator == MEDIAN else estimate_sigma_mean_square
    )
    tr_gram = trace_gram(op)
    sigma2_for_v = cfg.sigma2_known if cfg.sigma2_known is not None else 0.0
    x0_norm2 = float(x0_truth @ x0_truth) if x0_truth is not None else None

    trace = RecoveryTrace()
    x = np.zeros(op.n)
    z = y.copy()
    s2_prev = None
    s2_init = None
    for t in range(cfg.max_iters):
        s2 = max(estimator(z), EPS_V)
        if s2_init is None:
            s2_init = s2
        z_norm2 = float(z @ z)
        v2 = estimate_v_oamp(z_norm2, op.m, sigma2_for_v, tr_gram)
        if s2 > DIVERGENCE_FACTOR * s2_init:
            trace.per_iteration.append(
                IterationRecord(t, s2, v2, z_norm2, _nmse_or_none(x, x0_truth, x0_norm2))
            )
            trace.diverged = True
            break
        if (
            s2_prev is not None
            and cfg.stop_rel_tol > 0
            and abs(s2 - s2_prev) <= cfg.stop_rel_tol * s2_prev
        ):
            trace.converged_at = t
            break
        trace.per_iteration.append(
            IterationRecord(t, s2, v2, z_norm2, _nmse_or_none(x, x0_truth, x0_norm2))
        )
        r = x + adjoint(op, z)
        x, div = base_denoise(spec, r, np.sqrt(s2), seed=derive_seed(seed, t))
        z = y - forward(op, x) + z * onsager_coefficient(div, op.m, op.n)
        s2_prev = s2
    trace.x_final = x
    return trace


def run_doamp(
    op: SensingOperator,
    y,
    spec: DenoiserSpec,
    cfg: RecoveryConfig,
    seed: int = 0,
    x0_truth=None,
) -> RecoveryTrace:
    """Run D-OAMP and return the full trace.

    Requires the measurement noise variance ``cfg.sigma2_known``. The loop
    estimate is the divergence-free denoiser output; the returned
    ``x_final`` is the tuned non-divergence-free output estimate at the last
    visited r. Early stop and divergence flagging act on the v^2 estimate.
    """
    if cfg.algorithm != DOAMP:
        raise ValueError("cfg.algorithm must be 'doamp'")
    if cfg.sigma2_known is None:
        raise MissingNoiseLevelError("doamp needs cfg.sigma2_known")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (op.m,):
        raise InvalidDimensionsError(f"y must have length {op.m}")
    sigma2 = float(cfg.sigma2_known)
    tr_gram = trace_gram(op)
    phi = phi_gaussian_lmmse if op.kind == GAUSSIAN else phi_partial_orthogonal
    x0_norm2 = float(x0_truth @ x0_truth) if x0_truth is not None else None

    trace = RecoveryTrace()
    x = np.zeros(op.n)
    x_out = np.zeros(op.n)
    z = y.copy()
    v2_prev = None
    v2_init = None
    for t in range(cfg.max_iters):
        z_norm2 = float(z @ z)
        v2 = estimate_v_oamp(z_norm2, op.m, sigma2, tr_gram)
        if v2_init is None:
            v2_init = v2
        s2 = max(phi(v2, sigma2, op.m, op.n), EPS_V)
        if v2 > DIVERGENCE_FACTOR * v2_init:
            trace.per_iteration.append(
                IterationRecord(t, s2, v2, z_norm2, _nmse_or_none(x, x0_truth, x0_norm2))
            )
            trace.diverged = True
            break
        if (
            v2_prev is not None
            and cfg.stop_rel_tol > 0
            and abs(v2 - v2_prev) <= cfg.stop_rel_tol * v2_prev
        ):
            trace.converged_at = t
            break
        trace.per_iteration.append(
            IterationRecord(t, s2, v2, z_norm2, _nmse_or_none(x, x0_truth, x0_norm2))
        )
        r = x + oamp_filter(op, z, v2, sigma2)
        result = df_denoise(spec, r, np.sqrt(s2), seed=derive_seed(seed, t))
        x = result.x_df
        x_out = result.x_out
        z = y - forward(op, x)
        v2_prev = v2
    trace.x_final = x_out
    return trace
