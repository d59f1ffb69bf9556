"""Denoisers, Monte-Carlo divergence, the divergence-free construction and SURE.

Divergence is normalized throughout: d = (1/n) sum_i dD_i/dr_i. Under this
convention the divergence-free direction G = D(r) - d*r annihilates the
identity map exactly, the SURE penalty is 2*tau^2*d, and the AMP Onsager
multiplier becomes (n/m)*d.

Built-in denoisers are the componentwise soft threshold and a bank of soft
thresholds at increasing multiples of the noise level (the LET bank), both
with exact analytic divergences. Arbitrary external denoisers attach through
a one-shot subprocess plugin protocol and get their divergence estimated by
Monte Carlo.
"""

import os
import shlex
import struct
import subprocess
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    DegenerateDirectionError,
    InvalidNoiseLevelError,
    InvalidStepError,
    PluginProtocolError,
    PluginSpawnError,
    PluginTimeoutError,
)
from .seeding import derive_seed

SOFT_THRESHOLD = "soft-threshold"
LET_BANK = "let-bank"
PLUGIN = "plugin"

#: absolute floor on ||g||^2 per coordinate before a direction is degenerate
EPS_G_PER_COORD = 1e-12

REQUEST_MAGIC = b"DNZ1"
RESPONSE_MAGIC = b"DNZ2"


@dataclass
class DenoiserSpec:
    """Selects and parameterizes a denoiser.

    ``threshold_multiple`` scales the noise level into the soft threshold;
    ``let_knots`` are the bank's threshold multiples, strictly increasing;
    ``mc_step`` is the Monte-Carlo probe step (default: max-abs of the input
    divided by 1000, floored at 1e-6). ``plugin_env`` is merged into the
    plugin's environment (e.g. IMG_W/IMG_H for 2-D-aware denoisers).
    """

    kind: str = SOFT_THRESHOLD
    threshold_multiple: float = 1.0
    let_knots: tuple = (1.0, 2.0, 3.0)
    plugin_command: str | None = None
    mc_step: float | None = None
    mc_samples: int = 1
    plugin_timeout: float = 60.0
    plugin_env: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in (SOFT_THRESHOLD, LET_BANK, PLUGIN):
            raise ValueError(f"unknown denoiser kind {self.kind!r}")
        if self.threshold_multiple <= 0:
            raise ValueError("threshold_multiple must be > 0")
        knots = tuple(float(k) for k in self.let_knots)
        if any(k <= 0 for k in knots) or any(
            b <= a for a, b in zip(knots, knots[1:])
        ):
            raise ValueError("let_knots must be positive and strictly increasing")
        self.let_knots = knots
        if self.mc_step is not None and self.mc_step <= 0:
            raise InvalidStepError("mc_step must be > 0")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.kind == PLUGIN and not self.plugin_command:
            raise ValueError("plugin kind needs a plugin_command")


@dataclass
class DfDenoiseResult:
    """Output of one divergence-free denoising step.

    ``x_df`` is the divergence-free estimate used inside the iteration loop,
    ``x_out`` the tuned non-divergence-free output estimate,
    ``divergence_base`` the normalized divergence of the base denoiser (for
    the LET bank: of the tuned output combination), ``coefficients`` the
    SURE-optimal combination weights and ``sure_value`` the minimized SURE
    of ``x_df``.
    """

    x_df: np.ndarray
    x_out: np.ndarray
    divergence_base: float
    coefficients: np.ndarray
    sure_value: float


def soft_threshold(r, lam: float) -> np.ndarray:
    """Componentwise sign(r) * max(|r| - lam, 0)."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    return _kernels.soft_threshold(np.asarray(r, dtype=np.float64), float(lam))


def analytic_divergence_soft(r, lam: float) -> float:
    """Exact normalized divergence of the soft threshold: fraction above lam."""
    r = np.asarray(r, dtype=np.float64)
    return _kernels.count_above(r, float(lam)) / r.shape[0]


def let_kernel_bank(r, sigma: float, knots) -> np.ndarray:
    """Elementary denoisers: soft thresholds at knots[k] * sigma, one per row."""
    if sigma <= 0:
        raise InvalidNoiseLevelError("sigma must be > 0")
    r = np.asarray(r, dtype=np.float64)
    thresholds = np.asarray(knots, dtype=np.float64) * sigma
    return _kernels.let_bank(r, thresholds)


def default_mc_step(r) -> float:
    """Probe step for Monte-Carlo divergence: ||r||_inf / 1000, floored at 1e-6."""
    r = np.asarray(r, dtype=np.float64)
    peak = float(np.max(np.abs(r))) if r.size else 0.0
    return max(peak / 1000.0, 1e-6)


def mc_divergence(denoise, r, step: float, samples: int = 1, seed: int = 0) -> float:
    """Monte-Carlo estimate of the normalized divergence of a black-box map.

    Averages (1/n) e^T (denoise(r + step*e) - denoise(r)) / step over
    ``samples`` independent standard Gaussian probes. One sample is adequate
    at high dimension. Deterministic per seed, independent of evaluation
    order (probe s draws from the derived seed (seed, s)).
    """
    if step <= 0:
        raise InvalidStepError("step must be > 0")
    r = np.asarray(r, dtype=np.float64)
    return _mc_divergence_given_base(denoise, r, denoise(r), step, samples, seed)


def _mc_divergence_given_base(denoise, r, base, step, samples, seed):
    n = r.shape[0]
    acc = 0.0
    for s in range(samples):
        rng = np.random.default_rng(derive_seed(seed, s))
        e = rng.standard_normal(n)
        acc += float(e @ (denoise(r + step * e) - base)) / (step * n)
    return acc / samples


def df_direction(base_out, r, div_norm: float) -> np.ndarray:
    """Divergence-free direction G = D(r) - d * r."""
    return np.asarray(base_out, dtype=np.float64) - div_norm * np.asarray(
        r, dtype=np.float64
    )


def sure_estimate(d_out, r, tau2: float, div_norm: float) -> float:
    """Unbiased estimate of the denoiser MSE under Gaussian noise of variance tau2.

    (1/n)||d_out - r||^2 + 2 tau2 d - tau2 with d the normalized divergence;
    the middle term vanishes for a divergence-free denoiser.
    """
    if tau2 < 0:
        raise ValueError("tau2 must be >= 0")
    d_out = np.asarray(d_out, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return float(np.mean((d_out - r) ** 2)) + 2.0 * tau2 * div_norm - tau2


def optimal_scalar(r, g, eps: float | None = None) -> float:
    """SURE-minimizing scale C* = r.g / ||g||^2 for a single direction."""
    r = np.asarray(r, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    g2 = float(g @ g)
    if g2 <= (EPS_G_PER_COORD * g.shape[0] if eps is None else eps):
        raise DegenerateDirectionError("direction has (near-)zero energy")
    return float(r @ g) / g2


def optimal_combination(r, g_list) -> np.ndarray:
    """SURE-minimizing weights for several directions: solve (G G^T) C = G r.

    A tiny ridge (1e-9 * trace / K) keeps collinear directions solvable,
    e.g. when several thresholds exceed every |r_i|.
    """
    r = np.asarray(r, dtype=np.float64)
    g = np.atleast_2d(np.asarray(g_list, dtype=np.float64))
    gram = g @ g.T
    tr = float(np.trace(gram))
    k = gram.shape[0]
    if tr <= EPS_G_PER_COORD * r.shape[0]:
        raise DegenerateDirectionError("all directions have (near-)zero energy")
    rhs = g @ r
    return np.linalg.solve(gram + (1e-9 * tr / k) * np.eye(k), rhs)


def plugin_denoise(
    command: str,
    r,
    sigma: float,
    timeout: float = 60.0,
    extra_env: dict | None = None,
) -> np.ndarray:
    """Run one external denoiser invocation over the binary wire protocol.

    Request on stdin: magic b"DNZ1", n as little-endian uint64, sigma as
    little-endian float64, then n float64 payload values. Response on
    stdout: magic b"DNZ2", n echoed as uint64, then exactly n float64
    values. One request per process; any deviation is a protocol violation.
    """
    r = np.asarray(r, dtype=np.float64)
    n = r.shape[0]
    request = (
        REQUEST_MAGIC
        + struct.pack("<Q", n)
        + struct.pack("<d", float(sigma))
        + r.astype("<f8").tobytes()
    )
    env = None if extra_env is None else {**os.environ, **extra_env}
    try:
        proc = subprocess.run(
            shlex.split(command),
            input=request,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            timeout=timeout,
            env=env,
        )
    except (OSError, ValueError) as exc:
        raise PluginSpawnError(f"could not start plugin {command!r}: {exc}") from exc
    except subprocess.TimeoutExpired as exc:
        raise PluginTimeoutError(f"plugin {command!r} timed out after {timeout}s") from exc
    if proc.returncode != 0:
        raise PluginProtocolError(
            f"plugin exited with status {proc.returncode}: {proc.stderr[:200]!r}"
        )
    out = proc.stdout
    expected = len(RESPONSE_MAGIC) + 8 + 8 * n
    if len(out) != expected:
        raise PluginProtocolError(
            f"response has {len(out)} bytes, expected {expected}"
        )
    if out[:4] != RESPONSE_MAGIC:
        raise PluginProtocolError(f"bad response magic {out[:4]!r}")
    (echoed,) = struct.unpack("<Q", out[4:12])
    if echoed != n:
        raise PluginProtocolError(f"plugin echoed n={echoed}, expected {n}")
    return np.frombuffer(out[12:], dtype="<f8").copy()


def base_denoise(spec: DenoiserSpec, r, sigma_hat: float, seed: int = 0):
    """Evaluate the base (non-divergence-free) denoiser and its divergence.

    Returns (output, normalized divergence). For the LET bank the output is
    the SURE-optimal combination of the identity with the bank kernels and
    the divergence is the (analytic) divergence of that combination; this is
    the denoiser D-AMP iterates and the output stage D-OAMP finishes with.
    """
    if sigma_hat <= 0:
        raise InvalidNoiseLevelError("sigma_hat must be > 0")
    r = np.asarray(r, dtype=np.float64)
    if spec.kind == SOFT_THRESHOLD:
        lam = spec.threshold_multiple * sigma_hat
        return soft_threshold(r, lam), analytic_divergence_soft(r, lam)
    if spec.kind == LET_BANK:
        kernels, divs = _let_bank_with_divergences(spec, r, sigma_hat)
        return _let_output_combination(r, kernels, divs, sigma_hat**2)
    return _plugin_base_with_divergence(spec, r, sigma_hat, seed)


def df_denoise(spec: DenoiserSpec, r, sigma_hat: float, seed: int = 0) -> DfDenoiseResult:
    """Divergence-free denoising with SURE-optimal coefficients.

    Builds the direction(s) G_k = D_k(r) - d_k r from the base denoiser(s),
    weights them to minimize SURE (which for divergence-free estimates is
    (1/n)||x - r||^2 - tau^2 with tau = sigma_hat), and also returns the
    tuned non-divergence-free output estimate.
    """
    if sigma_hat <= 0:
        raise InvalidNoiseLevelError("sigma_hat must be > 0")
    r = np.asarray(r, dtype=np.float64)
    tau2 = float(sigma_hat) ** 2
    if not np.any(r):
        # trivial fixed point: every denoiser maps 0 to 0
        zero = np.zeros_like(r)
        return DfDenoiseResult(zero, zero.copy(), 0.0, np.zeros(1), -tau2)

    if spec.kind == LET_BANK:
        kernels, divs = _let_bank_with_divergences(spec, r, sigma_hat)
        g = kernels - divs[:, None] * r
        coeffs = optimal_combination(r, g)
        x_df = coeffs @ g
        x_out, out_div = _let_output_combination(r, kernels, divs, tau2)
        base_div = out_div
    else:
        if spec.kind == SOFT_THRESHOLD:
            lam = spec.threshold_multiple * sigma_hat
            base = soft_threshold(r, lam)
            base_div = analytic_divergence_soft(r, lam)
        else:
            base, base_div = _plugin_base_with_divergence(spec, r, sigma_hat, seed)
        g = df_direction(base, r, base_div)
        c = optimal_scalar(r, g)
        _reject_collinear(r, g)
        x_df = c * g
        x_out = base
        coeffs = np.array([c])

    return DfDenoiseResult(
        x_df=x_df,
        x_out=x_out,
        divergence_base=float(base_div),
        coefficients=np.asarray(coeffs, dtype=np.float64),
        sure_value=sure_estimate(x_df, r, tau2, 0.0),
    )


def _reject_collinear(r, g):
    # G parallel to r means the base denoiser is (near-)linear: the DF
    # construction then returns r itself, which is not divergence-free.
    r2 = float(r @ r)
    g2 = float(g @ g)
    rg = float(r @ g)
    if g2 - rg * rg / r2 <= 1e-12 * g2:
        raise DegenerateDirectionError(
            "direction is collinear with the input (near-linear base denoiser)"
        )


def _let_bank_with_divergences(spec, r, sigma_hat):
    knots = np.asarray(spec.let_knots, dtype=np.float64)
    kernels = let_kernel_bank(r, sigma_hat, knots)
    divs = np.array(
        [analytic_divergence_soft(r, k * sigma_hat) for k in knots]
    )
    return kernels, divs


def _let_output_combination(r, kernels, divs, tau2):
    # SURE-optimal combination of {identity, bank kernels}, not restricted
    # to be divergence-free: minimize (1/n)||F a - r||^2 + 2 tau2 (div . a).
    funcs = np.vstack([r[None, :], kernels])
    all_divs = np.concatenate([[1.0], divs])
    gram = funcs @ funcs.T
    k = gram.shape[0]
    ridge = 1e-9 * float(np.trace(gram)) / k
    rhs = funcs @ r - r.shape[0] * tau2 * all_divs
    coeffs = np.linalg.solve(gram + ridge * np.eye(k), rhs)
    return coeffs @ funcs, float(coeffs @ all_divs)


def _plugin_base_with_divergence(spec, r, sigma_hat, seed):
    def denoise(v):
        return plugin_denoise(
            spec.plugin_command,
            v,
            sigma_hat,
            timeout=spec.plugin_timeout,
            extra_env=spec.plugin_env,
        )

    base = denoise(r)
    step = spec.mc_step if spec.mc_step is not None else default_mc_step(r)
    div = _mc_divergence_given_base(denoise, r, base, step, spec.mc_samples, seed)
    return base, div
