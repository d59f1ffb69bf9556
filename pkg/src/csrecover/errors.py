"""Exception types shared across the package."""


class CsRecoverError(Exception):
    """Base class for every error raised by csrecover."""


class InvalidDimensionsError(CsRecoverError, ValueError):
    """Operator or vector dimensions are inconsistent or out of range."""


class InvalidNoiseLevelError(CsRecoverError, ValueError):
    """A noise level that must be strictly positive is not."""


class InvalidStepError(CsRecoverError, ValueError):
    """Monte-Carlo probe step must be strictly positive."""


class InvalidOperatorStatsError(CsRecoverError, ValueError):
    """Operator trace statistics are unusable (e.g. trace(A^T A) <= 0)."""


class SingularSystemError(CsRecoverError):
    """The LMMSE system cannot be solved (both variances vanish)."""


class DegenerateDirectionError(CsRecoverError):
    """The divergence-free direction carries no usable signal.

    Raised when the direction is numerically zero, or collinear with the
    input (a near-linear base denoiser such as the identity).
    """


class MissingNoiseLevelError(CsRecoverError, ValueError):
    """D-OAMP requires the measurement noise variance and none was given."""


class ZeroReferenceError(CsRecoverError, ValueError):
    """NMSE is undefined against an all-zero reference signal."""


class PluginError(CsRecoverError):
    """Base class for external denoiser plugin failures."""


class PluginSpawnError(PluginError):
    """The plugin command could not be started."""


class PluginProtocolError(PluginError):
    """The plugin violated the wire protocol (bad magic, length, or exit)."""


class PluginTimeoutError(PluginError):
    """The plugin did not answer within the configured timeout."""


class PgmError(CsRecoverError, ValueError):
    """Base class for PGM image format errors."""


class MalformedHeaderError(PgmError):
    """The PGM header could not be parsed."""


class TruncatedPayloadError(PgmError):
    """The PGM pixel payload ended early."""


class UnsupportedMaxvalError(PgmError):
    """The PGM maxval exceeds the supported 8-bit range."""


class UnwritableOutputError(CsRecoverError, OSError):
    """An output path could not be written."""
