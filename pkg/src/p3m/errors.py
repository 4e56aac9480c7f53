"""Exception types shared across the toolkit."""


class P3mError(Exception):
    """Base class for all toolkit errors."""


class NotFoundError(P3mError):
    """A referenced file does not exist."""


class FormatError(P3mError):
    """A file exists but cannot be decoded as the requested raster kind."""


class ShapeError(P3mError):
    """Array dimensions are inconsistent with the operation's contract."""


class InvalidRatioError(P3mError):
    """Max-pool resampling requested with a non-integer ratio."""


class DegenerateFaceError(P3mError):
    """Face landmarks describe a polygon with zero filled area."""


class EmptyFaceError(P3mError):
    """A source face mask is empty after processing."""


class EmptyTargetMaskError(P3mError):
    """The target paste mask is empty."""


class MissingAnnotationError(P3mError):
    """A required part annotation (e.g. brow mask) is empty or absent."""


class EmptyRegionError(P3mError):
    """A mean-style metric was requested over an empty region."""


class ConfigError(P3mError):
    """Invalid configuration value."""


class StateError(P3mError):
    """An operation was invoked without required runtime state."""


class DatasetIndexError(P3mError):
    """Dataset directories are inconsistent (e.g. alpha without image)."""

    def __init__(self, message: str, offenders: list[str] | None = None):
        super().__init__(message)
        self.offenders = offenders or []


class DivergenceError(P3mError):
    """Training loss became non-finite or ran away."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
