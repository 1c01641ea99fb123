"""Exception types shared across the engine.

Validation failures subclass ValueError so callers that only know stdlib
semantics still catch them; the CLI maps EngineError -> exit 1 and
OSError -> exit 2.
"""


class EngineError(ValueError):
    """Base class for all engine validation errors."""


class ConfigError(EngineError):
    """Invalid configuration value or malformed config file."""


class GeometryError(EngineError):
    """Degenerate region, out-of-bounds region, or empty coverage mask."""


class ZeroNormError(EngineError):
    """A vector with near-zero Euclidean norm where a direction is required."""


class SupportError(EngineError):
    """Empty or otherwise unusable category support set."""


class BankError(EngineError):
    """Embedding banks that were required to match do not."""


class ShapeError(EngineError):
    """Array shape incompatible with the operation."""


class DivergedError(EngineError):
    """Training produced a non-finite gradient or loss."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class FormatError(EngineError):
    """Malformed binary file; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)
        self.offset = offset
