"""Exception types shared across the package."""


class MTOptError(Exception):
    """Base class for all mtopt errors."""


class DimensionError(MTOptError):
    """Operands have incompatible shapes or lengths."""


class DegenerateInputError(MTOptError):
    """An input is degenerate for the requested operation (e.g. zero norm)."""


class ValidationError(MTOptError):
    """An input violates a documented precondition (non-finite, out of range)."""


class IngestionError(MTOptError):
    """A data file could not be parsed. Carries the failing byte offset."""

    def __init__(self, message: str, *, path: str = "", offset: int = -1):
        super().__init__(f"{message} (file={path!r}, byte_offset={offset})")
        self.path = path
        self.offset = offset


class TrainingDivergedError(MTOptError):
    """Training produced non-finite losses or parameters. Carries the step index."""

    def __init__(self, message: str, *, step: int = -1):
        super().__init__(f"{message} (step={step})")
        self.step = step


class ConfigError(MTOptError):
    """An experiment config file is malformed or contains unknown keys."""
