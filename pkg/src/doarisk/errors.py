"""Exception types shared across the package."""


class DoaRiskError(Exception):
    """Base class for errors raised by this package."""


class InvalidSceneError(DoaRiskError, ValueError):
    """Scene geometry is inconsistent (positions outside the room, etc.)."""


class CapacityError(DoaRiskError, RuntimeError):
    """A requested simulation exceeds a configured size cap."""


class ShapeError(DoaRiskError, ValueError):
    """Array shapes or sizes do not match the operation's contract."""


class UndefinedSnrError(DoaRiskError, ValueError):
    """SNR is undefined because the clean signal has zero power."""


class IngestionError(DoaRiskError, ValueError):
    """An external file could not be ingested (truncated, bad magic, ...)."""


class GridMismatchError(IngestionError):
    """An imported map's grid header disagrees with the configured grid."""


class ContractError(DoaRiskError, ValueError):
    """A precondition of an operation was violated by the caller."""


class DegenerateStatisticsError(DoaRiskError, ValueError):
    """A statistic needed for normalization is degenerate (e.g. zero spread)."""


class NoValidConfigurationError(DoaRiskError, RuntimeError):
    """Multiple-testing stage rejected nothing; no guaranteed config exists."""
