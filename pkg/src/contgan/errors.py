"""Exception types shared across the package."""


class ContganError(Exception):
    """Base class for all package errors."""


class IngestionError(ContganError):
    """Raised when a dataset file is missing or unreadable."""


class FormatError(ContganError):
    """Raised on malformed binary files (bad magic, truncation)."""


class ConfigurationError(ContganError):
    """Raised on invalid parameter combinations."""


class ContractError(ContganError):
    """Raised when tensor shapes or modes violate an operation contract."""


class ModeError(ContganError):
    """Raised when an operation is applied to the wrong conditioning mode."""


class SequencingError(ContganError):
    """Raised when task ordering or teacher availability is violated."""


class StrategyError(ContganError):
    """Raised when a training strategy is incompatible with the task setup."""


class DivergenceError(ContganError):
    """Raised when training produces non-finite losses."""


class IntegrityError(ContganError):
    """Raised when a checkpoint fails its checksum."""


class DegenerateDataError(ContganError):
    """Raised when data lacks the class variety an operation requires."""


class ComparisonError(ContganError):
    """Raised when runs passed to `compare` are not comparable."""
