"""Exception types shared across the package."""


class DstcgcnError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(DstcgcnError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(DstcgcnError, ValueError):
    """A documented precondition was violated by the caller."""


class NonFiniteError(DstcgcnError, ArithmeticError):
    """An operation produced (or received) NaN or Inf values."""


class OracleError(DstcgcnError, RuntimeError):
    """A verification oracle could not be evaluated."""


class DataError(DstcgcnError, ValueError):
    """Dataset contents violate what the pipeline can handle."""


class ParseError(DataError):
    """A data or config file could not be parsed."""


class ConfigError(DstcgcnError, ValueError):
    """A run configuration key or value is invalid."""


class CheckpointError(DstcgcnError, ValueError):
    """A checkpoint file is malformed or incompatible with the config."""
