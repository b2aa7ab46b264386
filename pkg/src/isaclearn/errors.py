"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and NumericalAbort to exit code 3;
everything else is a programming error and propagates.
"""


class ShapeError(ValueError):
    """Operand dimensions do not agree; message names the operands."""


class DomainError(ValueError):
    """Argument outside the physical/mathematical domain of the operation."""


class NormalizationError(ValueError):
    """Power normalization is undefined (all-zero signal block)."""


class ConfigError(Exception):
    """Bad or missing configuration (file, key, or value)."""


class NumericalAbort(RuntimeError):
    """Training or optimization hit a non-finite value or diverged."""
