"""Exception types shared across the package."""


class ThermogateError(Exception):
    """Base class for all package errors."""


class ValidationError(ThermogateError, ValueError):
    """Raised when an input violates a documented constraint."""


class ShapeError(ThermogateError, ValueError):
    """Raised on incompatible array dimensions."""


class NumericalError(ThermogateError, ArithmeticError):
    """Raised when an integrator or optimizer cannot deliver a result."""


class ConfigError(ThermogateError, ValueError):
    """Raised for unreadable or invalid run configurations."""
