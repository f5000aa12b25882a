"""Exception hierarchy shared by every module."""


class FairExprError(Exception):
    """Base class for package errors."""


class ValidationError(FairExprError, ValueError):
    """Input does not satisfy a documented precondition."""


class ManifestError(ValidationError):
    """A manifest row could not be resolved.

    ``row`` is the 1-based data row number (header excluded) when known.
    """

    def __init__(self, message, row=None, path=None):
        self.row = row
        self.path = path
        prefix = f"row {row}: " if row is not None else ""
        super().__init__(prefix + message)


class ConfigError(FairExprError, ValueError):
    """Experiment configuration is invalid; ``field`` is a dotted path."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class NumericError(FairExprError, ArithmeticError):
    """A loss component became NaN or infinite."""

    def __init__(self, component, value):
        self.component = component
        self.value = value
        super().__init__(f"loss component {component!r} is not finite ({value})")


class NoSupportError(FairExprError):
    """A subgroup filter selected no records."""


class UndefinedFairnessError(FairExprError, ValueError):
    """Fairness ratio cannot be formed (e.g. a zero recall sum)."""
