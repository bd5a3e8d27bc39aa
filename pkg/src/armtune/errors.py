"""Exception types shared across the package."""


class UsageError(ValueError):
    """A call violated an operation's preconditions."""


class DomainError(ValueError):
    """An input lies outside its mathematical domain (e.g. joint limits)."""


class NumericError(FloatingPointError):
    """Training produced a non-finite value."""
