"""Exception types shared across the toolkit; the CLI maps them to exit codes."""


class ValidationError(ValueError):
    """Bad user input (configuration, shape description, flags)."""


class DomainError(ValueError):
    """A quantity was requested outside the regime where it is defined."""


class ConvergenceError(RuntimeError):
    """An iterative numerical method failed to reach its tolerance."""
