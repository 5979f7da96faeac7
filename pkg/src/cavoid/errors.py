"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration. Carries an optional 1-based source line."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DomainError(ValueError):
    """Argument outside the domain of a numeric operation."""


class NoSignalError(ValueError):
    """No feedback bits were collected, so no decision can be taken."""
