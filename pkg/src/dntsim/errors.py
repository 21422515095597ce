"""Exceptions shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (CLI exit code 2)."""


class DivergenceError(RuntimeError):
    """Training diverged: non-finite or runaway loss (CLI exit code 3)."""
