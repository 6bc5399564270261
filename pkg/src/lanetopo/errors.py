"""Exception types shared across the package."""

from __future__ import annotations


class ContractError(ValueError):
    """An argument violates a documented precondition (shape, range, sign)."""


class ConfigError(ValueError):
    """A configuration value or combination is invalid or inconsistent."""


class ParseError(ValueError):
    """An input file is syntactically or structurally malformed."""


class ConsistencyError(RuntimeError):
    """Internally inconsistent ground-truth data (e.g. an endpoint that
    belongs to no lane)."""


class DivergenceError(RuntimeError):
    """A forward/backward pass or training step produced non-finite values."""


class EmptyDataError(RuntimeError):
    """A command found no usable input data."""
