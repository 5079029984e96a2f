"""Exception types shared across the package.

The CLI maps these onto its exit-code scheme: ConfigError -> 1,
everything else raised at runtime -> 2.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad ranges, broken invariants, unknown keys."""


class StreamError(RuntimeError):
    """Stream-engine contract violation (conditioning mismatch, exhausted input)."""


class NumericError(RuntimeError):
    """Numerical failure, e.g. a factorization of a non-SPD matrix."""
