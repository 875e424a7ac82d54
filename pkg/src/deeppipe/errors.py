"""Shared exception types, mapped to CLI exit codes by the entry point."""


class ValidationError(ValueError):
    """Invalid input: bad schema, bad config, inconsistent files. Exit code 2."""


class ParseError(ValidationError):
    """Malformed structured-text document; message names the offending path."""


class NumericalError(RuntimeError):
    """Numerical failure (Cholesky breakdown, non-finite values). Exit code 3."""
