class DataError(Exception):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class UsageError(Exception):
    """Bad command-line invocation (CLI exit code 1)."""
