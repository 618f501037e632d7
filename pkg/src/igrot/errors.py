"""Error taxonomy shared by the library, the service and the CLI.

Two buckets matter at the process boundary: validation problems (bad
arguments, violated invariants) map to exit code 1, while I/O and file
format problems map to exit code 2.
"""


class IgrotError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(IgrotError):
    """A precondition or invariant on in-memory data was violated."""


class FormatError(IgrotError):
    """A file on disk is missing, truncated, or not in the expected format."""
