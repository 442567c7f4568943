"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage errors exit with 1, solver
failures with 2, validation failures with 3.
"""


class SignhullError(Exception):
    """Base class for all package-specific errors."""


class UsageError(SignhullError):
    """Bad command-line usage or malformed CLI arguments."""


class ValidationError(SignhullError):
    """Structurally invalid input: programs, datasets, files, or parameters."""


class SolveFailedError(SignhullError):
    """The numerical solver failed to return a usable answer."""


class TooLargeError(ValidationError):
    """An enumeration or grid request exceeds the documented size cap."""
