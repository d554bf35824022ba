"""Exception hierarchy shared by all modules."""


class RQ1Error(Exception):
    """Base class for library errors."""


class InvalidArgumentError(RQ1Error, ValueError):
    pass


class MeshInvalidError(RQ1Error):
    pass


class MeshFormatError(RQ1Error):
    """Raised when an ``rq1mesh`` file cannot be parsed.

    ``line`` is the 1-based line number of the offending input, or None
    if the problem is not tied to one line (e.g. truncated file).
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SingularMapError(RQ1Error):
    pass


class OutOfCellError(RQ1Error):
    pass


class BoundaryConditionError(RQ1Error):
    pass


class ConfigurationError(RQ1Error):
    pass


class AssumptionError(RQ1Error):
    """The mesh violates the internal-edge assumption needed for stability."""


class SingularSystemError(RQ1Error):
    def __init__(self, message, hint=None):
        if hint:
            message = f"{message} (hint: {hint})"
        super().__init__(message)
        self.hint = hint
