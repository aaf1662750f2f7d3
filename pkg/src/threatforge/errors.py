"""Exception hierarchy shared across the package.

Error classes map onto the CLI exit-code partition: usage errors are
handled by argparse (exit 2), backend errors exit 3, input/schema errors
exit 4, and anything else exits 5.
"""

from __future__ import annotations


class ThreatForgeError(Exception):
    """Base class for all package errors."""


# --- input / schema errors (CLI exit 4) ---------------------------------


class DfdParseError(ThreatForgeError):
    """Raised when DFD source text cannot be parsed into a graph."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        if line:
            message = f"{message} (line {line}, col {col})"
        super().__init__(message)


class DslSyntaxError(DfdParseError):
    pass


class UnknownReferenceError(DfdParseError):
    def __init__(self, ref: str, line: int = 0, col: int = 0):
        self.ref = ref
        super().__init__(f"unknown reference {ref!r}", line, col)


class DuplicateIdError(DfdParseError):
    def __init__(self, dup: str, line: int = 0, col: int = 0):
        self.dup = dup
        super().__init__(f"duplicate id {dup!r}", line, col)


class UnknownAttributeError(DfdParseError):
    def __init__(self, what: str, line: int = 0, col: int = 0):
        self.what = what
        super().__init__(f"unknown attribute {what!r}", line, col)


class InvalidGraphError(ThreatForgeError):
    """Raised when an operation requires a graph with no diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        detail = "; ".join(str(d) for d in self.diagnostics) or "invalid graph"
        super().__init__(detail)


class UnknownKindError(ThreatForgeError):
    pass


class NotACodeError(ThreatForgeError):
    def __init__(self, raw: str):
        self.raw = raw
        super().__init__(f"not a NIST 800-53 control code: {raw!r}")


class ModeMismatchError(ThreatForgeError):
    pass


class ExemplarArityError(ThreatForgeError):
    pass


class EmptyQuestionError(ThreatForgeError):
    pass


class EmptyTextError(ThreatForgeError):
    pass


class SchemaError(ThreatForgeError):
    def __init__(self, message: str, location: str = ""):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class TooFewSamplesError(ThreatForgeError):
    pass


class MissingDimsError(ThreatForgeError):
    pass


class ShapeMismatchError(ThreatForgeError):
    pass


class EmptyInputError(ThreatForgeError):
    pass


# --- backend errors (CLI exit 3) -----------------------------------------


class BackendError(ThreatForgeError):
    """Base class for chat/embedding backend failures."""


class BackendFailureError(BackendError):
    def __init__(self, message: str, status: int | None = None, attempts: int = 1):
        self.status = status
        self.attempts = attempts
        super().__init__(f"{message} (status={status}, attempts={attempts})")


class MissingApiKeyError(BackendError):
    def __init__(self, env_name: str):
        self.env_name = env_name
        super().__init__(f"environment variable {env_name} is not set")


class ScriptSyntaxError(BackendError):
    pass


class ScriptExhaustedError(BackendError):
    pass


class EndpointFailureError(BackendError):
    pass


class OptimizationAborted(BackendError):
    """A backend failed mid-optimization; carries the partial trajectory."""

    def __init__(self, cause: Exception, trajectory):
        self.cause = cause
        self.trajectory = trajectory
        super().__init__(f"optimization aborted: {cause}")
