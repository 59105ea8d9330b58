"""Exception hierarchy shared by every module of the package."""


class MltxError(Exception):
    pass


class UnresolvedLocation(MltxError, LookupError):
    """A path segment is missing in the store."""

    def __init__(self, path, detail=""):
        self.path = path
        msg = f"unresolved location {path}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class CarrierMismatch(MltxError, TypeError):
    pass


class InvalidArgument(MltxError, ValueError):
    pass


class EvaluationError(MltxError):
    """Type error or similar while evaluating a step expression."""


class ParseError(MltxError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class UndeclaredLocation(ParseError):
    pass


class MalformedTrace(MltxError):
    pass


class DigestMismatch(MltxError):
    pass


class SoloAbort(MltxError):
    """A machine aborted even when running alone during serial replay."""


class InternalError(MltxError, AssertionError):
    pass
