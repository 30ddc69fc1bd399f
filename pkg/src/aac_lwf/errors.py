"""Exception hierarchy shared by the library and the command line."""


class LwfError(Exception):
    """Base class for every error raised by aac_lwf."""


class ParameterError(LwfError, ValueError):
    """An argument is outside its domain or has the wrong shape."""


class InvariantError(LwfError, RuntimeError):
    """An internal contract was violated (missing grad, length mismatch...)."""


class ConfigError(LwfError, ValueError):
    pass


class MismatchError(LwfError, ValueError):
    """Inputs are individually valid but do not fit together."""


class VocabularyError(MismatchError):
    pass


class DataError(LwfError, ValueError):
    pass


class FormatError(DataError):
    """A file does not follow its binary or text layout."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NumericError(LwfError, ArithmeticError):
    """A loss or parameter became non-finite."""
