"""Exception types shared across the package."""


class DatasetError(ValueError):
    """A dataset directory or one of its files is malformed.

    Carries the offending path and, when known, the 1-based line number.
    """

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)
        self.path = path
        self.line = line


class IntegrityError(DatasetError):
    """Stored manifest counts or digests disagree with the loaded data."""


class ConfigError(ValueError):
    """An experiment configuration is missing fields or holds invalid values."""


class ProtocolError(RuntimeError):
    """The federated message exchange was driven out of order or incompletely."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the history so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []
