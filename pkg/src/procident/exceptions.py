class ProcidentError(Exception):
    """Base class for all errors raised by procident."""


class ParseError(ProcidentError):
    """A record in an event log could not be decoded."""

    def __init__(self, message, lineno=None, source=None):
        self.lineno = lineno
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if lineno is not None:
            where += f"{lineno}: "
        elif where:
            where += " "
        super().__init__(where + message)


class SchemaError(ParseError):
    """A record decoded but violates the event schema."""


class AlphabetMismatchError(ProcidentError):
    """A string contains a character outside the configured alphabet."""


class ParameterError(ProcidentError, ValueError):
    pass


class DegenerateInputError(ProcidentError, ValueError):
    pass


class TrainingError(ProcidentError):
    pass


class ProfileError(ProcidentError, ValueError):
    pass


class ModelVersionError(ProcidentError):
    pass


class ModelCorruptionError(ProcidentError):
    pass


class ConfigMismatchError(ProcidentError):
    pass
