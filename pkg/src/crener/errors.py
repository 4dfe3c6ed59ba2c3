"""Exception types shared across the package."""


class CrenerError(Exception):
    """Base class for all package errors."""


class ConfigError(CrenerError):
    """Bad configuration: unknown key, unparsable value, invalid combination."""


class CorpusError(CrenerError):
    """Bad data: missing file, malformed record, out-of-range entity index."""


class DivergenceError(CrenerError):
    """Training produced a non-finite loss."""
