"""Exception hierarchy shared by all ftmixer modules."""


class FtMixerError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(FtMixerError):
    """Array shapes are incompatible for the requested operation."""


class ConfigError(FtMixerError):
    """A configuration value violates its constraints."""


class ContractError(FtMixerError):
    """A caller violated an operation's precondition."""


class NumericError(FtMixerError):
    """A computation produced or received non-finite values."""


class DataError(FtMixerError):
    """A dataset file is missing, unreadable, or inconsistent."""


class ParseError(DataError):
    """A dataset file has malformed content; carries the offending line."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
