"""Exception types mapped to CLI exit codes."""


class LgosrError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(LgosrError):
    """Bad configuration: unknown operator set, malformed anchors, bad flags. Exit code 2."""


class DataError(LgosrError):
    """Bad input data: unreadable CSV, missing columns, degenerate splits. Exit code 3."""


class ParseError(ConfigError):
    """Malformed expression text; message names the offending token."""
