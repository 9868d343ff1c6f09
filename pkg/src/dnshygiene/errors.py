"""Exception hierarchy shared across the package.

Every runtime error carries a short machine-parseable ``code`` that the CLI
prints as a prefix on stderr.
"""

from __future__ import annotations


class DnsHygieneError(Exception):
    code = "ERROR"


# -- wire codec -------------------------------------------------------------

class WireError(DnsHygieneError, ValueError):
    code = "WIRE_ERROR"


class Truncated(WireError):
    code = "TRUNCATED"


class BadLabel(WireError):
    code = "BAD_LABEL"


class PointerLoop(WireError):
    code = "POINTER_LOOP"


class NotAQuery(WireError):
    code = "NOT_A_QUERY"


class MultiQuestion(WireError):
    code = "MULTI_QUESTION"


# -- threat intel -----------------------------------------------------------

class FileUnreadable(DnsHygieneError):
    code = "FILE_UNREADABLE"


class EmptyFeed(DnsHygieneError):
    code = "EMPTY_FEED"


# -- query log --------------------------------------------------------------

class MissingDir(DnsHygieneError):
    code = "MISSING_DIR"


class UnmappedColumn(DnsHygieneError):
    code = "UNMAPPED_COLUMN"


class QueryLogError(DnsHygieneError):
    code = "IO_ERROR"


# -- config / service -------------------------------------------------------

class ConfigError(DnsHygieneError):
    code = "CONFIG_ERROR"


class StartupError(DnsHygieneError):
    code = "STARTUP_FAILED"


class Unreachable(DnsHygieneError):
    code = "UNREACHABLE"


# -- analytics / intervention ----------------------------------------------

class InsufficientData(DnsHygieneError):
    code = "INSUFFICIENT_DATA"


class TooFewPlacebos(DnsHygieneError):
    code = "TOO_FEW_PLACEBOS"
