"""Exception types shared across the harness."""


class HarnessError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(HarnessError):
    """Invalid or incomplete configuration (missing pricing, bad backend section, ...)."""


class DatasetError(HarnessError):
    """A dataset or fixture file failed to parse or violates its schema."""


class TransportError(HarnessError):
    """Network-level failure that survived the bounded retry policy."""


class RateLimitError(TransportError):
    """HTTP 429 persisted through every retry attempt."""


class ProtocolError(HarnessError):
    """The provider answered, but the payload is not a usable completion."""

    def __init__(self, message, raw_body=""):
        super().__init__(message)
        self.raw_body = raw_body


class EstimationParseError(HarnessError):
    """A budget-estimation response contained no parseable integer."""

    def __init__(self, message, raw_response="", outcome=None):
        super().__init__(message)
        self.raw_response = raw_response
        # Outcome retained so callers can still account the call's token usage.
        self.outcome = outcome
