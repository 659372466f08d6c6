"""Exception hierarchy shared by every commlab module."""


class CommLabError(Exception):
    """Base class. ``reason`` is a short machine-readable tag used by the CLI."""

    reason = "error"


class ConfigurationError(CommLabError, ValueError):
    reason = "configuration"


class EngineViolation(CommLabError, RuntimeError):
    """A protocol tried to do something the one-way engine forbids."""

    reason = "engine-violation"


class EnumerationCapError(CommLabError):
    """Exhaustive work would exceed the configured enumeration cap."""

    reason = "enumeration-cap"

    def __init__(self, needed, cap, what="enumeration"):
        self.needed = needed
        self.cap = cap
        super().__init__(
            f"{what} needs {needed} evaluations, cap is {cap} "
            "(raise it with enum_cap=... or COMMLAB_ENUM_CAP)"
        )


class PreconditionError(CommLabError, ValueError):
    reason = "precondition"


class EmptyPrimeRangeError(CommLabError, ValueError):
    reason = "empty-prime-range"


class ProtocolInconsistencyError(CommLabError, RuntimeError):
    """Supplied protocols are not deterministic/valid for the claimed function."""

    reason = "protocol-inconsistency"


class WidthOverflowError(CommLabError, OverflowError):
    reason = "width-overflow"


class StrictTurnstileViolation(CommLabError, ValueError):
    reason = "strict-violation"

    def __init__(self, position, index, value):
        self.position = position
        self.index = index
        self.value = value
        super().__init__(
            f"coordinate {index} becomes {value} after update #{position} "
            "(strict turnstile requires nonnegative prefixes)"
        )


class OutsideRegimeWarning(UserWarning):
    """Parameters are accepted but lie outside the asymptotic regime of the construction."""
