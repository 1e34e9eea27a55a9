"""Exception hierarchy shared by all pipeline stages.

Exit-code mapping used by the CLI: user errors (parse/type/eval on bad
input) exit 1, internal invariant violations exit 2, protocol and
transport failures exit 3.
"""

from __future__ import annotations


class PolyrpcError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ParseError(PolyrpcError):
    def __init__(self, message: str, span=None):
        self.span = span
        if span is not None:
            message = f"{span}: {message}"
        super().__init__(message)


class TypeCheckError(PolyrpcError):
    def __init__(self, message: str, span=None):
        self.span = span
        if span is not None:
            message = f"{span}: {message}"
        super().__init__(message)


class EvalError(PolyrpcError):
    """Runtime failure while evaluating or stepping a machine."""


class BudgetExceeded(EvalError):
    """Step budget or recursion-depth cap exhausted."""


class StuckError(EvalError):
    """No semantics rule applies to the current machine state."""


class MissingCodeError(StuckError):
    """A closure's code name is absent from the active side's map."""


class InternalError(PolyrpcError):
    """An invariant the compiler guarantees was observed broken."""

    exit_code = 2


class ProtocolError(PolyrpcError):
    """Violation of the half-duplex Apply/Ret rendezvous contract."""

    exit_code = 3


class CodecError(ProtocolError):
    """Malformed, unknown, or truncated wire frame."""
