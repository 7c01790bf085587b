"""Exception hierarchy shared by every module.

Domain failures (a hypothesis that does not hold, a search that ran out of
budget) are distinct from malformed input so callers such as the CLI can map
them to different exit codes.
"""

from __future__ import annotations


class TrajpaceError(Exception):
    """Base class for all package errors."""


class InputError(TrajpaceError, ValueError):
    """Malformed or inconsistent input."""


class DomainError(TrajpaceError):
    """A well-formed request whose answer is a negative domain fact."""


class EmptyInput(InputError):
    pass


class InconsistentRoot(InputError):
    pass


class PrefixConflict(InputError):
    pass


class UnknownNode(InputError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class TerminalNode(InputError):
    pass


class DepthOutOfRange(InputError, IndexError):
    pass


class LengthMismatch(InputError):
    pass


class InvalidConfig(InputError):
    pass


class InvalidModel(InputError):
    pass


class EmptyChart(InputError):
    pass


class InvalidTauSpacing(InputError):
    pass


class IncompatibleHorizons(InputError):
    pass


class UnboundedPayoff(DomainError):
    pass


class BudgetExceeded(DomainError):
    """A search or enumeration would exceed its size cap; the answer is unknown."""

    def __init__(self, message: str, required: int | None = None, budget: int | None = None):
        super().__init__(message)
        self.required = required
        self.budget = budget


class HypothesisViolated(DomainError):
    """A precondition of a structural theorem fails on the given data."""

    def __init__(self, hypothesis: str, message: str, node: int | None = None,
                 path: tuple[int, ...] | None = None):
        super().__init__(f"{hypothesis}: {message}")
        self.hypothesis = hypothesis
        self.node = node
        self.path = path
