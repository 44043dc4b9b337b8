"""Exception taxonomy shared across the package.

Three failure classes cover everything: shapes that cannot combine,
arithmetic that left the finite range, and broken API contracts
(wrong value domain, wrong call order, unknown identifiers).
"""


class PromptSegError(Exception):
    """Base class for all package errors."""


class ShapeError(PromptSegError):
    """Operand shapes are incompatible with the requested operation."""


class NumericsError(PromptSegError):
    """An operation produced (or would produce) NaN/Inf from finite inputs."""


class ContractError(PromptSegError):
    """A documented precondition or value-domain contract was violated."""
