"""Exception hierarchy shared by every module."""


class TreecastError(Exception):
    """Base class for all errors raised by treecast."""


class ParameterError(TreecastError, ValueError):
    """Invalid model parameter (non-positive omega, k = 0, ...)."""


class DomainError(TreecastError, ValueError):
    """A closed-form quantity is undefined for the requested arguments."""


class NumericError(TreecastError, ArithmeticError):
    """Root finding failed to converge or a denominator became singular."""


class CapacityError(TreecastError):
    """Problem size exceeds an enumeration or atom cap."""


class ConditioningError(TreecastError):
    """Conditioning on an event of probability zero."""
