"""Exception types raised across the package."""


class EquivCNPError(Exception):
    pass


class DimensionError(EquivCNPError, ValueError):
    """Operand shapes or channel counts disagree."""


class DomainError(EquivCNPError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class ContractError(EquivCNPError, ValueError):
    """A call violates an API precondition (wrong group tag, non-scalar loss, ...)."""


class DegenerateInputError(EquivCNPError, ValueError):
    pass


class NumericError(EquivCNPError, ArithmeticError):
    """A factorization or iteration failed numerically."""
