"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: input errors exit 1, contract
violations exit 2, numerical failures exit 3.
"""


class InputError(ValueError):
    """Bad user-supplied data: malformed files, invalid tokens, bad shapes."""


class ShapeError(InputError):
    """Tensor extents are incompatible for the requested operation."""


class ContractError(RuntimeError):
    """A caller broke an API precondition (e.g. backward on a non-scalar)."""


class NumericalError(ArithmeticError):
    """A forward op produced NaN or Inf."""
