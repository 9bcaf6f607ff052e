"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a structural precondition (shape, range, finiteness)."""


class DegenerateInputError(ValueError):
    """The input is structurally valid but the quantity is undefined on it
    (e.g. a between-domain spread over a constant risk vector)."""


class CapExceededError(RuntimeError):
    """An exact enumeration would exceed its configured size cap."""
