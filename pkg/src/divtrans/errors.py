"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class InvalidStateError(RuntimeError):
    """An object is not in a state that permits the requested operation."""


class UndefinedDEQError(ArithmeticError):
    """DEQ requested with identical system and baseline reference BLEU."""
