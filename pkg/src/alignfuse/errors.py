"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class DimensionError(ContractError):
    """Operand shapes are incompatible; the message names both shapes."""


class FormatError(ValueError):
    """A file does not conform to its container format."""


class TrainingAbort(RuntimeError):
    """Training was aborted (e.g. non-finite gradients); carries a diagnostic."""
