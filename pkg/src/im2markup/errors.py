"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated a documented precondition."""


class ShapeError(ContractError):
    """Operand shapes do not conform to an operator's rule."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class NumericError(FloatingPointError):
    """An operation produced NaN or Inf."""

    def __init__(self, op, message=None):
        self.op = op
        super().__init__(message or f"non-finite values produced by op '{op}'")
