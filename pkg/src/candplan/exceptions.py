"""Error types raised across the package."""


class ContractViolation(ValueError):
    """An input broke a documented precondition (shape, finiteness, length)."""


class ParameterError(ValueError):
    """A configuration or argument value is outside its allowed range."""


class GenerationError(RuntimeError):
    """Scene generation exhausted its retry budget."""


class TrainingDivergence(RuntimeError):
    """A loss component became non-finite or exploded during training."""
