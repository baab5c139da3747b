"""Exception types raised across the package."""


class PrepackError(Exception):
    """Base class for all package errors."""


class EmptyInput(PrepackError, ValueError):
    pass


class InvalidPrompt(PrepackError, ValueError):
    """A prompt is empty or carries an out-of-vocabulary token."""


class CapacityTooSmall(PrepackError, ValueError):
    pass


class DegenerateInput(PrepackError, ValueError):
    """Regression inputs have no spread in the explanatory variable."""


class ShapeMismatch(PrepackError, ValueError):
    pass


class PlanMismatch(PrepackError, ValueError):
    """A packing plan does not describe the prompts it is applied to."""


class InvalidConfig(PrepackError, ValueError):
    pass
