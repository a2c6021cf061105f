"""Exception hierarchy shared by every app."""


class LabError(Exception):
    """Base class for all lab errors."""


class DimensionError(LabError, ValueError):
    """Operand shapes are incompatible."""

    def __init__(self, message: str, *shapes):
        if shapes:
            message = f"{message}: " + ' vs '.join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class ContractError(LabError, ValueError):
    """A precondition of an operation was violated."""


class NumericError(LabError, ArithmeticError):
    """NaN/inf where a finite value is required, or a solver failed to converge."""


class ConfigError(LabError, ValueError):
    """Invalid configuration value."""

    def __init__(self, message: str, field: str = ''):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class TrainingAborted(LabError):
    """A training run stopped on a non-finite loss."""

    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class CorpusError(LabError):
    """A corpus source could not be downloaded or did not look like a Project Gutenberg text."""
