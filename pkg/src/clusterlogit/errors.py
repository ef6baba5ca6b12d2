"""Exception types shared across the package."""


class DataValidationError(ValueError):
    """Input data or schema violates a contract (exit code 2 in the CLI)."""


class NumericalError(RuntimeError):
    """A numerical routine failed (exit code 3 in the CLI)."""


class ConvergenceError(NumericalError):
    pass


class HierarchyError(NumericalError):
    """An interaction is active while one of its parent main effects is zero."""


class MissingArtifactError(FileNotFoundError):
    """A pipeline stage was invoked before the stage it depends on."""
