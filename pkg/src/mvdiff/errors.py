"""Exception types shared across the package."""


class MvdiffError(Exception):
    """Base class for package errors."""


class ShapeMismatchError(MvdiffError, ValueError):
    """Operands have incompatible shapes; message names both."""


class ConfigurationError(MvdiffError, ValueError):
    """A configuration value violates a stated constraint."""


class ContractError(MvdiffError, ValueError):
    """An operation was called outside its contract (e.g. backward on a non-scalar)."""


class TrainingDivergedError(MvdiffError, RuntimeError):
    """Training produced a non-finite loss; message names the offending parameters."""
