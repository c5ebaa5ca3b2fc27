"""Exception types raised at the package's contract boundaries."""


class UnlearnkitError(Exception):
    """Base class for all package-specific failures."""


class ArgumentError(UnlearnkitError, ValueError):
    """An operation was called with out-of-contract arguments."""


class ManifestError(UnlearnkitError, ValueError):
    """A forget manifest is inconsistent with its dataset."""


class ShapeContractError(UnlearnkitError, ValueError):
    """Array shapes do not match the architecture descriptor."""


class NumericError(UnlearnkitError, ArithmeticError):
    """A computation produced non-finite values.

    `epoch` carries the failing epoch index when raised inside a training
    loop, else None.
    """

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class DegenerateInputError(UnlearnkitError, ValueError):
    """An analytics routine received input with no usable variance."""
