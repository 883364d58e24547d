"""Exception types raised across the package.

Input problems derive from ``InvalidInput`` (CLI exit code 2); numerical
blow-ups derive from ``NumericalError`` (CLI exit code 3).
"""


class InvalidInput(ValueError):
    """Base class for rejected inputs, parameters or datasets."""


class InvalidGeometry(InvalidInput):
    pass


class EmptyPartition(InvalidInput):
    pass


class NoPocket(InvalidInput):
    pass


class InvalidParameter(InvalidInput):
    pass


class ShapeError(InvalidInput):
    pass


class DegenerateInput(InvalidInput):
    pass


class EmptyInput(InvalidInput):
    pass


class InvalidDataset(InvalidInput):
    pass


class InvalidSample(InvalidInput):
    pass


class UnknownInterval(InvalidInput):
    pass


class FrameOutOfRange(InvalidInput):
    pass


class NumericalError(ArithmeticError):
    """Non-finite value produced during simulation or training."""
