"""Exception hierarchy.

Every error raised by the package derives from :class:`DeepliftError`. The CLI
maps the two main branches to exit codes: :class:`DataError` -> 3,
:class:`NumericError` -> 4.
"""


class DeepliftError(Exception):
    exit_code = 1


class DataError(DeepliftError, ValueError):
    exit_code = 3


class NumericError(DeepliftError, ArithmeticError):
    exit_code = 4


class ShapeMismatch(DataError):
    pass


class AxisOutOfRange(DataError):
    pass


class NonFinite(NumericError):
    pass


class ModelFormatError(DataError):
    """Malformed model manifest."""


class SoftmaxNotLast(ModelFormatError):
    pass


class FusedLayerError(ModelFormatError):
    pass


class ShapeChainError(ModelFormatError):
    pass


class WeightsTruncated(ModelFormatError):
    pass


class TargetOutOfRange(DataError):
    pass


class MissingRule(DataError):
    pass


class ReferenceMismatch(DataError):
    """Reference spec incompatible with the input."""


class BadMagic(DataError):
    pass


class Truncated(DataError):
    pass


class PlacementError(DataError):
    """A motif could not be placed without overlap."""


class Divergence(NumericError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])
