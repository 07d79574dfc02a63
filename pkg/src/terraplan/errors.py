"""Exception types shared across the toolkit."""


class OutOfBoundsError(Exception):
    """A queried cell or state lies outside the map grid."""


class ShapeMismatchError(Exception):
    """An array input does not have the shape an operation requires."""


class FormatError(Exception):
    """A file is truncated, corrupt, or has an unsupported version."""


class SpecError(Exception):
    """An arena description contains unbuildable or overlapping geometry."""


class DivergenceDetected(Exception):
    """Training produced a non-finite epoch loss."""
