"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A parameter is outside its admissible domain."""


class ShapeError(ValueError):
    """Array dimensions are inconsistent with the declared (T, p, L)."""


class DataFormatError(ValueError):
    """A file or configuration document is malformed."""


class InsufficientDataError(RuntimeError):
    """Not enough data/draws to compute the requested statistic."""


class NumericError(RuntimeError):
    """A numerical procedure failed (degenerate fit, sampler breakdown)."""
