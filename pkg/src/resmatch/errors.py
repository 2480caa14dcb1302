"""Exception types shared across the package."""


class ResmatchError(Exception):
    """Base class for all package errors."""


class ConfigInvalid(ResmatchError):
    """A run configuration is malformed or inconsistent."""


class DataError(ResmatchError):
    """Input data is missing, malformed, or violates a precondition."""


class UnknownSourceClass(DataError):
    """A label raster contains a class index with no remap entry."""


class AllIgnored(DataError):
    """Every pixel (or cell) carries the ignore sentinel."""


class TooFewTiles(DataError):
    """Not enough tiles to honor the requested split proportions."""


class NonIntegralRatio(DataError):
    """Label GSD is not an integer multiple of the image GSD."""


class MissingInput(DataError):
    """A required input file or artifact does not exist."""


class ShapeError(ResmatchError):
    """Tensor or raster shapes are incompatible with the operation."""


class IndivisibleShape(ShapeError):
    """Spatial size is not divisible by the coarsening factor."""


class ShapeMismatch(ShapeError):
    """Two inputs that must share a shape do not."""


class EmptyMatrix(ResmatchError):
    """A confusion matrix with zero counted pixels cannot be scored."""


class EmptyExemplarSet(ResmatchError):
    """Adversarial training requested without any exemplar labels."""


class ArchitectureMismatch(ResmatchError):
    """Source and target networks disagree on parameter shapes."""


class LabelUpsampled(ResmatchError):
    """A label was spatially upsampled inside a guarded loss path."""
