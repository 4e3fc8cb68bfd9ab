"""Exception hierarchy shared by all planelayout modules.

Every error raised by the library derives from PlaneLayoutError so CLI
entry points can map library failures to exit codes in one place.
"""


class PlaneLayoutError(Exception):
    """Base class for all planelayout errors."""


class InputError(PlaneLayoutError):
    """Malformed or inconsistent input (bad files, shapes, annotations)."""


class NumericalError(PlaneLayoutError):
    """A numeric procedure failed (degeneracy, no consensus, divergence)."""


# -- geometry -----------------------------------------------------------

class DegenerateSurface(NumericalError):
    """Raw surface parameters are (numerically) all zero."""


class DegeneratePlane(NumericalError):
    """Recovered plane normal has vanishing magnitude."""


# -- fitting ------------------------------------------------------------

class DegenerateConfiguration(NumericalError):
    """Sample configuration does not determine a surface (collinear pixels)."""


class NoConsensus(NumericalError):
    """RANSAC found no model above the inlier-ratio floor."""


class EmptyRegion(InputError):
    """An annotated region covers too few valid pixels to fit."""


class InvalidFootprint(InputError):
    """A room footprint polygon self-intersects."""


# -- clustering / layout ------------------------------------------------

class NoInstances(NumericalError):
    """Every cluster fell below the minimum pixel fraction."""


class IllConditionedCorner(NumericalError):
    """Corner system nearly singular (near-parallel boundary lines)."""


# -- objectives / metrics -----------------------------------------------

class EmptyOverlap(InputError):
    """Prediction and ground truth share no valid pixels."""


class ShapeMismatch(InputError):
    """Rasters that must share dimensions do not."""


class NonFiniteLoss(NumericalError):
    """Loss evaluated to NaN or infinity during optimization."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


# -- dataset I/O --------------------------------------------------------

class MissingField(InputError):
    """A required dataset-record file is absent."""

    def __init__(self, field, path=None):
        self.field = field
        self.path = path
        msg = f"missing record field: {field}"
        if path is not None:
            msg += f" (expected at {path})"
        super().__init__(msg)


class CorruptRaster(InputError):
    """A raster file exists but cannot be decoded."""


class IntrinsicsMismatch(InputError):
    """Declared camera intrinsics disagree with raster dimensions."""
