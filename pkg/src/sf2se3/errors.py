"""Exception hierarchy.

Two families matter to callers: :class:`FormatError` for unreadable files and
:class:`DegenerateInputError` for inputs the estimator cannot work with. The
CLI maps them to distinct exit codes.
"""


class Sf2se3Error(Exception):
    pass


class FormatError(Sf2se3Error):
    pass


class TruncatedFileError(FormatError):
    pass


class UnsupportedFormatError(FormatError):
    pass


class DegenerateInputError(Sf2se3Error, ValueError):
    pass


class UnderdeterminedError(DegenerateInputError):
    pass


class DegenerateGeometryError(DegenerateInputError):
    pass


class PointBehindCameraError(DegenerateInputError):
    pass


class EmptyPointSetError(DegenerateInputError):
    pass


class EmptySpatialModelError(DegenerateInputError):
    pass


class ClusterTooSmallError(DegenerateInputError):
    pass


class NoObjectError(DegenerateInputError):
    pass


class DegenerateSceneError(DegenerateInputError):
    pass


class UndefinedMetricError(Sf2se3Error, ValueError):
    pass
