"""Exception hierarchy.

Numerical failures derive from :class:`NumericalError` and I/O / format
failures from :class:`ModelFormatError`, so the CLI can map them onto
distinct exit codes.
"""


class GeoromError(Exception):
    pass


class NumericalError(GeoromError):
    pass


class DegenerateShapeError(NumericalError):
    pass


class MeshError(NumericalError):
    pass


class FoldError(NumericalError):
    """Mapping Jacobian determinant is non-positive somewhere."""

    def __init__(self, message, points=None):
        super().__init__(message)
        self.points = points


class SingularSystemError(NumericalError):
    def __init__(self, message, offending=None):
        super().__init__(message)
        self.offending = offending


class NewtonDivergenceError(NumericalError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class DegenerateDatasetError(NumericalError):
    pass


class SampleFailure(NumericalError):
    """Offline stage failed on a specific sample."""

    def __init__(self, sample_id, cause):
        super().__init__(f"sample {sample_id}: {cause}")
        self.sample_id = sample_id
        self.cause = cause


class ModelFormatError(GeoromError):
    pass


class ChecksumError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass
