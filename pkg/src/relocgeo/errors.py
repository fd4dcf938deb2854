"""Exception hierarchy shared by all modules."""


class RelocError(Exception):
    """Base class for every error raised by relocgeo."""


class InvalidInputError(RelocError, ValueError):
    pass


class BehindCameraError(RelocError, ValueError):
    pass


class EmptyInputError(RelocError, ValueError):
    pass


class EmptyInstanceError(RelocError, ValueError):
    pass


class DegenerateSampleError(RelocError):
    pass


class InsufficientMatchesError(RelocError):
    pass


class EstimationFailedError(RelocError):
    pass


class InvalidEssentialError(RelocError, ValueError):
    pass


class CheiralityError(RelocError):
    pass


class NoDepthOverlapError(RelocError):
    pass


class ScaleFailedError(RelocError):
    pass


class UnrenderableSceneError(RelocError):
    pass


class FormatError(RelocError, ValueError):
    """Malformed or unsupported file content."""


class TruncatedFileError(FormatError):
    pass


class SceneLoadError(RelocError):
    """A scene directory is missing files or contains malformed records."""


class MalformedSubmissionError(RelocError, ValueError):
    pass


class InsufficientMatchesWarning(UserWarning):
    """Fewer than five correspondences survived matching."""
