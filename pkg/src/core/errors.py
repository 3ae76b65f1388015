"""
Error hierarchy for the place recognition pipeline.

Every failure raised by the core modules derives from PlaceRecognitionError
so the command line can report it with a single handler.
"""


class PlaceRecognitionError(Exception):
    """Base class for all pipeline errors."""


# Image decoding

class UnsupportedFormat(PlaceRecognitionError, ValueError):
    """File is neither PNG nor binary PPM/PGM."""


class CorruptFile(PlaceRecognitionError, ValueError):
    """File has a known signature but cannot be decoded."""


class ImageTooSmall(PlaceRecognitionError, ValueError):
    """Width or height below the pyramid minimum."""


# Segmentation

class TargetCountTooLarge(PlaceRecognitionError, ValueError):
    """Requested superpixel count exceeds width * height / 16."""


class DegenerateImage(PlaceRecognitionError, ValueError):
    """Image is too small for the requested grid step."""


# Features and encoding

class TooFewDescriptors(PlaceRecognitionError, ValueError):
    pass


class NoCandidates(PlaceRecognitionError):
    """No region holds enough keypoints to become a landmark."""


class DimensionMismatch(PlaceRecognitionError, ValueError):
    pass


# Mining

class EmptyScene(PlaceRecognitionError):
    """Image produced no usable features or landmarks."""


class EmptyLibrary(PlaceRecognitionError):
    pass


class InconsistentRankings(PlaceRecognitionError, ValueError):
    pass


class EmptyFeatureSet(PlaceRecognitionError, ValueError):
    pass


# Retrieval

class UnknownLibraryId(PlaceRecognitionError, KeyError):
    def __str__(self):
        # KeyError quotes its argument
        return Exception.__str__(self)


class DuplicateImageId(PlaceRecognitionError, ValueError):
    pass


# Evaluation

class EmptyInput(PlaceRecognitionError, ValueError):
    pass


class RankOutOfBounds(PlaceRecognitionError, ValueError):
    pass


class RelevantNotInDatabase(PlaceRecognitionError):
    pass


class MissingDataset(PlaceRecognitionError, FileNotFoundError):
    pass


class MissingGroundTruth(PlaceRecognitionError, FileNotFoundError):
    pass


class InvalidParams(PlaceRecognitionError, ValueError):
    """Synthetic dataset parameters out of range."""


# Configuration

class InvalidConfig(PlaceRecognitionError, ValueError):
    pass


class InvalidParameter(PlaceRecognitionError, ValueError):
    """A numeric precondition of an operation is violated."""
