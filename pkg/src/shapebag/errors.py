"""Exception hierarchy. Each class carries the CLI error code it maps to."""


class ShapebagError(Exception):
    code = "E_INTERNAL"
    exit_status = 1


class DatasetError(ShapebagError):
    code = "E_DATASET"
    exit_status = 2


class ImageFormatError(DatasetError):
    pass


class VocabSizeError(ShapebagError):
    code = "E_VOCAB_SIZE"
    exit_status = 3

    def __init__(self, message, suggested_k=None):
        super().__init__(message)
        self.suggested_k = suggested_k


class IndexFormatError(ShapebagError):
    code = "E_INDEX"
    exit_status = 4


class IndexVersionError(IndexFormatError):
    pass


class ChecksumError(IndexFormatError):
    pass


class ProbeError(ShapebagError):
    code = "E_PROBE"
    exit_status = 5


class ConfigError(ShapebagError):
    code = "E_CONFIG"
    exit_status = 6


class GeometryError(ShapebagError, ValueError):
    """Degenerate contour geometry (too short, duplicate vertices, ...)."""
