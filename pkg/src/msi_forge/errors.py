"""Exception hierarchy.

Every error carries the process exit code the CLI should use for it:
2 for configuration problems, 3 for bad input data, 4 for internal faults.
"""

from __future__ import annotations


class MsiForgeError(Exception):
    exit_code = 4


class ConfigError(MsiForgeError, ValueError):
    exit_code = 2


class DataError(MsiForgeError, ValueError):
    exit_code = 3


# configuration
class ConfigInvalid(ConfigError):
    pass


class ConfigMismatch(ConfigError):
    pass


class InvalidRange(ConfigError):
    pass


class SubcommandUnknown(ConfigError):
    pass


# annotation ingestion
class MalformedDocument(DataError):
    pass


class SchemaViolation(DataError):
    pass


class DanglingReference(DataError):
    pass


class DegeneratePolygon(DataError):
    pass


class RunLengthMismatch(DataError):
    pass


class InvalidEncoding(DataError):
    pass


class MissingSegmentation(DataError):
    pass


# reference pool / assembly
class MalformedManifest(DataError):
    pass


class EmptyCategory(DataError):
    pass


class MissingCaption(DataError):
    pass


class BuildFailed(DataError):
    def __init__(self, message: str, failures: list[dict] | None = None):
        super().__init__(message)
        self.failures = failures or []


# rasters / io
class ImageLoadFailure(DataError):
    pass


class ZeroSizeBox(DataError):
    pass


class IoFailure(MsiForgeError, OSError):
    exit_code = 3


# schedules and numerics
class EpochOutOfRange(ConfigError):
    pass


class ShapeMismatch(DataError):
    pass


class StepOutOfRange(DataError):
    pass


# metrics
class SampleIdMismatch(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class ZeroVector(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class UnpairedId(DataError):
    pass
