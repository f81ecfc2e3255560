# utils/errors.py
"""
Exception hierarchy shared by every satsolar module.
"""

from typing import List, Optional, Tuple


class SatSolarError(Exception):
    """Base class for all pipeline errors."""


class RasterError(SatSolarError, ValueError):
    """Raster shape, metadata or content problem."""


class GeometryError(SatSolarError, ValueError):
    """Invalid angle, latitude or normal vector."""


class MetricError(SatSolarError, ValueError):
    """A metric has nothing to average over."""


class CoverageError(RasterError):
    """A mosaic pixel is covered by no tile."""

    def __init__(self, row: int, col: int):
        super().__init__(f"mosaic pixel (row={row}, col={col}) is not covered by any tile")
        self.pixel: Tuple[int, int] = (row, col)


class ConfigError(SatSolarError):
    """Pipeline config could not be read or failed validation."""

    def __init__(self, errors: List[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class StageError(SatSolarError):
    """A pipeline stage failed; wraps the original cause."""

    def __init__(self, stage: str, cause: Optional[BaseException] = None):
        message = f"stage '{stage}' failed"
        if cause is not None:
            message += f": {cause}"
        super().__init__(message)
        self.stage = stage
        self.cause = cause
