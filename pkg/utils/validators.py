# utils/validators.py
"""
Validation helpers for angles, latitudes and raster metadata.
"""

from utils.constants import MAX_ABS_LATITUDE
from utils.errors import GeometryError, RasterError


def check_elevation(elevation: float, name: str = "elevation") -> float:
    """Elevation angles must lie in (0, 90] degrees."""
    elevation = float(elevation)
    if not (0.0 < elevation <= 90.0):
        raise GeometryError(f"{name} must be in (0, 90], got {elevation}")
    return elevation


def normalize_azimuth(azimuth: float) -> float:
    """Wrap a compass bearing into [0, 360)."""
    wrapped = float(azimuth) % 360.0
    return 0.0 if wrapped == 360.0 else wrapped


def check_latitude(latitude: float) -> float:
    """Polar day/night is out of range for the sun sampler."""
    latitude = float(latitude)
    if abs(latitude) > MAX_ABS_LATITUDE:
        raise GeometryError(f"latitude must satisfy |latitude| <= {MAX_ABS_LATITUDE}, got {latitude}")
    return latitude


def check_same_meta(*rasters) -> None:
    """All rasters must share one GridMeta."""
    first = rasters[0].meta
    for other in rasters[1:]:
        if other.meta != first:
            raise RasterError(f"raster metadata mismatch: {first} vs {other.meta}")
