# modules/rasters.py
"""
Raster containers and grid metadata shared by every pipeline stage.

All containers are frozen dataclasses holding read-only numpy arrays, so a
raster can be handed to worker threads/processes without copying concerns.
Invalid pixels are carried in an explicit boolean `valid` grid; their values
are zeroed and never used in arithmetic.
"""

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from utils.constants import DEFAULT_SPATIAL_RESOLUTION, UNIT_NORMAL_TOLERANCE
from utils.errors import RasterError

INSTANCE_KINDS = ("buildings", "roof_segments")


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _valid_grid(valid, shape: Tuple[int, int]) -> np.ndarray:
    if valid is None:
        return np.ones(shape, dtype=bool)
    valid = np.array(valid, dtype=bool)
    if valid.shape != shape:
        raise RasterError(f"validity mask shape {valid.shape} does not match raster shape {shape}")
    return valid


# ===================================================================
# GRID METADATA
# ===================================================================

@dataclass(frozen=True)
class GridMeta:
    """
    Planar grid placement.

    origin_x/origin_y is the map position (metres) of the top-left corner of
    the top-left pixel. Column index grows east, row index grows south.
    """

    origin_x: float
    origin_y: float
    width: int
    height: int
    spatial_resolution: float = DEFAULT_SPATIAL_RESOLUTION

    def __post_init__(self):
        if not self.spatial_resolution > 0:
            raise RasterError(f"spatial_resolution must be > 0, got {self.spatial_resolution}")
        if int(self.width) < 1 or int(self.height) < 1:
            raise RasterError(f"width and height must be >= 1, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "origin_x", float(self.origin_x))
        object.__setattr__(self, "origin_y", float(self.origin_y))
        object.__setattr__(self, "spatial_resolution", float(self.spatial_resolution))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        """(west, south, east, north) in map metres."""
        res = self.spatial_resolution
        return (
            self.origin_x,
            self.origin_y - self.height * res,
            self.origin_x + self.width * res,
            self.origin_y,
        )

    def pixel_center(self, row: float, col: float) -> Tuple[float, float]:
        res = self.spatial_resolution
        return (self.origin_x + (col + 0.5) * res, self.origin_y - (row + 0.5) * res)

    def pixel_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Map x and y of every pixel centre, each shaped (height, width)."""
        res = self.spatial_resolution
        xs = self.origin_x + (np.arange(self.width) + 0.5) * res
        ys = self.origin_y - (np.arange(self.height) + 0.5) * res
        return np.meshgrid(xs, ys)

    def map_to_index(self, x, y):
        """Fractional (row, col) of map coordinates; pixel centres are integers."""
        res = self.spatial_resolution
        col = (np.asarray(x, dtype=float) - self.origin_x) / res - 0.5
        row = (self.origin_y - np.asarray(y, dtype=float)) / res - 0.5
        return row, col

    def window(self, row0: int, col0: int, height: int, width: int) -> "GridMeta":
        """Metadata of a sub-grid starting at (row0, col0)."""
        res = self.spatial_resolution
        return GridMeta(
            origin_x=self.origin_x + col0 * res,
            origin_y=self.origin_y - row0 * res,
            width=width,
            height=height,
            spatial_resolution=res,
        )

    def to_dict(self) -> dict:
        return {
            "origin_x": self.origin_x,
            "origin_y": self.origin_y,
            "width": self.width,
            "height": self.height,
            "spatial_resolution": self.spatial_resolution,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridMeta":
        return cls(
            origin_x=data["origin_x"],
            origin_y=data["origin_y"],
            width=data["width"],
            height=data["height"],
            spatial_resolution=data.get("spatial_resolution", DEFAULT_SPATIAL_RESOLUTION),
        )


# ===================================================================
# SCALAR RASTERS
# ===================================================================

@dataclass(frozen=True, eq=False)
class _ScalarRaster:
    meta: GridMeta
    values: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != self.meta.shape:
            raise RasterError(f"values shape {values.shape} does not match meta shape {self.meta.shape}")
        valid = _valid_grid(self.valid, self.meta.shape)
        if not np.all(np.isfinite(values[valid])):
            raise RasterError("valid pixels must hold finite values")
        values[~valid] = 0.0
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))

    @classmethod
    def full(cls, meta: GridMeta, value: float):
        return cls(meta, np.full(meta.shape, float(value)))

    def with_values(self, values, valid=None):
        return replace(self, values=values, valid=self.valid if valid is None else valid)

    @property
    def all_valid(self) -> bool:
        return bool(self.valid.all())


@dataclass(frozen=True, eq=False)
class HeightRaster(_ScalarRaster):
    """Heights in metres: a DSM, a DTM, or a height map (DSM minus DTM)."""


@dataclass(frozen=True, eq=False)
class FluxRaster(_ScalarRaster):
    """Annual insolation in kWh/m^2/year."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values < 0):
            raise RasterError("flux values must be non-negative")


@dataclass(frozen=True, eq=False)
class GrayRaster(_ScalarRaster):
    """Single-channel 8-bit image (hillshade output) stored as float."""


# ===================================================================
# COLOUR, MASK, NORMAL, INSTANCE RASTERS
# ===================================================================

@dataclass(frozen=True, eq=False)
class ColorRaster:
    meta: GridMeta
    values: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        raw = np.asarray(self.values)
        if raw.shape != self.meta.shape + (3,):
            raise RasterError(f"colour values must be shaped {self.meta.shape + (3,)}, got {raw.shape}")
        if raw.size and (raw.min() < 0 or raw.max() > 255):
            raise RasterError("colour channels must lie in [0, 255]")
        values = np.array(raw, dtype=np.uint8)
        valid = _valid_grid(self.valid, self.meta.shape)
        values[~valid] = 0
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))

    def with_values(self, values, valid=None):
        return replace(self, values=values, valid=self.valid if valid is None else valid)


@dataclass(frozen=True, eq=False)
class MaskRaster:
    meta: GridMeta
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=bool)
        if values.shape != self.meta.shape:
            raise RasterError(f"mask shape {values.shape} does not match meta shape {self.meta.shape}")
        object.__setattr__(self, "values", _frozen(values))

    def with_values(self, values, valid=None):
        return replace(self, values=values)


@dataclass(frozen=True, eq=False)
class NormalField:
    """Per-pixel upward unit normals in (east, north, up) components."""

    meta: GridMeta
    values: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != self.meta.shape + (3,):
            raise RasterError(f"normals must be shaped {self.meta.shape + (3,)}, got {values.shape}")
        valid = _valid_grid(self.valid, self.meta.shape)
        good = values[valid]
        if good.size:
            norms = np.linalg.norm(good, axis=-1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORMAL_TOLERANCE):
                raise RasterError("normals must be unit length at valid pixels")
            if np.any(good[:, 2] < 0):
                raise RasterError("normals must point into the upper hemisphere")
        values[~valid] = (0.0, 0.0, 1.0)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))


@dataclass(frozen=True, eq=False)
class InstanceMap:
    """Per-pixel integer instance ids, 0 = background."""

    meta: GridMeta
    ids: np.ndarray
    kind: str = "buildings"

    def __post_init__(self):
        ids = np.array(self.ids, dtype=np.int64)
        if ids.shape != self.meta.shape:
            raise RasterError(f"ids shape {ids.shape} does not match meta shape {self.meta.shape}")
        if ids.size and ids.min() < 0:
            raise RasterError("instance ids must be non-negative")
        if self.kind not in INSTANCE_KINDS:
            raise RasterError(f"kind must be one of {INSTANCE_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "ids", _frozen(ids))

    @property
    def values(self) -> np.ndarray:
        return self.ids

    def with_values(self, values, valid=None):
        return replace(self, ids=values)

    def binary(self) -> np.ndarray:
        return self.ids > 0

    def instance_ids(self) -> np.ndarray:
        """Sorted non-zero ids present in the map."""
        present = np.unique(self.ids)
        return present[present > 0]

    def areas(self) -> dict:
        """Pixel count per instance id."""
        present, counts = np.unique(self.ids[self.ids > 0], return_counts=True)
        return {int(i): int(c) for i, c in zip(present, counts)}


def canonical_renumber(ids: np.ndarray) -> np.ndarray:
    """
    Renumber non-zero ids 1..K in order of each instance's first pixel
    (row-major), so equal partitions always get equal ids.
    """
    flat = ids.ravel()
    present = flat > 0
    if not present.any():
        return np.zeros_like(ids)
    order_ids, first_index = np.unique(flat[present], return_index=True)
    first_positions = np.flatnonzero(present)[first_index]
    ranked = order_ids[np.argsort(first_positions, kind="stable")]
    lookup = np.zeros(int(flat.max()) + 1, dtype=np.int64)
    lookup[ranked] = np.arange(1, len(ranked) + 1)
    return lookup[ids]
