# modules/reprojection.py
"""
Parallax reprojection between off-nadir and nadir views.

Assumes an infinitely distant satellite and parallel ground rays: a pixel
at height h (above terrain) appears displaced by (h / res) * tan(angle)
pixels along each image axis. Collisions keep the highest source pixel
(z-buffer); target pixels nothing lands on are reported as occluded.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from modules.rasters import (
    ColorRaster,
    HeightRaster,
    InstanceMap,
    MaskRaster,
    _ScalarRaster,
)
from utils.constants import (
    INFILL_BLUR_SIZE,
    INFILL_MAX_ITERATIONS,
    INFILL_TOLERANCE,
    WALL_LADDER_STEP_M,
)
from utils.errors import GeometryError, RasterError
from utils.validators import check_elevation, check_same_meta, normalize_azimuth

logger = logging.getLogger(__name__)

DIRECTIONS = ("to_nadir", "to_offnadir")


# ===================================================================
# VIEW GEOMETRY
# ===================================================================

def derive_angles(elevation: float, azimuth: float) -> Tuple[float, float]:
    """
    Parallax angles of a satellite view.

    Args:
        elevation: satellite elevation in degrees, (0, 90]
        azimuth: satellite azimuth in degrees (compass)

    Returns:
        (angle_x, angle_y) in degrees, where
        angle_x = arctan(sin(azimuth) / tan(elevation)) and
        angle_y = arctan(cos(azimuth) / tan(elevation))
    """
    check_elevation(elevation)
    if elevation == 90.0:
        return 0.0, 0.0
    tan_elev = math.tan(math.radians(elevation))
    az = math.radians(azimuth)
    angle_x = math.degrees(math.atan(math.sin(az) / tan_elev))
    angle_y = math.degrees(math.atan(math.cos(az) / tan_elev))
    return angle_x, angle_y


@dataclass(frozen=True)
class ViewGeometry:
    elevation: float
    azimuth: float

    def __post_init__(self):
        object.__setattr__(self, "elevation", check_elevation(self.elevation))
        object.__setattr__(self, "azimuth", normalize_azimuth(self.azimuth))

    @property
    def angles(self) -> Tuple[float, float]:
        return derive_angles(self.elevation, self.azimuth)

    @property
    def angle_x(self) -> float:
        return self.angles[0]

    @property
    def angle_y(self) -> float:
        return self.angles[1]

    @property
    def is_nadir(self) -> bool:
        return self.elevation == 90.0


@dataclass(frozen=True, eq=False)
class ReprojectionResult:
    """
    output: raster of the same kind as the input
    occlusion: True where no source pixel landed
    provenance: winning source pixel (row-major flat index) per target, -1 if none
    """

    output: object
    occlusion: MaskRaster
    provenance: np.ndarray

    @property
    def occluded_fraction(self) -> float:
        return float(self.occlusion.values.mean())


# ===================================================================
# Z-BUFFER CORE
# ===================================================================

def round_half_away(x: np.ndarray) -> np.ndarray:
    """round() as in most maths texts: 2.5 -> 3, -2.5 -> -3."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _shift_factors(view: ViewGeometry, resolution: float, direction: str) -> Tuple[float, float]:
    """Pixels of (row, col) displacement per metre of height."""
    if direction not in DIRECTIONS:
        raise GeometryError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if view.is_nadir:
        return 0.0, 0.0
    angle_x, angle_y = view.angles
    sign = 1.0 if direction == "to_offnadir" else -1.0
    per_row = sign * math.tan(math.radians(angle_y)) / resolution
    per_col = sign * math.tan(math.radians(angle_x)) / resolution
    return per_row, per_col


def _zbuffer(
    source_index: np.ndarray,
    source_height: np.ndarray,
    shape: Tuple[int, int],
    per_row: float,
    per_col: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Scatter source samples to their displaced targets and resolve collisions.

    The highest sample wins; equal heights go to the lowest source index.

    Returns:
        (provenance, winning height) grids; provenance is -1 where nothing landed
    """
    rows, cols = shape
    src_r, src_c = np.divmod(source_index, cols)
    tgt_r = src_r + round_half_away(source_height * per_row).astype(np.int64)
    tgt_c = src_c + round_half_away(source_height * per_col).astype(np.int64)

    inside = (tgt_r >= 0) & (tgt_r < rows) & (tgt_c >= 0) & (tgt_c < cols)
    target = (tgt_r * cols + tgt_c)[inside]
    source_index = source_index[inside]
    source_height = source_height[inside]

    provenance = np.full(rows * cols, -1, dtype=np.int64)
    winner_height = np.zeros(rows * cols, dtype=np.float64)
    if target.size:
        # sort by target, then height descending, then source index ascending
        order = np.lexsort((source_index, -source_height, target))
        sorted_target = target[order]
        first = np.ones(sorted_target.size, dtype=bool)
        first[1:] = sorted_target[1:] != sorted_target[:-1]
        winners = order[first]
        provenance[target[winners]] = source_index[winners]
        winner_height[target[winners]] = source_height[winners]
    return provenance.reshape(shape), winner_height.reshape(shape)


def _gather(values, provenance: np.ndarray):
    """Build the output raster of the same kind as `values` from provenance."""
    landed = provenance >= 0
    safe = np.where(landed, provenance, 0)

    if isinstance(values, InstanceMap):
        ids = np.where(landed, values.ids.ravel()[safe], 0)
        return values.with_values(ids)
    if isinstance(values, MaskRaster):
        return values.with_values(landed & values.values.ravel()[safe])
    if isinstance(values, ColorRaster):
        colors = values.values.reshape(-1, 3)[safe]
        valid = landed & values.valid.ravel()[safe]
        return values.with_values(colors, valid)
    if isinstance(values, _ScalarRaster):
        valid = landed & values.valid.ravel()[safe]
        return values.with_values(values.values.ravel()[safe], valid)
    raise RasterError(f"cannot reproject rasters of type {type(values).__name__}")


def reproject(values, heights: HeightRaster, view: ViewGeometry, direction: str = "to_nadir") -> ReprojectionResult:
    """
    Move every pixel of `values` by the parallax of its height.

    Args:
        values: any raster kind sharing `heights`' metadata
        heights: height above terrain (DSM minus DTM) in the source frame
        view: satellite view geometry
        direction: "to_nadir" or "to_offnadir"

    Returns:
        ReprojectionResult; occluded pixels hold 0 ids, False masks, or
        invalid values depending on the raster kind
    """
    check_same_meta(values, heights)
    per_row, per_col = _shift_factors(view, heights.meta.spatial_resolution, direction)

    source_index = np.flatnonzero(heights.valid.ravel())
    source_height = heights.values.ravel()[source_index]
    provenance, _ = _zbuffer(source_index, source_height, heights.meta.shape, per_row, per_col)

    occlusion = MaskRaster(heights.meta, provenance < 0)
    output = _gather(values, provenance)
    logger.debug(
        f"reproject {direction} view=({view.elevation}, {view.azimuth}): "
        f"{int(occlusion.values.sum())} occluded pixels"
    )
    return ReprojectionResult(output, occlusion, provenance)


def _wall_ladder(heights: HeightRaster, step: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sub-projection samples for building sides.

    Each valid pixel is repeated at h_base, h_base + step, ... below h, plus
    h itself; h_base is the lowest of the pixel and its valid 4-neighbours.
    """
    h = heights.values
    valid = heights.valid
    padded = np.pad(np.where(valid, h, np.inf), 1, mode="constant", constant_values=np.inf)
    neighbour_min = np.minimum.reduce([
        padded[:-2, 1:-1],
        padded[2:, 1:-1],
        padded[1:-1, :-2],
        padded[1:-1, 2:],
    ])
    h_base = np.minimum(h, neighbour_min)

    index = np.flatnonzero(valid.ravel())
    top = h.ravel()[index]
    base = h_base.ravel()[index]
    below = np.ceil((top - base) / step).astype(np.int64)
    below = np.maximum(below, 0)

    counts = below + 1
    source_index = np.repeat(index, counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    k = np.arange(source_index.size) - starts
    rung = np.repeat(base, counts) + k * step
    source_height = np.where(k < np.repeat(below, counts), rung, np.repeat(top, counts))
    return source_index, source_height


def reproject_with_sides(
    heights: HeightRaster,
    view: ViewGeometry,
    values=None,
    direction: str = "to_offnadir",
    step: float = WALL_LADDER_STEP_M,
) -> ReprojectionResult:
    """
    Reproject a nadir height map with building walls filled in.

    Every pixel is also projected at 1 m rungs from its lowest 4-neighbour up
    to its own height, each rung z-buffered at its own height.

    Args:
        heights: nadir-frame height map
        view: satellite view geometry
        values: optional raster carried along (defaults to the rung heights)
        direction: usually "to_offnadir"
        step: rung spacing in metres

    Returns:
        ReprojectionResult
    """
    if values is not None:
        check_same_meta(values, heights)
    per_row, per_col = _shift_factors(view, heights.meta.spatial_resolution, direction)
    source_index, source_height = _wall_ladder(heights, step)
    provenance, winner_height = _zbuffer(source_index, source_height, heights.meta.shape, per_row, per_col)

    occlusion = MaskRaster(heights.meta, provenance < 0)
    if values is None:
        output = HeightRaster(heights.meta, winner_height, provenance >= 0)
    else:
        output = _gather(values, provenance)
    logger.debug(f"reproject_with_sides: {source_index.size} samples, {int(occlusion.values.sum())} occluded")
    return ReprojectionResult(output, occlusion, provenance)


# ===================================================================
# OCCLUSION INFILL
# ===================================================================

def _scanline_estimate(channel: np.ndarray, known: np.ndarray) -> np.ndarray:
    """
    Starting guess for occluded pixels: mean of row-wise and column-wise
    linear interpolation between known pixels, nearest known pixel where a
    line has none.
    """
    estimate = np.zeros_like(channel)
    weight = np.zeros_like(channel)
    for axis in (0, 1):
        lines = channel if axis == 1 else channel.T
        line_known = known if axis == 1 else known.T
        interp = np.zeros_like(lines)
        has = line_known.any(axis=1)
        positions = np.arange(lines.shape[1])
        for i in np.flatnonzero(has):
            k = line_known[i]
            interp[i] = np.interp(positions, positions[k], lines[i, k])
        if axis == 0:
            interp, has_grid = interp.T, np.broadcast_to(has[None, :], channel.shape)
        else:
            has_grid = np.broadcast_to(has[:, None], channel.shape)
        estimate += np.where(has_grid, interp, 0.0)
        weight += has_grid

    nearest = ndimage.distance_transform_edt(~known, return_distances=False, return_indices=True)
    fallback = channel[tuple(nearest)]
    return np.where(weight > 0, estimate / np.maximum(weight, 1), fallback)


def _diffuse(channel: np.ndarray, known: np.ndarray, holes: np.ndarray) -> np.ndarray:
    """Jacobi neighbour-mean sweeps over `holes`, then a box blur on them."""
    work = np.where(known, channel, _scanline_estimate(channel, known))
    for iteration in range(INFILL_MAX_ITERATIONS):
        padded = np.pad(work, 1, mode="edge")
        mean = 0.25 * (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:])
        change = np.abs(mean[holes] - work[holes]).max()
        work[holes] = mean[holes]
        if change < INFILL_TOLERANCE:
            break
    logger.debug(f"infill diffusion stopped after {iteration + 1} sweeps (last change {change:.3f})")
    blurred = ndimage.uniform_filter(work, size=INFILL_BLUR_SIZE, mode="nearest")
    work[holes] = blurred[holes]
    return work


def infill_occlusions(img, occlusion: MaskRaster, fill=None):
    """
    Fill occluded pixels of a colour or scalar raster.

    Args:
        img: ColorRaster or scalar raster (e.g. HeightRaster)
        occlusion: True where the pixel must be filled
        fill: optional raster of the same kind to copy from

    Returns:
        raster of the same kind; non-occluded pixels are untouched
    """
    check_same_meta(img, occlusion)
    holes = np.asarray(occlusion.values, dtype=bool)
    if not holes.any():
        return img.with_values(img.values, img.valid)

    if fill is not None:
        check_same_meta(img, fill)
        shaped = holes[..., None] if img.values.ndim == 3 else holes
        values = np.where(shaped, fill.values, img.values)
        valid = np.where(holes, fill.valid, img.valid)
        return img.with_values(values, valid)

    known = img.valid & ~holes
    if not known.any():
        raise RasterError("occlusion covers the whole raster and no fill raster was given")

    if isinstance(img, ColorRaster):
        source = img.values.astype(np.float64)
        channels = [_diffuse(source[..., c], known, holes) for c in range(3)]
        values = np.clip(np.round(np.stack(channels, axis=-1)), 0, 255).astype(np.uint8)
    elif isinstance(img, _ScalarRaster):
        values = _diffuse(np.array(img.values, dtype=np.float64), known, holes)
    else:
        raise RasterError(f"cannot infill rasters of type {type(img).__name__}")

    logger.info(f"Infilled {int(holes.sum())} occluded pixels by diffusion")
    return img.with_values(values, img.valid | holes)
