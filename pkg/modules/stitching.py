# modules/stitching.py
"""
Tile splitting and seamless mosaicking of overlapping tile outputs.

Each tile is weighted by a separable linear ramp that rises from
1/(M+1) at the tile edge to 1 after M pixels. Continuous rasters are
blended as a weighted mean; label rasters take the label with the largest
summed weight.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from modules.rasters import ColorRaster, GridMeta, InstanceMap, MaskRaster, _ScalarRaster
from utils.constants import DEFAULT_TILE_OVERLAP, DEFAULT_TILE_SIZE
from utils.errors import CoverageError, RasterError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TilePlacement:
    """A tile raster placed at (row_offset, col_offset) in mosaic pixels."""

    raster: object
    row_offset: int
    col_offset: int
    margin: int = DEFAULT_TILE_OVERLAP // 2

    @property
    def shape(self) -> Tuple[int, int]:
        return self.raster.meta.shape

    @property
    def window(self) -> Tuple[slice, slice]:
        h, w = self.shape
        return (slice(self.row_offset, self.row_offset + h), slice(self.col_offset, self.col_offset + w))


# ===================================================================
# SPLITTING
# ===================================================================

def _axis_starts(length: int, tile_size: int, overlap: int) -> List[int]:
    if length <= tile_size:
        return [0]
    step = tile_size - overlap
    starts = list(range(0, length - tile_size, step))
    starts.append(length - tile_size)
    return sorted(set(starts))


def split_tiles(
    shape: Tuple[int, int],
    tile_size: int = DEFAULT_TILE_SIZE,
    overlap: int = DEFAULT_TILE_OVERLAP,
) -> List[Tuple[int, int, int, int]]:
    """
    Overlapping tile windows covering a raster.

    The last tile on each axis is snapped to the raster edge, so it may
    overlap its neighbour by more than `overlap`.

    Returns:
        list of (row_offset, col_offset, height, width) in row-major order
    """
    if tile_size < 1:
        raise RasterError(f"tile_size must be >= 1, got {tile_size}")
    if not 0 <= overlap < tile_size:
        raise RasterError(f"overlap must be in [0, tile_size), got {overlap}")
    rows, cols = shape
    windows = []
    for r in _axis_starts(rows, tile_size, overlap):
        for c in _axis_starts(cols, tile_size, overlap):
            windows.append((r, c, min(tile_size, rows - r), min(tile_size, cols - c)))
    return windows


def extract_tile(raster, row_offset: int, col_offset: int, height: int, width: int):
    """Sub-raster of any raster kind with its metadata shifted accordingly."""
    meta = raster.meta.window(row_offset, col_offset, height, width)
    window = (slice(row_offset, row_offset + height), slice(col_offset, col_offset + width))
    if isinstance(raster, InstanceMap):
        return InstanceMap(meta, raster.ids[window], raster.kind)
    if isinstance(raster, MaskRaster):
        return MaskRaster(meta, raster.values[window])
    if isinstance(raster, (ColorRaster, _ScalarRaster)):
        return type(raster)(meta, raster.values[window], raster.valid[window])
    raise RasterError(f"cannot tile rasters of type {type(raster).__name__}")


# ===================================================================
# WEIGHTS
# ===================================================================

def ramp(n: int, margin: int) -> np.ndarray:
    """1-D blending ramp: min(1, (i+1)/(M+1), (n-i)/(M+1))."""
    i = np.arange(n, dtype=np.float64)
    return np.minimum(1.0, np.minimum((i + 1) / (margin + 1), (n - i) / (margin + 1)))


def tile_weights(shape: Tuple[int, int], margin: int) -> np.ndarray:
    return np.outer(ramp(shape[0], margin), ramp(shape[1], margin))


# ===================================================================
# STITCHING
# ===================================================================

def _canonical(tiles: Sequence[TilePlacement]) -> List[TilePlacement]:
    def key(tile):
        raster = tile.raster
        data = raster.ids if isinstance(raster, InstanceMap) else raster.values
        return (tile.row_offset, tile.col_offset, np.ascontiguousarray(data).tobytes())
    return sorted(tiles, key=key)


def _coverage(tiles: Sequence[TilePlacement], shape: Tuple[int, int]) -> np.ndarray:
    covered = np.zeros(shape, dtype=bool)
    for tile in tiles:
        h, w = tile.shape
        if tile.row_offset < 0 or tile.col_offset < 0 or tile.row_offset + h > shape[0] or tile.col_offset + w > shape[1]:
            raise RasterError(
                f"tile at ({tile.row_offset}, {tile.col_offset}) of size {h}x{w} does not fit a {shape[0]}x{shape[1]} mosaic"
            )
        covered[tile.window] = True
    if not covered.all():
        row, col = np.argwhere(~covered)[0]
        raise CoverageError(int(row), int(col))
    return covered


def _blend(tiles: Sequence[TilePlacement], shape: Tuple[int, int], channels: int):
    """Weighted mean around the first covering tile's value; returns (values, valid)."""
    full = shape + ((channels,) if channels > 1 else ())
    reference = np.zeros(full, dtype=np.float64)
    has_reference = np.zeros(shape, dtype=bool)
    delta = np.zeros(full, dtype=np.float64)
    weight_sum = np.zeros(shape, dtype=np.float64)

    for tile in tiles:
        window = tile.window
        values = np.asarray(tile.raster.values, dtype=np.float64)
        valid = np.asarray(tile.raster.valid, dtype=bool)
        weights = np.where(valid, tile_weights(tile.shape, tile.margin), 0.0)

        first = valid & ~has_reference[window]
        ref_view = reference[window]
        ref_view[first] = values[first]
        has_reference[window] |= valid

        diff = values - ref_view
        if channels > 1:
            delta[window] += weights[..., None] * diff
        else:
            delta[window] += weights * diff
        weight_sum[window] += weights

    safe = np.where(weight_sum > 0, weight_sum, 1.0)
    if channels > 1:
        out = reference + delta / safe[..., None]
    else:
        out = reference + delta / safe
    return out, has_reference


def _vote(tiles: Sequence[TilePlacement], shape: Tuple[int, int], dtype) -> np.ndarray:
    """Per pixel, the label with the largest summed weight (ties: lower label)."""
    n_cols = shape[1]
    pixel_parts, label_parts, weight_parts = [], [], []
    for tile in tiles:
        raster = tile.raster
        labels = raster.ids if isinstance(raster, InstanceMap) else raster.values.astype(np.int64)
        rr, cc = np.mgrid[tile.window]
        pixel_parts.append((rr * n_cols + cc).ravel())
        label_parts.append(np.asarray(labels, dtype=np.int64).ravel())
        weight_parts.append(tile_weights(tile.shape, tile.margin).ravel())
    pixels = np.concatenate(pixel_parts)
    labels = np.concatenate(label_parts)
    weights = np.concatenate(weight_parts)

    # sum weights per (pixel, label), keeping tile order inside each group
    order = np.lexsort((labels, pixels))
    pixels, labels, weights = pixels[order], labels[order], weights[order]
    starts = np.flatnonzero(np.r_[True, (pixels[1:] != pixels[:-1]) | (labels[1:] != labels[:-1])])
    group_pixels = pixels[starts]
    group_labels = labels[starts]
    group_weights = np.add.reduceat(weights, starts)

    pick = np.lexsort((group_labels, -group_weights, group_pixels))
    group_pixels = group_pixels[pick]
    best = np.r_[True, group_pixels[1:] != group_pixels[:-1]]
    out = np.zeros(shape[0] * shape[1], dtype=np.int64)
    out[group_pixels[best]] = group_labels[pick][best]
    return out.reshape(shape).astype(dtype)


def stitch(tiles: Sequence[TilePlacement], mosaic_meta: GridMeta):
    """
    Blend overlapping tiles into one mosaic raster of the tiles' kind.

    Args:
        tiles: placed tiles; every mosaic pixel must be covered
        mosaic_meta: metadata of the output grid

    Returns:
        mosaic raster; float outputs are independent of tile order
    """
    if not tiles:
        raise RasterError("stitch needs at least one tile")
    kinds = {type(t.raster) for t in tiles}
    if len(kinds) != 1:
        raise RasterError(f"all tiles must be the same raster kind, got {sorted(k.__name__ for k in kinds)}")

    shape = mosaic_meta.shape
    ordered = _canonical(tiles)
    _coverage(ordered, shape)
    sample = ordered[0].raster

    if isinstance(sample, InstanceMap):
        mosaic = InstanceMap(mosaic_meta, _vote(ordered, shape, np.int64), sample.kind)
    elif isinstance(sample, MaskRaster):
        mosaic = MaskRaster(mosaic_meta, _vote(ordered, shape, np.int64) > 0)
    elif isinstance(sample, ColorRaster):
        values, valid = _blend(ordered, shape, 3)
        mosaic = ColorRaster(mosaic_meta, np.clip(np.round(values), 0, 255).astype(np.uint8), valid)
    elif isinstance(sample, _ScalarRaster):
        values, valid = _blend(ordered, shape, 1)
        mosaic = type(sample)(mosaic_meta, np.where(valid, values, 0.0), valid)
    else:
        raise RasterError(f"cannot stitch rasters of type {type(sample).__name__}")

    logger.debug(f"stitched {len(ordered)} tiles into {shape[0]}x{shape[1]} mosaic")
    return mosaic
