# modules/raster_ops.py
"""
Raster-core operations: Sobel gradients, surface normals, pitch/azimuth,
hillshade, bilinear resampling and DSM composition.

Conventions:
- gradients are metres per metre; gx is the eastward slope, gy the northward
  slope (row index grows south, so gy flips the sign of the row derivative)
- normals are (east, north, up) unit vectors
- azimuths are compass bearings, clockwise from north
"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from modules.rasters import GrayRaster, GridMeta, HeightRaster, NormalField
from utils.constants import (
    FLAT_PITCH_THRESHOLD_DEG,
    HILLSHADE_DEFAULT_AZIMUTH,
    HILLSHADE_DEFAULT_ELEVATION,
    UNIT_NORMAL_TOLERANCE,
)
from utils.errors import GeometryError, RasterError
from utils.validators import check_elevation, check_same_meta

logger = logging.getLogger(__name__)

# Fractional indices this close to an integer are snapped before interpolating
_INDEX_SNAP = 1e-9


# ===================================================================
# GRADIENTS & NORMALS
# ===================================================================

def sobel_gradients(h: HeightRaster) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    3x3 Sobel slopes normalised to true metres/metre.

    The raw Sobel response to a unit-per-pixel ramp is 8, so both responses
    are divided by 8 * spatial_resolution. Borders use edge replication.

    Args:
        h: height raster

    Returns:
        (gx, gy, valid): eastward slope, northward slope, and a mask that is
        False wherever the 3x3 window touches an invalid pixel
    """
    rows, cols = h.meta.shape
    if rows < 3 or cols < 3:
        raise RasterError(f"sobel_gradients needs at least a 3x3 raster, got {rows}x{cols}")

    scale = 8.0 * h.meta.spatial_resolution
    z = np.asarray(h.values, dtype=np.float64)
    gx = ndimage.sobel(z, axis=1, mode="nearest") / scale
    gy = -ndimage.sobel(z, axis=0, mode="nearest") / scale

    if h.all_valid:
        valid = np.ones(h.meta.shape, dtype=bool)
    else:
        valid = ndimage.binary_erosion(
            h.valid, structure=np.ones((3, 3), dtype=bool), border_value=1
        )
    gx[~valid] = 0.0
    gy[~valid] = 0.0
    return gx, gy, valid


def surface_normals(h: HeightRaster) -> NormalField:
    """Unit normals n = normalize(-gx, -gy, 1) from the Sobel slopes."""
    gx, gy, valid = sobel_gradients(h)
    normals = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    return NormalField(h.meta, normals, valid)


def pitch_azimuth(n) -> Tuple[float, Optional[float]]:
    """
    Pitch and fall-line azimuth of one unit normal.

    Args:
        n: (east, north, up) unit vector

    Returns:
        (pitch_deg, azimuth_deg); azimuth is None when pitch is below the
        flat threshold
    """
    n = np.asarray(n, dtype=np.float64)
    if n.shape != (3,):
        raise GeometryError(f"normal must be a 3-vector, got shape {n.shape}")
    if abs(np.linalg.norm(n) - 1.0) > UNIT_NORMAL_TOLERANCE:
        raise GeometryError(f"normal must be unit length, got |n| = {np.linalg.norm(n):.8f}")

    pitch = float(np.degrees(np.arccos(np.clip(n[2], -1.0, 1.0))))
    if pitch < FLAT_PITCH_THRESHOLD_DEG:
        return pitch, None
    azimuth = float(np.degrees(np.arctan2(n[0], n[1])) % 360.0)
    if azimuth >= 360.0:
        azimuth = 0.0
    return pitch, azimuth


def pitch_azimuth_grid(normals: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Vectorised pitch_azimuth over (..., 3) unit normals.

    Returns:
        (pitch_deg, azimuth_deg, azimuth_defined); azimuth is 0 where undefined
    """
    normals = np.asarray(normals, dtype=np.float64)
    pitch = np.degrees(np.arccos(np.clip(normals[..., 2], -1.0, 1.0)))
    azimuth = np.degrees(np.arctan2(normals[..., 0], normals[..., 1])) % 360.0
    azimuth = np.where(azimuth >= 360.0, 0.0, azimuth)
    defined = pitch >= FLAT_PITCH_THRESHOLD_DEG
    return pitch, np.where(defined, azimuth, 0.0), defined


def sun_vector(elevation: float, azimuth: float) -> np.ndarray:
    """Unit vector toward the sun in (east, north, up) components."""
    elev = np.radians(elevation)
    az = np.radians(azimuth)
    return np.array([np.cos(elev) * np.sin(az), np.cos(elev) * np.cos(az), np.sin(elev)])


# ===================================================================
# VISUALISATION
# ===================================================================

def hillshade(
    h: HeightRaster,
    sun_elevation: float = HILLSHADE_DEFAULT_ELEVATION,
    sun_azimuth: float = HILLSHADE_DEFAULT_AZIMUTH,
) -> GrayRaster:
    """
    Lambertian hillshade: 255 * max(0, n . s), rounded half up.
    """
    check_elevation(sun_elevation, "sun_elevation")
    normals = surface_normals(h)
    s = sun_vector(sun_elevation, sun_azimuth)
    shade = np.clip(normals.values @ s, 0.0, None) * 255.0
    # guard against 127.49999999999999-style rounding of exact halves
    shade = np.floor(shade + 0.5 + 1e-9)
    return GrayRaster(h.meta, np.clip(shade, 0.0, 255.0), normals.valid)


# ===================================================================
# RESAMPLING & COMPOSITION
# ===================================================================

def resample_bilinear(h: HeightRaster, target: GridMeta) -> HeightRaster:
    """
    Bilinear resampling onto another grid in the same planar frame.

    Target pixel centres outside the source footprint are invalid; centres
    inside the footprint but beyond the outermost source centres use edge
    replication. A target touching an invalid source pixel (non-zero weight)
    is invalid.
    """
    if target == h.meta:
        return HeightRaster(h.meta, h.values, h.valid)

    src_w, src_s, src_e, src_n = h.meta.bounds
    tgt_w, tgt_s, tgt_e, tgt_n = target.bounds
    if tgt_w >= src_e or tgt_e <= src_w or tgt_s >= src_n or tgt_n <= src_s:
        raise RasterError("source and target grids do not overlap")

    xs, ys = target.pixel_centers()
    inside = (xs >= src_w) & (xs <= src_e) & (ys >= src_s) & (ys <= src_n)
    rows, cols = h.meta.map_to_index(xs, ys)

    rows = np.where(np.abs(rows - np.round(rows)) < _INDEX_SNAP, np.round(rows), rows)
    cols = np.where(np.abs(cols - np.round(cols)) < _INDEX_SNAP, np.round(cols), cols)
    n_rows, n_cols = h.meta.shape
    rows = np.clip(rows, 0.0, n_rows - 1)
    cols = np.clip(cols, 0.0, n_cols - 1)

    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    r1 = np.minimum(r0 + 1, n_rows - 1)
    c1 = np.minimum(c0 + 1, n_cols - 1)
    tr = rows - r0
    tc = cols - c0

    z = h.values
    values = (
        z[r0, c0] * (1 - tr) * (1 - tc)
        + z[r0, c1] * (1 - tr) * tc
        + z[r1, c0] * tr * (1 - tc)
        + z[r1, c1] * tr * tc
    )

    ok = h.valid
    valid = (
        (ok[r0, c0] | ((1 - tr) * (1 - tc) == 0))
        & (ok[r0, c1] | ((1 - tr) * tc == 0))
        & (ok[r1, c0] | (tr * (1 - tc) == 0))
        & (ok[r1, c1] | (tr * tc == 0))
        & inside
    )
    if not valid.any():
        logger.warning("resample_bilinear produced no valid pixels")
    return HeightRaster(target, np.where(valid, values, 0.0), valid)


def compose_dsm(heightmap: HeightRaster, terrain: HeightRaster) -> HeightRaster:
    """DSM = height map + terrain; invalid where either input is."""
    check_same_meta(heightmap, terrain)
    valid = heightmap.valid & terrain.valid
    return HeightRaster(heightmap.meta, heightmap.values + terrain.values, valid)


def heightmap_from_dsm(dsm: HeightRaster, terrain: HeightRaster) -> HeightRaster:
    """Height above terrain = DSM - DTM; invalid where either input is."""
    check_same_meta(dsm, terrain)
    valid = dsm.valid & terrain.valid
    return HeightRaster(dsm.meta, dsm.values - terrain.values, valid)
