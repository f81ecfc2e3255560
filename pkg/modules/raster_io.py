# modules/raster_io.py
"""
Raster file I/O.

- Float and integer rasters: ESRI ASCII grid (.asc). NODATA_value marks
  invalid pixels. A sidecar `<path>.json` carries the exact GridMeta so the
  top-left origin survives the lower-left header convention bit-exactly.
- Colour rasters: 8-bit RGB PNG + sidecar JSON.
- Hillshade: 8-bit grayscale PNG; flux: false-colour PNG.
"""

import json
import logging
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from matplotlib import colormaps
from PIL import Image, ImageDraw

from modules.rasters import (
    ColorRaster,
    FluxRaster,
    GrayRaster,
    GridMeta,
    HeightRaster,
    InstanceMap,
    MaskRaster,
)
from utils.constants import ASCII_FLOAT_FORMAT, ASCII_NODATA_VALUE, FLUX_COLORMAP
from utils.errors import RasterError

logger = logging.getLogger(__name__)

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def _sidecar(path) -> Path:
    return Path(f"{path}.json")


def _ensure_parent(path) -> None:
    parent = Path(path).parent
    if str(parent):
        os.makedirs(parent, exist_ok=True)


def write_json(path, payload) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=False)


def read_json(path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def _write_meta(path, meta: GridMeta) -> None:
    write_json(_sidecar(path), meta.to_dict())


def _read_meta(path) -> Optional[GridMeta]:
    sidecar = _sidecar(path)
    if not sidecar.exists():
        return None
    return GridMeta.from_dict(read_json(sidecar))


# ===================================================================
# ESRI ASCII GRID
# ===================================================================

def _nodata_for(values: np.ndarray, valid) -> float:
    """The usual NODATA sentinel, or one below every valid value when the data hold it."""
    kept = values if valid is None else values[np.asarray(valid, dtype=bool)]
    if kept.size and np.any(kept == ASCII_NODATA_VALUE):
        return float(np.floor(kept.min())) - 1.0
    return ASCII_NODATA_VALUE


def write_ascii_grid(path, meta: GridMeta, values: np.ndarray, valid=None, integer: bool = False) -> None:
    """
    Write one band as an ESRI ASCII grid.

    Args:
        path: output file
        meta: grid placement
        values: (height, width) array
        valid: optional validity mask; invalid pixels are written as NODATA
        integer: write values with %d instead of the round-trip float format
    """
    _ensure_parent(path)
    values = np.asarray(values)
    if values.shape != meta.shape:
        raise RasterError(f"values shape {values.shape} does not match meta shape {meta.shape}")

    res = meta.spatial_resolution
    if integer:
        out = values.astype(np.int64)
        sentinel = int(_nodata_for(out, valid))
        if valid is not None:
            out = np.where(valid, out, sentinel)
        fmt = "%d"
        nodata = str(sentinel)
    else:
        out = values.astype(np.float64)
        sentinel = _nodata_for(out, valid)
        if valid is not None:
            out = np.where(valid, out, sentinel)
        fmt = ASCII_FLOAT_FORMAT
        nodata = ASCII_FLOAT_FORMAT % sentinel

    header = "\n".join([
        f"ncols {meta.width}",
        f"nrows {meta.height}",
        f"xllcorner {ASCII_FLOAT_FORMAT % meta.origin_x}",
        f"yllcorner {ASCII_FLOAT_FORMAT % (meta.origin_y - meta.height * res)}",
        f"cellsize {ASCII_FLOAT_FORMAT % res}",
        f"NODATA_value {nodata}",
    ])
    np.savetxt(path, out, fmt=fmt, delimiter=" ", header=header, comments="")
    _write_meta(path, meta)
    logger.debug(f"Wrote ASCII grid {path} ({meta.height}x{meta.width})")


def _read_header(path) -> Tuple[dict, int]:
    """Header keys (lower-cased) and the number of header lines."""
    header = {}
    lines = 0
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            parts = line.split()
            if not parts or parts[0].lower() not in _HEADER_KEYS:
                break
            if len(parts) != 2:
                raise RasterError(f"{path}: malformed ASCII grid header line {line.strip()!r}")
            try:
                header[parts[0].lower()] = float(parts[1])
            except ValueError as e:
                raise RasterError(f"{path}: non-numeric ASCII grid header value {line.strip()!r}") from e
            lines += 1
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise RasterError(f"{path}: ASCII grid header is missing {missing}")
    return header, lines


def read_ascii_grid(path) -> Tuple[GridMeta, np.ndarray, np.ndarray]:
    """
    Read an ESRI ASCII grid.

    Returns:
        (meta, values as float64, valid mask)
    """
    if not Path(path).exists():
        raise RasterError(f"raster file not found: {path}")

    header, header_lines = _read_header(path)
    try:
        values = np.loadtxt(path, skiprows=header_lines, dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise RasterError(f"{path}: unreadable ASCII grid body: {e}") from e
    rows, cols = int(header["nrows"]), int(header["ncols"])
    if values.shape != (rows, cols):
        raise RasterError(f"{path}: header says {rows}x{cols}, body is {values.shape[0]}x{values.shape[1]}")

    meta = _read_meta(path)
    if meta is None or meta.shape != (rows, cols):
        res = header["cellsize"]
        meta = GridMeta(
            origin_x=header["xllcorner"],
            origin_y=header["yllcorner"] + rows * res,
            width=cols,
            height=rows,
            spatial_resolution=res,
        )
    valid = values != header["nodata_value"]
    return meta, values, valid


def save_height(path, raster) -> None:
    """Save a HeightRaster or FluxRaster."""
    write_ascii_grid(path, raster.meta, raster.values, raster.valid)


def load_height(path) -> HeightRaster:
    meta, values, valid = read_ascii_grid(path)
    return HeightRaster(meta, np.where(valid, values, 0.0), valid)


def load_flux(path) -> FluxRaster:
    meta, values, valid = read_ascii_grid(path)
    return FluxRaster(meta, np.where(valid, values, 0.0), valid)


def save_instances(path, instances: InstanceMap) -> None:
    write_ascii_grid(path, instances.meta, instances.ids, integer=True)


def load_instances(path, kind: str = "buildings") -> InstanceMap:
    meta, values, valid = read_ascii_grid(path)
    return InstanceMap(meta, np.where(valid, values, 0).astype(np.int64), kind)


def save_mask(path, mask) -> None:
    """Save a MaskRaster or EvalMask as a 0/1 integer grid."""
    values = mask.include if hasattr(mask, "include") else mask.values
    write_ascii_grid(path, mask.meta, values.astype(np.int64), integer=True)


def load_mask(path) -> MaskRaster:
    meta, values, valid = read_ascii_grid(path)
    return MaskRaster(meta, valid & (values != 0))


# ===================================================================
# PNG
# ===================================================================

def save_color_png(path, raster: ColorRaster) -> None:
    _ensure_parent(path)
    Image.fromarray(np.ascontiguousarray(raster.values), mode="RGB").save(path, format="PNG")
    _write_meta(path, raster.meta)


def load_color_png(path, meta: Optional[GridMeta] = None) -> ColorRaster:
    """
    Load an RGB PNG. GridMeta comes from `meta`, else the sidecar JSON, else
    a default placement at the origin.
    """
    if not Path(path).exists():
        raise RasterError(f"image file not found: {path}")
    with Image.open(path) as image:
        values = np.asarray(image.convert("RGB"), dtype=np.uint8)
    if meta is None:
        meta = _read_meta(path)
    if meta is None:
        logger.warning(f"{path} has no sidecar metadata, placing it at the origin")
        meta = GridMeta(0.0, 0.0, values.shape[1], values.shape[0])
    if meta.shape != values.shape[:2]:
        raise RasterError(f"{path}: image is {values.shape[:2]}, metadata says {meta.shape}")
    return ColorRaster(meta, values)


def save_gray_png(path, raster: GrayRaster) -> None:
    _ensure_parent(path)
    gray = np.clip(raster.values, 0, 255).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path, format="PNG")
    _write_meta(path, raster.meta)


def flux_to_rgb(flux: FluxRaster, vmax: Optional[float] = None) -> np.ndarray:
    """False-colour rendering of a flux raster; invalid pixels are black."""
    values = np.where(flux.valid, flux.values, 0.0)
    top = float(values.max()) if vmax is None else float(vmax)
    norm = values / top if top > 0 else np.zeros_like(values)
    rgba = colormaps[FLUX_COLORMAP](np.clip(norm, 0.0, 1.0))
    rgb = np.round(rgba[..., :3] * 255.0).astype(np.uint8)
    rgb[~flux.valid] = 0
    return rgb


def save_flux_png(path, flux: FluxRaster, vmax: Optional[float] = None) -> None:
    _ensure_parent(path)
    Image.fromarray(flux_to_rgb(flux, vmax), mode="RGB").save(path, format="PNG")
    _write_meta(path, flux.meta)


def render_overlay(
    path,
    background: ColorRaster,
    footprints: Iterable[Sequence[Tuple[float, float]]],
    segments: Optional[InstanceMap] = None,
    outline=(0, 255, 255),
) -> None:
    """
    Draw panel footprints (map-metre polygons) over an RGB image.

    Segment boundaries are tinted when `segments` is given.
    """
    _ensure_parent(path)
    meta = background.meta
    rgb = np.array(background.values)
    if segments is not None:
        ids = segments.ids
        edge = np.zeros(ids.shape, dtype=bool)
        edge[:, 1:] |= ids[:, 1:] != ids[:, :-1]
        edge[1:, :] |= ids[1:, :] != ids[:-1, :]
        rgb[edge] = (255, 64, 64)

    image = Image.fromarray(rgb, mode="RGB")
    draw = ImageDraw.Draw(image)
    res = meta.spatial_resolution
    count = 0
    for polygon in footprints:
        pixels = [((x - meta.origin_x) / res, (meta.origin_y - y) / res) for x, y in polygon]
        draw.polygon(pixels, outline=outline)
        count += 1
    image.save(path, format="PNG")
    logger.debug(f"Rendered {count} footprints onto {path}")
