"""
Unit tests for ASCII grid, PNG and overlay I/O.

Run with: pytest tests/test_raster_io.py
"""

import sys
import os

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from modules.raster_io import (
    flux_to_rgb,
    load_color_png,
    load_height,
    load_instances,
    load_mask,
    read_ascii_grid,
    render_overlay,
    save_color_png,
    save_flux_png,
    save_gray_png,
    save_height,
    save_instances,
    save_mask,
    write_ascii_grid,
)
from modules.rasters import ColorRaster, FluxRaster, GrayRaster, GridMeta, HeightRaster, InstanceMap, MaskRaster
from utils.errors import RasterError

META = GridMeta(1000.1, 2000.3, width=4, height=3, spatial_resolution=0.3)


# ===================================================================
# TEST 1: ESRI ASCII grids
# ===================================================================

@settings(max_examples=25, deadline=None)
@given(values=arrays(np.float64, (3, 4), elements=st.floats(-1e6, 1e6)))
def test_height_values_survive_exactly(values, tmp_path_factory):
    path = tmp_path_factory.mktemp("asc") / "h.asc"
    save_height(path, HeightRaster(META, values))
    loaded = load_height(path)
    assert loaded.meta == META
    assert np.array_equal(loaded.values, values), "float64 values must round-trip bit-exactly"


def test_invalid_pixels_written_as_nodata(tmp_path):
    valid = np.ones((3, 4), dtype=bool)
    valid[1, 2] = False
    path = tmp_path / "h.asc"
    save_height(path, HeightRaster(META, np.full((3, 4), 7.5), valid))
    body = path.read_text().splitlines()
    assert body[5].startswith("NODATA_value -9999"), body[5]
    assert "-9999" in body[6 + 1].split()[2]
    loaded = load_height(path)
    assert np.array_equal(loaded.valid, valid)
    print("✅ test_invalid_pixels_written_as_nodata")


def test_header_uses_lower_left_corner(tmp_path):
    path = tmp_path / "h.asc"
    save_height(path, HeightRaster(META, np.zeros((3, 4))))
    header = dict(line.split() for line in path.read_text().splitlines()[:6])
    assert float(header["xllcorner"]) == 1000.1
    assert abs(float(header["yllcorner"]) - (2000.3 - 0.9)) < 1e-9
    print("✅ test_header_uses_lower_left_corner")


def test_missing_sidecar_falls_back_to_header(tmp_path):
    path = tmp_path / "h.asc"
    meta = GridMeta(10.0, 20.0, 2, 2, 0.5)
    write_ascii_grid(path, meta, np.ones((2, 2)))
    os.remove(f"{path}.json")
    loaded_meta, values, valid = read_ascii_grid(path)
    assert loaded_meta == meta
    assert valid.all() and values.sum() == 4.0
    print("✅ test_missing_sidecar_falls_back_to_header")


def test_body_size_mismatch_raises(tmp_path):
    path = tmp_path / "bad.asc"
    path.write_text("ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2 3\n")
    with pytest.raises(RasterError):
        read_ascii_grid(path)
    with pytest.raises(RasterError):
        read_ascii_grid(tmp_path / "absent.asc")
    print("✅ test_body_size_mismatch_raises")


@pytest.mark.parametrize("header", [
    "ncols 3\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n",
    "ncols 3\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1 metre\nNODATA_value -9999\n",
    "ncols 3\nnrows one\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n",
    "ncols\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n",
])
def test_bad_header_raises_raster_error(tmp_path, header):
    path = tmp_path / "bad.asc"
    path.write_text(header + "1 2 3\n")
    with pytest.raises(RasterError):
        read_ascii_grid(path)


def test_unreadable_body_raises_raster_error(tmp_path):
    path = tmp_path / "bad.asc"
    path.write_text("ncols 3\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 two 3\n")
    with pytest.raises(RasterError):
        read_ascii_grid(path)
    print("✅ test_unreadable_body_raises_raster_error")


def test_height_of_minus_9999_stays_valid(tmp_path):
    values = np.array([[-9999.0, 1.0, 2.0, 3.0], [4.0, 5.0, 6.0, 7.0], [8.0, 9.0, 10.0, 11.0]])
    valid = np.ones((3, 4), dtype=bool)
    valid[2, 3] = False
    path = tmp_path / "h.asc"
    save_height(path, HeightRaster(META, values, valid))
    assert path.read_text().splitlines()[5] == "NODATA_value -10000"
    loaded = load_height(path)
    assert np.array_equal(loaded.valid, valid)
    assert loaded.values[0, 0] == -9999.0
    print("✅ test_height_of_minus_9999_stays_valid")


def test_instances_and_masks(tmp_path):
    ids = InstanceMap(META, np.array([[0, 1, 1, 0], [2, 2, 0, 0], [0, 0, 0, 3]]))
    save_instances(tmp_path / "b.asc", ids)
    loaded = load_instances(tmp_path / "b.asc", "roof_segments")
    assert loaded.kind == "roof_segments"
    assert np.array_equal(loaded.ids, ids.ids)

    mask = MaskRaster(META, ids.ids > 0)
    save_mask(tmp_path / "m.asc", mask)
    assert np.array_equal(load_mask(tmp_path / "m.asc").values, mask.values)
    print("✅ test_instances_and_masks")


# ===================================================================
# TEST 2: PNG
# ===================================================================

def test_colour_png_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    rgb = ColorRaster(META, rng.integers(0, 256, size=(3, 4, 3)))
    save_color_png(tmp_path / "c.png", rgb)
    loaded = load_color_png(tmp_path / "c.png")
    assert loaded.meta == META
    assert np.array_equal(loaded.values, rgb.values)
    print("✅ test_colour_png_round_trip")


def test_colour_png_meta_must_fit(tmp_path):
    save_color_png(tmp_path / "c.png", ColorRaster(META, np.zeros((3, 4, 3))))
    with pytest.raises(RasterError):
        load_color_png(tmp_path / "c.png", meta=GridMeta(0.0, 0.0, 5, 5))
    print("✅ test_colour_png_meta_must_fit")


def test_png_without_sidecar_is_placed_at_origin(tmp_path):
    Image.fromarray(np.zeros((2, 5, 3), dtype=np.uint8), mode="RGB").save(tmp_path / "raw.png")
    loaded = load_color_png(tmp_path / "raw.png")
    assert loaded.meta.shape == (2, 5)
    assert (loaded.meta.origin_x, loaded.meta.origin_y) == (0.0, 0.0)
    print("✅ test_png_without_sidecar_is_placed_at_origin")


def test_gray_png(tmp_path):
    save_gray_png(tmp_path / "g.png", GrayRaster(META, np.full((3, 4), 128.0)))
    with Image.open(tmp_path / "g.png") as image:
        assert image.mode == "L"
        assert np.all(np.asarray(image) == 128)
    print("✅ test_gray_png")


def test_flux_rendering_blacks_out_invalid(tmp_path):
    valid = np.ones((3, 4), dtype=bool)
    valid[0, 0] = False
    flux = FluxRaster(META, np.linspace(1.0, 12.0, 12).reshape(3, 4), valid)
    rgb = flux_to_rgb(flux)
    assert rgb.shape == (3, 4, 3)
    assert np.all(rgb[0, 0] == 0)
    assert rgb[2, 3].sum() > rgb[0, 1].sum(), "brightest pixel should render lighter"
    save_flux_png(tmp_path / "f.png", flux)
    assert (tmp_path / "f.png").exists()
    print("✅ test_flux_rendering_blacks_out_invalid")


def test_overlay_draws_footprints(tmp_path):
    meta = GridMeta(0.0, 10.0, 20, 20, 0.5)
    background = ColorRaster(meta, np.zeros((20, 20, 3)))
    square = [(2.0, 8.0), (6.0, 8.0), (6.0, 4.0), (2.0, 4.0)]
    render_overlay(tmp_path / "o.png", background, [square])
    with Image.open(tmp_path / "o.png") as image:
        drawn = np.asarray(image.convert("RGB"))
    assert drawn.any(), "footprint outline must be drawn"
    assert not drawn[0, 0].any(), "pixels away from the footprint stay untouched"
    print("✅ test_overlay_draws_footprints")


# ===================================================================
# RUN ALL TESTS
# ===================================================================

if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
