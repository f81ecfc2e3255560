"""
Unit tests for panel layout and building energy aggregation.

Run with: pytest tests/test_panel_placement.py
"""

import sys
import os

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import math

import numpy as np
import pytest
from shapely.geometry import Point

from modules.panel_placement import (
    PanelPlacement,
    PanelSpec,
    building_energy,
    building_flux_summary,
    panels_for_cap,
    place_panels,
)
from modules.raster_ops import surface_normals
from modules.rasters import FluxRaster, GridMeta, InstanceMap
from modules.roof_segmentation import SegmentStats
from modules.solar_flux import annual_flux, sun_positions
from modules.synth_scene import BuildingSpec, SceneSpec, render_scene
from utils.errors import GeometryError, RasterError

RES = 0.5
PANEL_KWH_AT_1500 = 1500 * 1.6335 * 0.20 * 0.85


def two_flat_roofs(left_flux: float = 1500.0, right_flux: float = 1000.0):
    """Two 10 m x 10 m flat roofs, one segment each, on a 24 x 48 grid."""
    meta = GridMeta(0.0, 24 * RES, 48, 24, RES)
    ids = np.zeros((24, 48), dtype=np.int64)
    ids[2:22, 2:22] = 1
    ids[2:22, 26:46] = 2
    flux = np.zeros((24, 48))
    flux[:, :24] = left_flux
    flux[:, 24:] = right_flux
    buildings = InstanceMap(meta, ids.copy())
    segments = InstanceMap(meta, ids, "roof_segments")
    stats = [
        SegmentStats(1, 1, 100.0, 400, 0.0, None, (0.0, 0.0, 1.0)),
        SegmentStats(2, 2, 100.0, 400, 0.0, None, (0.0, 0.0, 1.0)),
    ]
    return buildings, segments, stats, FluxRaster(meta, flux)


def one_roof(pitch: float = 0.0, azimuth=None, hole=None):
    meta = GridMeta(0.0, 24 * RES, 24, 24, RES)
    ids = np.zeros((24, 24), dtype=np.int64)
    ids[2:22, 2:22] = 1
    if hole is not None:
        ids[hole] = 0
    segments = InstanceMap(meta, ids, "roof_segments")
    stats = [SegmentStats(1, 1, ids.sum() * RES * RES, int(ids.sum()), pitch, azimuth, (0.0, 0.0, 1.0))]
    return segments, stats, FluxRaster(meta, np.full((24, 24), 1500.0))


# ===================================================================
# TEST 1: Layout on one segment
# ===================================================================

def test_flat_square_packs_a_full_grid():
    segments, stats, flux = one_roof()
    placements = place_panels(segments, stats, flux)
    # 10 m / 0.99 m -> 10 columns, 10 m / 1.65 m -> 6 rows
    assert len(placements) == 60, f"expected 60 panels, got {len(placements)}"
    for p in placements:
        assert abs(p.annual_energy_kwh - PANEL_KWH_AT_1500) < 1e-9, f"panel energy {p.annual_energy_kwh}"
        assert p.mean_flux == 1500.0
        assert abs(p.polygon.area - 1.65 * 0.99) < 1e-9
        assert p.orientation_deg == 180.0 and p.pitch_deg == 0.0
    print("✅ test_flat_square_packs_a_full_grid")


def test_panels_never_overlap_and_stay_on_the_roof():
    segments, stats, flux = one_roof()
    placements = place_panels(segments, stats, flux)
    roof_min, roof_max = 2 * RES, 22 * RES
    for i, a in enumerate(placements):
        xs, ys = zip(*a.footprint)
        assert roof_min - 1e-9 <= min(xs) and max(xs) <= roof_max + 1e-9
        assert roof_min - 1e-9 <= min(ys) and max(ys) <= roof_max + 1e-9
        for b in placements[i + 1:]:
            assert a.polygon.intersection(b.polygon).area < 1e-9
    print("✅ test_panels_never_overlap_and_stay_on_the_roof")


def test_pitched_roof_shortens_plan_footprint():
    segments, stats, flux = one_roof(pitch=30.0, azimuth=180.0)
    placements = place_panels(segments, stats, flux)
    plan_area = 0.99 * 1.65 * math.cos(math.radians(30.0))
    assert placements, "a 10 m roof fits panels at 30 degrees"
    assert all(abs(p.polygon.area - plan_area) < 1e-9 for p in placements)
    assert all(p.pitch_deg == 30.0 for p in placements)
    # energy still uses the full sloped panel area
    assert abs(placements[0].annual_energy_kwh - PANEL_KWH_AT_1500) < 1e-9
    print("✅ test_pitched_roof_shortens_plan_footprint")


def test_holes_block_panels():
    hole = (slice(11, 12), slice(11, 12))
    segments, stats, flux = one_roof(hole=hole)
    placements = place_panels(segments, stats, flux)
    assert len(placements) < 60
    centre = Point(11.5 * RES, 24 * RES - 11.5 * RES)
    assert not any(p.polygon.contains(centre) for p in placements), "no panel may cover a foreign pixel"
    print("✅ test_holes_block_panels")


def test_tiny_segment_gets_nothing():
    meta = GridMeta(0.0, 4.0, 8, 8, RES)
    ids = np.zeros((8, 8), dtype=np.int64)
    ids[2:4, 2:4] = 1
    stats = [SegmentStats(1, 1, 1.0, 4, 0.0, None, (0.0, 0.0, 1.0))]
    placements = place_panels(InstanceMap(meta, ids, "roof_segments"), stats, FluxRaster(meta, np.ones((8, 8))))
    assert placements == []
    print("✅ test_tiny_segment_gets_nothing")


def test_mismatched_grids_raise():
    segments, stats, _ = one_roof()
    other = FluxRaster(GridMeta(1.0, 12.0, 24, 24, RES), np.ones((24, 24)))
    with pytest.raises(RasterError):
        place_panels(segments, stats, other)
    print("✅ test_mismatched_grids_raise")


# ===================================================================
# TEST 2: Ranking
# ===================================================================

def test_ranking_by_energy_then_position():
    _, segments, stats, flux = two_flat_roofs()
    placements = place_panels(segments, stats, flux)
    assert len(placements) == 120
    assert [p.panel_index for p in placements] == list(range(120))
    assert all(p.segment_id == 1 for p in placements[:60]), "brighter roof ranks first"
    assert all(p.segment_id == 2 for p in placements[60:])
    for a, b in zip(placements, placements[1:]):
        if a.annual_energy_kwh == b.annual_energy_kwh:
            assert (a.centroid_row, a.centroid_col) <= (b.centroid_row, b.centroid_col)
        else:
            assert a.annual_energy_kwh > b.annual_energy_kwh
    print("✅ test_ranking_by_energy_then_position")


def test_south_face_panels_rank_ahead_of_north_face():
    # east-west ridge, 35 degree faces, at 40 degrees north
    ridge = 4.0 + 4.0 * math.tan(math.radians(35.0))
    building = BuildingSpec(8.0, 8.0, 10.0, 8.0, 4.0, ridge, "gable", 90.0)
    truth = render_scene(SceneSpec(GridMeta(0.0, 16.0, 64, 64, 0.25), (building,)))
    flux = annual_flux(truth.dsm, surface_normals(truth.dsm), sun_positions(40.0, 12))
    placements = place_panels(truth.segments, truth.segment_stats(), flux)

    south = {f.segment_id for f in truth.faces if f.azimuth_deg == 180.0}
    sides = ["south" if p.segment_id in south else "north" for p in placements]
    assert "south" in sides and "north" in sides, f"panels per side: {sides.count('south')}, {sides.count('north')}"
    first_north = sides.index("north")
    assert "south" not in sides[first_north:], "a north-face panel outranks a south-face panel"
    print("✅ test_south_face_panels_rank_ahead_of_north_face")


def test_placement_dict_round_trip():
    segments, stats, flux = one_roof()
    first = place_panels(segments, stats, flux)[0]
    assert PanelPlacement.from_dict(first.to_dict()) == first
    print("✅ test_placement_dict_round_trip")


def test_panel_spec_validation():
    assert abs(PanelSpec().area_m2 - 1.6335) < 1e-12
    assert PanelSpec.from_dict({"rated_power_w": 350, "colour": "black"}).rated_power_w == 350.0
    with pytest.raises(GeometryError):
        PanelSpec(length_m=0.0)
    print("✅ test_panel_spec_validation")


# ===================================================================
# TEST 3: Building energy
# ===================================================================

def test_five_kilowatt_cap_is_thirteen_panels():
    assert panels_for_cap(5.0) == 13
    assert panels_for_cap(4.0) == 10
    assert panels_for_cap(5.0, PanelSpec(rated_power_w=500.0)) == 10
    print("✅ test_five_kilowatt_cap_is_thirteen_panels")


def test_building_energy_capped_and_uncapped():
    _, segments, stats, flux = two_flat_roofs()
    placements = place_panels(segments, stats, flux)
    dim_panel = 1000 * 1.6335 * 0.20 * 0.85
    uncapped = building_energy(placements)
    capped = building_energy(placements, cap_kw=5.0)
    assert abs(uncapped[1] - 60 * PANEL_KWH_AT_1500) < 1e-6
    assert abs(uncapped[2] - 60 * dim_panel) < 1e-6
    assert abs(capped[1] - 13 * PANEL_KWH_AT_1500) < 1e-6
    assert abs(capped[2] - 13 * dim_panel) < 1e-6
    print("✅ test_building_energy_capped_and_uncapped")


def test_cap_takes_every_panel_on_small_roofs():
    segments, stats, flux = one_roof()
    placements = place_panels(segments, stats, flux)[:5]
    assert building_energy(placements, cap_kw=5.0) == building_energy(placements)
    print("✅ test_cap_takes_every_panel_on_small_roofs")


def test_building_flux_summary():
    buildings, segments, stats, flux = two_flat_roofs()
    placements = place_panels(segments, stats, flux)
    table = building_flux_summary(buildings, segments, flux, placements, cap_kw=5.0)
    assert list(table.columns) == [
        "building_id", "roof_area_m2", "mean_roof_flux_kwh_m2",
        "panel_count", "energy_kwh", "energy_5kw_kwh",
    ]
    first = table.set_index("building_id").loc[1]
    assert first["roof_area_m2"] == 100.0
    assert first["mean_roof_flux_kwh_m2"] == 1500.0
    assert first["panel_count"] == 60
    assert abs(first["energy_5kw_kwh"] - 13 * PANEL_KWH_AT_1500) < 1e-6
    print("✅ test_building_flux_summary")


# ===================================================================
# RUN ALL TESTS
# ===================================================================

if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
