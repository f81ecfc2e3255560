"""
Unit tests for procedural scenes and their analytic truth.

Run with: python tests/test_synth_scene.py
"""

import sys
import os

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import binary_erosion

from modules.raster_ops import pitch_azimuth_grid, surface_normals
from modules.rasters import GridMeta
from modules.synth_scene import (
    BuildingSpec,
    SceneSpec,
    TerrainSpec,
    example_scene,
    perturb,
    random_scene,
    render_scene,
)
from utils.errors import GeometryError

GABLE_PITCH = math.degrees(math.atan(0.5))


def one_building(building: BuildingSpec, terrain: TerrainSpec = TerrainSpec()) -> SceneSpec:
    return SceneSpec(GridMeta(0.0, 20.0, 40, 40, 0.5), (building,), terrain)


# ===================================================================
# TEST 1: Single buildings
# ===================================================================

def test_flat_building_on_flat_ground():
    truth = render_scene(one_building(BuildingSpec(10.0, 10.0, 6.0, 6.0, 4.0)))
    inside = truth.buildings.ids == 1
    assert inside.sum() == 144, "6 m square at 0.5 m holds 12 x 12 pixel centres"
    assert np.all(truth.dsm.values[inside] == 4.0)
    assert np.all(truth.dsm.values[~inside] == 0.0)
    assert len(truth.faces) == 1 and truth.faces[0].azimuth_deg is None
    print("✅ test_flat_building_on_flat_ground")


def test_terrain_lifts_the_dsm():
    terrain = TerrainSpec(base_m=100.0, slope_east=0.1)
    truth = render_scene(one_building(BuildingSpec(10.0, 10.0, 6.0, 6.0, 4.0), terrain))
    assert np.allclose(truth.dsm.values - truth.dtm.values, truth.heightmap.values)
    assert truth.dtm.values[0, -1] > truth.dtm.values[0, 0]
    assert abs(truth.dtm.values.mean() - 100.0) < 1e-9
    print("✅ test_terrain_lifts_the_dsm")


def test_gable_faces():
    truth = render_scene(one_building(BuildingSpec(10.0, 10.0, 10.0, 8.0, 4.0, 6.0, "gable", 0.0)))
    assert [(f.segment_id, f.azimuth_deg) for f in truth.faces] == [(1, 270.0), (2, 90.0)]
    assert all(abs(f.pitch_deg - GABLE_PITCH) < 1e-12 for f in truth.faces)
    roof = truth.heightmap.values[truth.buildings.ids == 1]
    assert roof.max() <= 6.0 and roof.min() >= 4.0
    assert sum(f.pixel_count for f in truth.faces) == (truth.buildings.ids == 1).sum()
    print("✅ test_gable_faces")


def test_hip_has_four_faces():
    truth = render_scene(one_building(BuildingSpec(10.0, 10.0, 12.0, 8.0, 5.0, 7.0, "hip", 90.0)))
    assert len(truth.faces) == 4
    assert sorted(f.azimuth_deg for f in truth.faces) == [0.0, 90.0, 180.0, 270.0]
    print("✅ test_hip_has_four_faces")


def test_seam_pixels_go_to_the_first_listed_face():
    # centred on a pixel centre, so the ridge and hip lines run through pixel centres
    building = BuildingSpec(10.25, 10.25, 12.0, 8.0, 5.0, 7.0, "hip", 90.0)
    spec = one_building(building)
    truth = render_scene(spec)
    order = [azimuth for _, azimuth in building.faces()]
    face_index = {f.segment_id: order.index(f.azimuth_deg) for f in truth.faces}

    xs, ys = spec.meta.pixel_centers()
    along, across = building.axes
    dx, dy = xs - building.center_x, ys - building.center_y
    planes = building.face_heights(dx * along[0] + dy * along[1], dx * across[0] + dy * across[1])
    tied = planes <= planes.min(axis=0) + 1e-9
    roof = truth.buildings.ids == 1
    assert (roof & (tied.sum(axis=0) > 1)).sum() >= 9
    for r, c in zip(*np.nonzero(roof)):
        assert face_index[truth.segments.ids[r, c]] == int(np.argmax(tied[:, r, c])), f"pixel ({r}, {c})"

    ridge = truth.segments.ids[19, 16:25]
    south = [f.segment_id for f in truth.faces if f.azimuth_deg == 180.0]
    assert ridge.tolist() == south * 9, f"ridge row: {ridge}"
    assert np.allclose(truth.heightmap.values[19, 16:25], 7.0)
    print("✅ test_seam_pixels_go_to_the_first_listed_face")


def test_rendered_normals_match_face_truth():
    truth = render_scene(example_scene(size=64, resolution=0.5))
    normals = surface_normals(truth.dsm)
    pitch, azimuth, defined = pitch_azimuth_grid(normals.values)
    for face in truth.faces:
        interior = binary_erosion(truth.segments.ids == face.segment_id, structure=np.ones((3, 3)))
        if not interior.any():
            continue
        assert np.allclose(pitch[interior], face.pitch_deg, atol=1e-6), f"face {face.segment_id}"
        if face.azimuth_deg is None:
            assert not defined[interior].any()
        else:
            gap = np.abs((azimuth[interior] - face.azimuth_deg + 180.0) % 360.0 - 180.0)
            assert gap.max() < 1e-6, f"face {face.segment_id}"
    print("✅ test_rendered_normals_match_face_truth")


# ===================================================================
# TEST 2: Whole scenes
# ===================================================================

def test_example_scene_truth():
    truth = render_scene(example_scene(size=64, resolution=0.5))
    assert truth.buildings.instance_ids().tolist() == [1, 2, 3]
    assert len(truth.faces) == 2 + 4 + 1
    assert [f.segment_id for f in truth.faces] == list(range(1, 8))
    assert np.array_equal(truth.segments.ids > 0, truth.buildings.ids > 0)
    for face in truth.faces:
        owners = np.unique(truth.buildings.ids[truth.segments.ids == face.segment_id])
        assert owners.tolist() == [face.building_id]
    stats = truth.segment_stats()
    assert [s.area_m2 for s in stats] == [f.pixel_count * 0.25 for f in truth.faces]
    assert truth.rgb.values.shape == (64, 64, 3)
    print("✅ test_example_scene_truth")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_random_scenes_are_valid(seed):
    spec = random_scene(seed, size=48, resolution=0.5)
    assert spec == random_scene(seed, size=48, resolution=0.5), "same seed, same scene"
    truth = render_scene(spec)
    assert 1 <= len(spec.buildings) <= 4
    assert np.array_equal(truth.segments.ids > 0, truth.buildings.ids > 0)
    assert truth.heightmap.values.min() >= 0.0


def test_spec_dict_round_trip():
    spec = example_scene(size=64, resolution=0.5)
    assert SceneSpec.from_dict(spec.to_dict()) == spec
    print("✅ test_spec_dict_round_trip")


# ===================================================================
# TEST 3: Noise and validation
# ===================================================================

def test_perturb_is_seeded():
    truth = render_scene(example_scene(size=32, resolution=1.0))
    assert np.array_equal(perturb(truth, 0.0, 1).values, truth.dsm.values)
    first = perturb(truth, 0.3, seed=42).values
    assert np.array_equal(first, perturb(truth, 0.3, seed=42).values)
    assert not np.array_equal(first, perturb(truth, 0.3, seed=43).values)
    assert abs(np.std(first - truth.dsm.values) - 0.3) < 0.05
    with pytest.raises(GeometryError):
        perturb(truth, -0.1, 1)
    print("✅ test_perturb_is_seeded")


def test_invalid_scenes_raise():
    with pytest.raises(GeometryError):
        BuildingSpec(5.0, 5.0, 4.0, 4.0, 3.0, None, "dome")
    with pytest.raises(GeometryError):
        BuildingSpec(5.0, 5.0, 4.0, 4.0, 3.0, 2.0, "gable")
    with pytest.raises(GeometryError):
        one_building(BuildingSpec(19.0, 10.0, 6.0, 6.0, 4.0))
    meta = GridMeta(0.0, 20.0, 40, 40, 0.5)
    with pytest.raises(GeometryError):
        SceneSpec(meta, (BuildingSpec(8.0, 8.0, 6.0, 6.0, 4.0), BuildingSpec(10.0, 10.0, 6.0, 6.0, 4.0)))
    print("✅ test_invalid_scenes_raise")


# ===================================================================
# RUN ALL TESTS
# ===================================================================

if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
