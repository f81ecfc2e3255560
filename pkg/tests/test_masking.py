"""
Unit tests for evaluation masks.

Run with: python tests/test_masking.py
"""

import sys
import os

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays
from hypothesis import strategies as st

from modules.masking import (
    EvalMask,
    combine_masks,
    coverage_mask,
    mask_variants,
    temporal_mismatch_mask,
)
from modules.rasters import GridMeta, InstanceMap, MaskRaster
from utils.errors import RasterError

META = GridMeta(0.0, 2.0, 6, 2, 1.0)


# ===================================================================
# TEST 1: Temporal mismatch
# ===================================================================

@settings(max_examples=50, deadline=None)
@given(
    arrays(np.int64, (2, 6), elements=st.integers(0, 3)),
    arrays(np.int64, (2, 6), elements=st.integers(0, 3)),
)
def test_mismatch_excludes_occupancy_disagreement(a, b):
    mask = temporal_mismatch_mask(InstanceMap(META, a), InstanceMap(META, b))
    assert np.array_equal(mask.include, (a > 0) == (b > 0))


def test_mismatch_ignores_id_differences():
    a = InstanceMap(META, np.array([[1, 1, 0, 0, 2, 2], [0] * 6]))
    b = InstanceMap(META, np.array([[5, 5, 0, 7, 0, 0], [0] * 6]))
    mask = temporal_mismatch_mask(a, b)
    assert mask.include[0].tolist() == [True, True, True, False, False, False]
    assert mask.include[1].all()
    print("✅ test_mismatch_ignores_id_differences")


# ===================================================================
# TEST 2: Segment coverage
# ===================================================================

def test_coverage_threshold_is_strict():
    buildings = InstanceMap(META, np.array([
        [1, 1, 2, 2, 3, 3],
        [1, 1, 2, 2, 3, 3],
    ]))
    segments = InstanceMap(META, np.array([
        [4, 4, 9, 0, 0, 0],
        [0, 0, 0, 0, 0, 0],
    ]), "roof_segments")
    mask = coverage_mask(buildings, segments, threshold=0.5)
    # building 1 is exactly half covered and stays; 2 (25%) and 3 (0%) go
    assert mask.include[:, :2].all()
    assert not mask.include[:, 2:].any()
    print("✅ test_coverage_threshold_is_strict")


def test_coverage_keeps_background():
    buildings = InstanceMap(META, np.zeros((2, 6), dtype=np.int64))
    segments = InstanceMap(META, np.zeros((2, 6), dtype=np.int64), "roof_segments")
    assert coverage_mask(buildings, segments).include.all()
    print("✅ test_coverage_keeps_background")


# ===================================================================
# TEST 3: Combining and variants
# ===================================================================

def test_combine_is_pixelwise_and():
    first = EvalMask(META, np.array([[1, 1, 0, 0, 1, 1], [1] * 6]))
    second = EvalMask(META, np.array([[1, 0, 1, 0, 1, 1], [1] * 6]))
    combined = combine_masks([first, second])
    assert combined.include[0].tolist() == [True, False, False, False, True, True]
    assert combined.included_fraction == 9 / 12
    with pytest.raises(RasterError):
        combine_masks([])
    with pytest.raises(RasterError):
        combine_masks([first, EvalMask.everything(GridMeta(1.0, 2.0, 6, 2, 1.0))])
    print("✅ test_combine_is_pixelwise_and")


def test_excluding_flips_a_flag_raster():
    occlusion = MaskRaster(META, np.eye(2, 6, dtype=bool))
    mask = EvalMask.excluding(occlusion)
    assert not mask.include[0, 0] and not mask.include[1, 1]
    assert mask.include.sum() == 10
    with pytest.raises(RasterError):
        EvalMask(META, np.ones((3, 3), dtype=bool))
    print("✅ test_excluding_flips_a_flag_raster")


def test_variants():
    base = EvalMask(META, np.array([[0, 1, 1, 1, 1, 1], [1] * 6]))
    mismatch = EvalMask(META, np.array([[1, 0, 1, 1, 1, 1], [1] * 6]))
    coverage = EvalMask(META, np.array([[1, 1, 0, 1, 1, 1], [1] * 6]))

    variants = mask_variants(META, mismatch, coverage, base)
    assert list(variants) == ["none", "temporal_mismatch", "coverage", "both"]
    assert variants["none"].include.sum() == 11
    assert variants["temporal_mismatch"].include.sum() == 10
    assert variants["coverage"].include.sum() == 10
    assert variants["both"].include.sum() == 9

    only_none = mask_variants(META)
    assert list(only_none) == ["none"] and only_none["none"].include.all()
    print("✅ test_variants")


# ===================================================================
# RUN ALL TESTS
# ===================================================================

if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
