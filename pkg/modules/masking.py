# modules/masking.py
"""
Evaluation masks that drop unreliable pixels from losses and metrics:
building-occupancy disagreement between two acquisitions, and buildings
poorly covered by roof segments.
"""

import logging
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from modules.rasters import GridMeta, InstanceMap, MaskRaster, _frozen
from modules.roof_segmentation import coverage_fraction
from utils.constants import COVERAGE_THRESHOLD
from utils.errors import RasterError
from utils.validators import check_same_meta

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EvalMask:
    """include is True where a pixel participates in a metric."""

    meta: GridMeta
    include: np.ndarray

    def __post_init__(self):
        include = np.array(self.include, dtype=bool)
        if include.shape != self.meta.shape:
            raise RasterError(f"mask shape {include.shape} does not match meta shape {self.meta.shape}")
        object.__setattr__(self, "include", _frozen(include))

    @property
    def values(self) -> np.ndarray:
        return self.include

    @classmethod
    def everything(cls, meta: GridMeta) -> "EvalMask":
        return cls(meta, np.ones(meta.shape, dtype=bool))

    @classmethod
    def excluding(cls, raster: MaskRaster) -> "EvalMask":
        """Include everything the mask raster does not flag (e.g. occlusion)."""
        return cls(raster.meta, ~raster.values)

    def with_values(self, values, valid=None):
        return replace(self, include=values)

    @property
    def included_fraction(self) -> float:
        return float(self.include.mean())


def temporal_mismatch_mask(buildings_a: InstanceMap, buildings_b: InstanceMap) -> EvalMask:
    """Exclude pixels where the two building masks disagree on occupancy."""
    check_same_meta(buildings_a, buildings_b)
    include = ~np.logical_xor(buildings_a.binary(), buildings_b.binary())
    logger.debug(f"temporal mismatch mask excludes {int((~include).sum())} pixels")
    return EvalMask(buildings_a.meta, include)


def coverage_mask(
    buildings: InstanceMap,
    segments: InstanceMap,
    threshold: float = COVERAGE_THRESHOLD,
) -> EvalMask:
    """Exclude every pixel of buildings whose segment coverage is below threshold."""
    fractions = coverage_fraction(buildings, segments)
    poor = [building_id for building_id, fraction in fractions.items() if fraction < threshold]
    include = ~np.isin(buildings.ids, poor)
    if poor:
        logger.info(f"coverage mask excludes {len(poor)} of {len(fractions)} buildings (< {threshold:.0%} covered)")
    return EvalMask(buildings.meta, include)


def combine_masks(masks: Iterable[EvalMask]) -> EvalMask:
    """Pixelwise AND of one or more masks."""
    masks = list(masks)
    if not masks:
        raise RasterError("combine_masks needs at least one mask")
    check_same_meta(*masks)
    include = np.logical_and.reduce([m.include for m in masks])
    return EvalMask(masks[0].meta, include)


def mask_variants(
    meta: GridMeta,
    mismatch: Optional[EvalMask] = None,
    coverage: Optional[EvalMask] = None,
    base: Optional[EvalMask] = None,
) -> dict:
    """
    The masking schemes evaluated side by side: none, temporal mismatch only,
    coverage only, and both. `base` (e.g. the occlusion mask) is ANDed into
    every variant. Variants whose mask is missing are omitted.
    """
    base = base or EvalMask.everything(meta)
    variants = {"none": base}
    if mismatch is not None:
        variants["temporal_mismatch"] = combine_masks([base, mismatch])
    if coverage is not None:
        variants["coverage"] = combine_masks([base, coverage])
    if mismatch is not None and coverage is not None:
        variants["both"] = combine_masks([base, mismatch, coverage])
    return variants
