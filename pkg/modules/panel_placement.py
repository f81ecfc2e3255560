# modules/panel_placement.py
"""
Solar panel layout on roof segments and building energy aggregation.

Panels are laid out in portrait orientation on a grid aligned with each
segment's fall line: the panel length runs down the slope (its plan
footprint is shortened by cos(pitch)) and rows run across it. Candidates
must sit entirely on the segment; the best are picked greedily by energy.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
from shapely.geometry import Polygon

from modules.rasters import FluxRaster, InstanceMap
from modules.roof_segmentation import SegmentStats
from utils.constants import CAPACITY_CAP_KW, FOOTPRINT_EPSILON_M, PANEL_SPEC
from utils.errors import GeometryError
from utils.validators import check_same_meta

logger = logging.getLogger(__name__)

# azimuth used to orient rows on flat segments (panels face south)
FLAT_SEGMENT_AZIMUTH = 180.0


@dataclass(frozen=True)
class PanelSpec:
    length_m: float = PANEL_SPEC["length_m"]
    width_m: float = PANEL_SPEC["width_m"]
    rated_power_w: float = PANEL_SPEC["rated_power_w"]
    efficiency: float = PANEL_SPEC["efficiency"]
    performance_ratio: float = PANEL_SPEC["performance_ratio"]

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise GeometryError(f"panel {name} must be > 0, got {value}")

    @property
    def area_m2(self) -> float:
        return self.length_m * self.width_m

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "PanelSpec":
        data = data or {}
        return cls(**{k: float(v) for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass
class PanelPlacement:
    panel_index: int
    segment_id: int
    building_id: int
    footprint: List[Tuple[float, float]]
    orientation_deg: float
    pitch_deg: float
    mean_flux: float
    annual_energy_kwh: float
    centroid_row: float
    centroid_col: float

    @property
    def polygon(self) -> Polygon:
        return Polygon(self.footprint)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["footprint"] = [list(p) for p in self.footprint]
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "PanelPlacement":
        values = dict(data)
        values["footprint"] = [tuple(float(v) for v in p) for p in data["footprint"]]
        return cls(**values)


# ===================================================================
# PER-SEGMENT LAYOUT
# ===================================================================

def _local_axes(azimuth_deg: float) -> Tuple[np.ndarray, np.ndarray]:
    """(across-slope, down-slope) unit vectors in map (x, y)."""
    a = math.radians(azimuth_deg)
    across = np.array([math.cos(a), -math.sin(a)])
    down = np.array([math.sin(a), math.cos(a)])
    return across, down


def _segment_candidates(
    segment_id: int,
    ids: np.ndarray,
    flux: FluxRaster,
    stats: SegmentStats,
    spec: PanelSpec,
) -> List[dict]:
    meta = flux.meta
    res = meta.spatial_resolution
    rows, cols = np.nonzero(ids == segment_id)
    if rows.size == 0:
        return []

    azimuth = FLAT_SEGMENT_AZIMUTH if stats.azimuth_deg is None else stats.azimuth_deg
    pitch = 0.0 if stats.azimuth_deg is None else stats.pitch_deg
    across, down = _local_axes(azimuth)
    cell_u = spec.width_m
    cell_d = spec.length_m * math.cos(math.radians(pitch))

    # pixel-edge extent of the segment in local coordinates
    r0, r1 = rows.min(), rows.max() + 1
    c0, c1 = cols.min(), cols.max() + 1
    corner_x = meta.origin_x + np.array([c0, c1, c0, c1]) * res
    corner_y = meta.origin_y - np.array([r0, r0, r1, r1]) * res
    corner_u = corner_x * across[0] + corner_y * across[1]
    corner_d = corner_x * down[0] + corner_y * down[1]
    u_min, d_min = corner_u.min(), corner_d.min()
    n_u = int(math.ceil((corner_u.max() - u_min) / cell_u - 1e-9))
    n_d = int(math.ceil((corner_d.max() - d_min) / cell_d - 1e-9))
    if n_u <= 0 or n_d <= 0:
        return []

    # bin every pixel centre of the window into its candidate cell
    window_ids = ids[r0:r1, c0:c1]
    wr, wc = np.mgrid[r0:r1, c0:c1]
    cx = meta.origin_x + (wc + 0.5) * res
    cy = meta.origin_y - (wr + 0.5) * res
    cu = (cx * across[0] + cy * across[1] - u_min) / cell_u
    cd = (cx * down[0] + cy * down[1] - d_min) / cell_d
    iu = np.floor(cu).astype(np.int64)
    jd = np.floor(cd).astype(np.int64)
    in_grid = (iu >= 0) & (iu < n_u) & (jd >= 0) & (jd < n_d)
    cell = np.where(in_grid, jd * n_u + iu, -1)

    n_cells = n_u * n_d
    member = window_ids == segment_id
    foreign = np.bincount(cell[in_grid & ~member], minlength=n_cells)
    flux_ok = member & flux.valid[r0:r1, c0:c1]
    flux_sum = np.bincount(cell[in_grid & flux_ok], weights=flux.values[r0:r1, c0:c1][in_grid & flux_ok], minlength=n_cells)
    flux_count = np.bincount(cell[in_grid & flux_ok], minlength=n_cells)

    eps = FOOTPRINT_EPSILON_M
    candidates = []
    for j in range(n_d):
        for i in range(n_u):
            index = j * n_u + i
            if foreign[index]:
                continue
            u0 = u_min + i * cell_u
            d0 = d_min + j * cell_d
            local = [(u0, d0), (u0 + cell_u, d0), (u0 + cell_u, d0 + cell_d), (u0, d0 + cell_d)]
            shrunk = [(u0 + eps, d0 + eps), (u0 + cell_u - eps, d0 + eps),
                      (u0 + cell_u - eps, d0 + cell_d - eps), (u0 + eps, d0 + cell_d - eps)]
            if not all(_on_segment(u, d, across, down, meta, ids, segment_id) for u, d in shrunk):
                continue
            footprint = [tuple(float(v) for v in u * across + d * down) for u, d in local]
            mean_flux = float(flux_sum[index] / flux_count[index]) if flux_count[index] else 0.0
            energy = mean_flux * spec.area_m2 * spec.efficiency * spec.performance_ratio
            centre = (u0 + cell_u / 2) * across + (d0 + cell_d / 2) * down
            centroid_row = (meta.origin_y - centre[1]) / res - 0.5
            centroid_col = (centre[0] - meta.origin_x) / res - 0.5
            candidates.append({
                "segment_id": int(segment_id),
                "building_id": int(stats.building_id),
                "footprint": footprint,
                "orientation_deg": float(azimuth),
                "pitch_deg": float(pitch),
                "mean_flux": mean_flux,
                "annual_energy_kwh": energy,
                "centroid_row": float(centroid_row),
                "centroid_col": float(centroid_col),
            })
    return candidates


def _on_segment(u, d, across, down, meta, ids, segment_id) -> bool:
    x = u * across[0] + d * down[0]
    y = u * across[1] + d * down[1]
    col = int(math.floor((x - meta.origin_x) / meta.spatial_resolution))
    row = int(math.floor((meta.origin_y - y) / meta.spatial_resolution))
    if not (0 <= row < meta.height and 0 <= col < meta.width):
        return False
    return ids[row, col] == segment_id


def _greedy_select(candidates: List[dict]) -> List[dict]:
    """Highest energy first, skipping any candidate that overlaps a chosen one."""
    ordered = sorted(candidates, key=_rank_key)
    chosen: List[dict] = []
    polygons: List[Polygon] = []
    for candidate in ordered:
        polygon = Polygon(candidate["footprint"])
        if any(polygon.intersection(p).area > FOOTPRINT_EPSILON_M for p in polygons):
            continue
        chosen.append(candidate)
        polygons.append(polygon)
    return chosen


def _rank_key(item) -> tuple:
    if not isinstance(item, dict):
        item = vars(item)
    return (-item["annual_energy_kwh"], item["centroid_row"], item["centroid_col"], item["segment_id"])


def place_panels(
    segments: InstanceMap,
    stats: List[SegmentStats],
    flux: FluxRaster,
    spec: Optional[PanelSpec] = None,
) -> List[PanelPlacement]:
    """
    Panel layouts for every roof segment.

    Args:
        segments: roof-segment instance map
        stats: statistics for the segments (orientation, parent building)
        flux: annual flux on the same grid
        spec: panel dimensions and efficiencies

    Returns:
        placements ranked by descending energy; ties by centroid row, then
        centroid column, then segment id
    """
    check_same_meta(segments, flux)
    spec = spec or PanelSpec()
    chosen: List[dict] = []
    for segment in stats:
        picked = _greedy_select(_segment_candidates(segment.segment_id, segments.ids, flux, segment, spec))
        chosen.extend(picked)
        logger.debug(f"segment {segment.segment_id}: {len(picked)} panels")

    ranked = sorted(chosen, key=_rank_key)
    placements = [PanelPlacement(panel_index=index, **item) for index, item in enumerate(ranked)]
    logger.info(f"place_panels: {len(placements)} panels on {len(stats)} segments")
    return placements


# ===================================================================
# AGGREGATION
# ===================================================================

def panels_for_cap(cap_kw: float, spec: Optional[PanelSpec] = None) -> int:
    spec = spec or PanelSpec()
    return int(math.ceil(cap_kw * 1000.0 / spec.rated_power_w - 1e-9))


def building_energy(
    placements: Iterable[PanelPlacement],
    cap_kw: Optional[float] = None,
    spec: Optional[PanelSpec] = None,
) -> Dict[int, float]:
    """
    Annual energy per building from its top-ranked panels.

    Args:
        placements: ranked placements (as returned by place_panels)
        cap_kw: capacity cap; None sums every panel
        spec: panel spec providing the rated power

    Returns:
        building id -> kWh/yr
    """
    limit = None if cap_kw is None else panels_for_cap(cap_kw, spec)
    used: Dict[int, int] = {}
    totals: Dict[int, float] = {}
    for placement in sorted(placements, key=_rank_key):
        building = placement.building_id
        if limit is not None and used.get(building, 0) >= limit:
            continue
        used[building] = used.get(building, 0) + 1
        totals[building] = totals.get(building, 0.0) + placement.annual_energy_kwh
    return totals


def building_flux_summary(
    buildings: InstanceMap,
    segments: InstanceMap,
    flux: FluxRaster,
    placements: List[PanelPlacement],
    cap_kw: float = CAPACITY_CAP_KW,
    spec: Optional[PanelSpec] = None,
) -> pd.DataFrame:
    """Per-building roof area, mean roof flux, panel count and energies."""
    check_same_meta(buildings, segments, flux)
    res2 = buildings.meta.spatial_resolution ** 2
    uncapped = building_energy(placements, None, spec)
    capped = building_energy(placements, cap_kw, spec)
    counts: Dict[int, int] = {}
    for placement in placements:
        counts[placement.building_id] = counts.get(placement.building_id, 0) + 1

    rows = []
    for building_id in buildings.instance_ids():
        roof = (buildings.ids == building_id) & (segments.ids > 0)
        usable = roof & flux.valid
        rows.append({
            "building_id": int(building_id),
            "roof_area_m2": float(roof.sum() * res2),
            "mean_roof_flux_kwh_m2": float(flux.values[usable].mean()) if usable.any() else 0.0,
            "panel_count": counts.get(int(building_id), 0),
            "energy_kwh": uncapped.get(int(building_id), 0.0),
            f"energy_{cap_kw:g}kw_kwh": capped.get(int(building_id), 0.0),
        })
    return pd.DataFrame(rows)
