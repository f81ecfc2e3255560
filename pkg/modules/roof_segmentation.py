# modules/roof_segmentation.py
"""
Graph-cut roof segmentation.

Inside each building a multi-label MRF assigns every pixel one candidate
roof plane (flat, or pitch x azimuth on a coarse grid):

    E(f) = sum_p min(angle(n_p, label_normal(f_p)), cap)
         + lambda * sum_{p~q} [f_p != f_q]          (4-neighbours)

minimised by alpha-expansion, each move an exact binary min-cut. Connected
components of equal label become roof segments; tiny segments are merged
into the neighbour sharing the longest boundary.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage

from modules.maxflow_solver import SINK_SIDE, make_graph, resolve_backend
from modules.raster_ops import pitch_azimuth, surface_normals
from modules.rasters import HeightRaster, InstanceMap, NormalField, canonical_renumber
from utils.constants import (
    DATA_COST_CAP_DEG,
    EXPANSION_PASSES,
    LABEL_AZIMUTH_STEP_DEG,
    LABEL_PITCHES_DEG,
    MIN_SEGMENT_AREA_M2,
    POTTS_LAMBDA,
)
from utils.errors import RasterError
from utils.validators import check_same_meta

logger = logging.getLogger(__name__)

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
_STENCIL = np.ones((3, 3), dtype=bool)


# ===================================================================
# LABELS & PARAMETERS
# ===================================================================

def plane_normal(pitch_deg: float, azimuth_deg: float) -> np.ndarray:
    """Upward unit normal of a plane whose fall line points at azimuth_deg."""
    p = math.radians(pitch_deg)
    a = math.radians(azimuth_deg)
    return np.array([math.sin(p) * math.sin(a), math.sin(p) * math.cos(a), math.cos(p)])


@dataclass(frozen=True, eq=False)
class PlaneLabelSet:
    """Label 0 is flat; the rest enumerate pitches (outer) x azimuths (inner)."""

    pitches: np.ndarray
    azimuths: np.ndarray
    normals: np.ndarray

    @classmethod
    def default(
        cls,
        pitches=LABEL_PITCHES_DEG,
        azimuth_step: float = LABEL_AZIMUTH_STEP_DEG,
    ) -> "PlaneLabelSet":
        label_pitch = [0.0]
        label_azimuth = [0.0]
        for pitch in pitches:
            for azimuth in np.arange(0.0, 360.0, azimuth_step):
                label_pitch.append(float(pitch))
                label_azimuth.append(float(azimuth))
        normals = np.array([plane_normal(p, a) for p, a in zip(label_pitch, label_azimuth)])
        return cls(np.array(label_pitch), np.array(label_azimuth), normals)

    def __len__(self) -> int:
        return len(self.pitches)


@dataclass(frozen=True)
class SegmentationParams:
    potts_lambda: float = POTTS_LAMBDA
    data_cost_cap_deg: float = DATA_COST_CAP_DEG
    passes: int = EXPANSION_PASSES
    min_area_m2: float = MIN_SEGMENT_AREA_M2
    backend: Optional[str] = None

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "SegmentationParams":
        data = dict(data or {})
        if "lambda" in data:
            data["potts_lambda"] = data.pop("lambda")
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class SegmentStats:
    segment_id: int
    building_id: int
    area_m2: float
    pixel_count: int
    pitch_deg: float
    azimuth_deg: Optional[float]
    normal: Tuple[float, float, float]
    label_id: int = 0

    @property
    def is_flat(self) -> bool:
        return self.azimuth_deg is None

    def to_dict(self) -> dict:
        data = asdict(self)
        data["normal"] = list(self.normal)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "SegmentStats":
        return cls(
            segment_id=int(data["segment_id"]),
            building_id=int(data["building_id"]),
            area_m2=float(data["area_m2"]),
            pixel_count=int(data["pixel_count"]),
            pitch_deg=float(data["pitch_deg"]),
            azimuth_deg=None if data.get("azimuth_deg") is None else float(data["azimuth_deg"]),
            normal=tuple(float(v) for v in data["normal"]),
            label_id=int(data.get("label_id", 0)),
        )


@dataclass
class BuildingSegmentation:
    """Result for one building crop: local instance ids and their labels."""

    building_id: int
    row0: int
    col0: int
    instances: np.ndarray
    instance_labels: Dict[int, int]
    energies: List[float] = field(default_factory=list)


# ===================================================================
# ENERGY & ALPHA-EXPANSION
# ===================================================================

def data_costs(normals: np.ndarray, valid: np.ndarray, labels: PlaneLabelSet, cap: float) -> np.ndarray:
    """(P, L) capped angular distance in degrees; pixels without a normal cost 0."""
    cosines = np.clip(normals @ labels.normals.T, -1.0, 1.0)
    costs = np.minimum(np.degrees(np.arccos(cosines)), cap)
    costs[~valid] = 0.0
    return costs


def mrf_energy(labels: np.ndarray, costs: np.ndarray, pairs: np.ndarray, potts_lambda: float) -> float:
    unary = costs[np.arange(labels.size), labels].sum()
    if pairs.size == 0:
        return float(unary)
    pairwise = potts_lambda * np.count_nonzero(labels[pairs[:, 0]] != labels[pairs[:, 1]])
    return float(unary + pairwise)


def neighbour_pairs(mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Local pixel ids (row-major over mask pixels) and their 4-neighbour pairs.

    Returns:
        (index grid with -1 outside the mask, (K, 2) pair array)
    """
    index = np.full(mask.shape, -1, dtype=np.int64)
    index[mask] = np.arange(int(mask.sum()))
    pairs = []
    horizontal = mask[:, :-1] & mask[:, 1:]
    pairs.append(np.stack([index[:, :-1][horizontal], index[:, 1:][horizontal]], axis=1))
    vertical = mask[:-1, :] & mask[1:, :]
    pairs.append(np.stack([index[:-1, :][vertical], index[1:, :][vertical]], axis=1))
    return index, np.concatenate(pairs, axis=0).astype(np.int64)


def expansion_move(
    labels: np.ndarray,
    alpha: int,
    costs: np.ndarray,
    pairs: np.ndarray,
    potts_lambda: float,
    backend: Optional[str] = None,
) -> np.ndarray:
    """
    One alpha-expansion move as a binary min-cut.

    x_p = 0 keeps the current label (source side), x_p = 1 switches to alpha
    (sink side). Pairwise Potts terms are split into unary parts plus one
    directed edge of capacity B + C - A - D.
    """
    n = labels.size
    rows = np.arange(n)
    unary0 = costs[rows, labels].astype(np.float64)
    unary1 = costs[:, alpha].astype(np.float64)

    edge_from = np.empty(0, dtype=np.int64)
    edge_to = np.empty(0, dtype=np.int64)
    edge_cap = np.empty(0)
    if pairs.size:
        p, q = pairs[:, 0], pairs[:, 1]
        fp, fq = labels[p], labels[q]
        a = potts_lambda * (fp != fq)
        b = potts_lambda * (fp != alpha)
        c = potts_lambda * (fq != alpha)
        # E(xp, xq) = A + (C - A) xp + (D - C) xq + (B + C - A - D)(1 - xp) xq, D = 0
        np.add.at(unary1, p, c - a)
        np.add.at(unary1, q, -c)
        weight = b + c - a
        keep = weight > 0
        edge_from, edge_to, edge_cap = p[keep], q[keep], weight[keep]

    shift = np.minimum(unary0, unary1)
    cap_source = unary1 - shift
    cap_sink = unary0 - shift

    graph = make_graph(n, backend)
    graph.add_tedges(rows, cap_source, cap_sink)
    graph.add_edges(edge_from, edge_to, edge_cap, np.zeros_like(edge_cap))
    graph.maxflow()
    switch = graph.segments() == SINK_SIDE
    return np.where(switch, alpha, labels)


def alpha_expansion(
    costs: np.ndarray,
    pairs: np.ndarray,
    potts_lambda: float,
    passes: int = EXPANSION_PASSES,
    backend: Optional[str] = None,
) -> Tuple[np.ndarray, List[float]]:
    """
    Minimise the Potts MRF by label sweeps in id order.

    Returns:
        (labels, energy trace) where the trace holds the initial energy and
        the energy after every pass; moves that would raise it are rejected
    """
    labels = np.argmin(costs, axis=1).astype(np.int64)
    energy = mrf_energy(labels, costs, pairs, potts_lambda)
    trace = [energy]
    if labels.size == 0:
        return labels, trace

    for sweep in range(passes):
        for alpha in range(costs.shape[1]):
            candidate = expansion_move(labels, alpha, costs, pairs, potts_lambda, backend)
            if np.array_equal(candidate, labels):
                continue
            candidate_energy = mrf_energy(candidate, costs, pairs, potts_lambda)
            if candidate_energy <= energy:
                labels, energy = candidate, candidate_energy
        trace.append(energy)
        logger.debug(f"alpha-expansion pass {sweep + 1}: energy {energy:.3f}")
    return labels, trace


# ===================================================================
# POST-PROCESSING
# ===================================================================

def _label_components(label_grid: np.ndarray, mask: np.ndarray) -> Tuple[np.ndarray, Dict[int, int]]:
    """4-connected components of equal label inside mask, numbered from 1."""
    instances = np.zeros(mask.shape, dtype=np.int64)
    instance_labels: Dict[int, int] = {}
    next_id = 1
    for label in np.unique(label_grid[mask]):
        components, count = ndimage.label(mask & (label_grid == label), structure=_FOUR_CONNECTED)
        if count == 0:
            continue
        instances[components > 0] = components[components > 0] + next_id - 1
        for offset in range(count):
            instance_labels[next_id + offset] = int(label)
        next_id += count
    return instances, instance_labels


def _shared_boundaries(instances: np.ndarray) -> Dict[Tuple[int, int], int]:
    """Count 4-neighbour pixel edges between each pair of distinct instances."""
    a = np.concatenate([instances[:, :-1].ravel(), instances[:-1, :].ravel()])
    b = np.concatenate([instances[:, 1:].ravel(), instances[1:, :].ravel()])
    touching = (a != b) & (a > 0) & (b > 0)
    lo = np.minimum(a[touching], b[touching])
    hi = np.maximum(a[touching], b[touching])
    counts: Dict[Tuple[int, int], int] = {}
    if lo.size:
        pair_keys, pair_counts = np.unique(np.stack([lo, hi], axis=1), axis=0, return_counts=True)
        counts = {(int(x), int(y)): int(c) for (x, y), c in zip(pair_keys, pair_counts)}
    return counts


def merge_small_segments(
    instances: np.ndarray,
    instance_labels: Dict[int, int],
    min_pixels: float,
) -> Tuple[np.ndarray, Dict[int, int]]:
    """
    Merge instances smaller than min_pixels, smallest first (ties by lower
    id), into the neighbour with the longest shared boundary (ties by lower
    id). Isolated small instances are kept.
    """
    instances = instances.copy()
    instance_labels = dict(instance_labels)
    stuck = set()
    while True:
        ids, counts = np.unique(instances[instances > 0], return_counts=True)
        small = [(int(c), int(i)) for i, c in zip(ids, counts) if c < min_pixels and int(i) not in stuck]
        if not small:
            break
        _, victim = min(small)
        boundaries = _shared_boundaries(instances)
        neighbours = []
        for (x, y), length in boundaries.items():
            if x == victim:
                neighbours.append((-length, y))
            elif y == victim:
                neighbours.append((-length, x))
        if not neighbours:
            stuck.add(victim)
            continue
        _, target = min(neighbours)
        instances[instances == victim] = target
        instance_labels.pop(victim, None)
    return instances, instance_labels


# ===================================================================
# PER-BUILDING DRIVER
# ===================================================================

def _crop_box(mask: np.ndarray) -> Tuple[slice, slice]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1)


def segment_building(
    building_id: int,
    mask: np.ndarray,
    normals: np.ndarray,
    normals_valid: np.ndarray,
    row0: int,
    col0: int,
    resolution: float,
    params: SegmentationParams,
) -> BuildingSegmentation:
    """
    Segment one building crop.

    Args:
        building_id: id in the building instance map
        mask: building pixels in the crop
        normals: (h, w, 3) crop of the normal field
        normals_valid: validity of the normals crop
        row0, col0: crop offset in the full raster
        resolution: metres per pixel
        params: segmentation parameters

    Returns:
        BuildingSegmentation with local instance ids (0 outside the building)
    """
    labels_set = PlaneLabelSet.default()
    index, pairs = neighbour_pairs(mask)
    costs = data_costs(normals[mask], normals_valid[mask], labels_set, params.data_cost_cap_deg)
    pixel_labels, energies = alpha_expansion(costs, pairs, params.potts_lambda, params.passes, params.backend)
    if any(later > earlier for earlier, later in zip(energies, energies[1:])):
        raise RasterError(f"alpha-expansion energy increased for building {building_id}: {energies}")

    label_grid = np.full(mask.shape, -1, dtype=np.int64)
    label_grid[mask] = pixel_labels
    instances, instance_labels = _label_components(label_grid, mask)
    min_pixels = params.min_area_m2 / (resolution * resolution)
    instances, instance_labels = merge_small_segments(instances, instance_labels, min_pixels)
    logger.debug(
        f"building {building_id}: {len(instance_labels)} segments, "
        f"energy {energies[0]:.1f} -> {energies[-1]:.1f}"
    )
    return BuildingSegmentation(building_id, row0, col0, instances, instance_labels, energies)


def _segment_building_task(args) -> BuildingSegmentation:
    return segment_building(*args)


def _segment_stats(
    segments: np.ndarray,
    segment_labels: Dict[int, int],
    buildings: np.ndarray,
    normals: NormalField,
) -> List[SegmentStats]:
    """
    Per-segment statistics from the mean of its per-pixel normals.

    A pixel's normal belongs to the segment when its 3x3 Sobel stencil lies
    inside the segment; stencils crossing a ridge or a wall blend two
    surfaces. Segments too thin to have such pixels average every valid
    normal they hold.
    """
    res = normals.meta.spatial_resolution
    stats = []
    objects = ndimage.find_objects(segments)
    for index, window in enumerate(objects):
        segment_id = index + 1
        if window is None:
            continue
        pixels = segments[window] == segment_id
        core = ndimage.binary_erosion(pixels, structure=_STENCIL, border_value=0)
        valid = normals.valid[window]
        vectors = normals.values[window]
        parents = buildings[window][pixels]

        usable = vectors[core & valid]
        if not usable.size:
            usable = vectors[pixels & valid]
        if usable.size:
            mean = usable.sum(axis=0)
            mean /= np.linalg.norm(mean)
        else:
            mean = np.array([0.0, 0.0, 1.0])
        pitch, azimuth = pitch_azimuth(mean)
        count = int(pixels.sum())
        stats.append(SegmentStats(
            segment_id=segment_id,
            building_id=int(np.bincount(parents).argmax()),
            area_m2=count * res * res,
            pixel_count=count,
            pitch_deg=pitch,
            azimuth_deg=azimuth,
            normal=tuple(float(v) for v in mean),
            label_id=segment_labels.get(segment_id, 0),
        ))
    return stats


def segment_roofs(
    dsm: HeightRaster,
    buildings: InstanceMap,
    params: Optional[SegmentationParams] = None,
    workers: int = 1,
    energy_log: Optional[Dict[int, List[float]]] = None,
) -> Tuple[InstanceMap, List[SegmentStats]]:
    """
    Roof segments and their statistics for every building.

    Args:
        dsm: surface model (absolute or above-terrain heights)
        buildings: building instance map on the same grid
        params: segmentation parameters (defaults from constants)
        workers: process count for per-building problems
        energy_log: optional dict filled with building id -> energy trace

    Returns:
        (roof-segment InstanceMap with canonical ids, per-segment stats)
    """
    check_same_meta(dsm, buildings)
    params = params or SegmentationParams()
    # resolve once so every worker uses the same solver
    params = replace(params, backend=resolve_backend(params.backend))
    meta = dsm.meta

    building_ids = buildings.instance_ids()
    if building_ids.size == 0:
        logger.info("segment_roofs: no buildings, nothing to segment")
        return InstanceMap(meta, np.zeros(meta.shape, dtype=np.int64), "roof_segments"), []

    normals = surface_normals(dsm)
    tasks = []
    for building_id in building_ids:
        window = _crop_box(buildings.ids == building_id)
        mask = buildings.ids[window] == building_id
        # a Sobel window reaching past the footprint sees the wall, not the roof
        interior = ndimage.binary_erosion(mask, structure=_STENCIL, border_value=0)
        tasks.append((
            int(building_id),
            mask,
            np.array(normals.values[window]),
            np.array(normals.valid[window]) & interior,
            window[0].start,
            window[1].start,
            meta.spatial_resolution,
            params,
        ))

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_segment_building_task, tasks))
    else:
        results = [_segment_building_task(task) for task in tasks]

    merged = np.zeros(meta.shape, dtype=np.int64)
    merged_labels: Dict[int, int] = {}
    offset = 0
    for result in results:
        if energy_log is not None:
            energy_log[result.building_id] = list(result.energies)
        h, w = result.instances.shape
        window = (slice(result.row0, result.row0 + h), slice(result.col0, result.col0 + w))
        local = result.instances
        region = merged[window]
        region[local > 0] = local[local > 0] + offset
        for local_id, label in result.instance_labels.items():
            merged_labels[local_id + offset] = label
        offset += int(local.max()) if local.size else 0

    renumbered = canonical_renumber(merged)
    old_ids, first = np.unique(merged.ravel(), return_index=True)
    remap = {
        int(renumbered.flat[index]): merged_labels[int(old_id)]
        for old_id, index in zip(old_ids, first)
        if old_id > 0
    }

    segments = InstanceMap(meta, renumbered, "roof_segments")
    stats = _segment_stats(renumbered, remap, buildings.ids, normals)
    logger.info(f"segment_roofs: {len(building_ids)} buildings -> {len(stats)} roof segments")
    return segments, stats


# ===================================================================
# COVERAGE & TABLES
# ===================================================================

def coverage_fraction(buildings: InstanceMap, segments: InstanceMap) -> Dict[int, float]:
    """Fraction of each building's pixels covered by some roof segment."""
    check_same_meta(buildings, segments)
    ids = buildings.ids
    present = ids > 0
    if not present.any():
        return {}
    total = np.bincount(ids[present])
    covered = np.bincount(ids[present & (segments.ids > 0)], minlength=total.size)
    return {int(i): float(covered[i] / total[i]) for i in np.flatnonzero(total)}


def segment_table(stats: List[SegmentStats]) -> pd.DataFrame:
    """Segment statistics as a DataFrame, one row per segment."""
    columns = ["segment_id", "building_id", "area_m2", "pixel_count", "pitch_deg", "azimuth_deg",
               "normal_x", "normal_y", "normal_z", "label_id"]
    rows = []
    for s in stats:
        rows.append({
            "segment_id": s.segment_id,
            "building_id": s.building_id,
            "area_m2": s.area_m2,
            "pixel_count": s.pixel_count,
            "pitch_deg": s.pitch_deg,
            "azimuth_deg": s.azimuth_deg,
            "normal_x": s.normal[0],
            "normal_y": s.normal[1],
            "normal_z": s.normal[2],
            "label_id": s.label_id,
        })
    return pd.DataFrame(rows, columns=columns)
