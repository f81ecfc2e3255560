# modules/metrics.py
"""
Evaluation metrics: masked height MAE, roof-segment IoU with greedy
matching, per-segment pitch/azimuth error, and building energy MAPE
(uncapped and capacity-capped).
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from modules.masking import EvalMask
from modules.panel_placement import PanelPlacement, PanelSpec, building_energy
from modules.rasters import HeightRaster, InstanceMap
from modules.roof_segmentation import SegmentStats
from utils.constants import CAPACITY_CAP_KW
from utils.errors import MetricError
from utils.validators import check_same_meta

logger = logging.getLogger(__name__)


@dataclass
class MatchedPair:
    label_id: int
    pred_id: Optional[int]
    intersection: int
    label_area: int
    pred_area: int
    iou: float


@dataclass
class MapeResult:
    value: float
    n_common: int
    skipped_pred_only: int
    skipped_label_only: int
    per_building: Dict[int, float] = field(default_factory=dict)


@dataclass
class MetricsReport:
    overall_mae_m: Optional[float] = None
    building_mae_m: Optional[float] = None
    pitch_error_deg: Optional[float] = None
    azimuth_error_deg: Optional[float] = None
    segment_iou_fraction: Optional[float] = None
    mape_fraction: Optional[float] = None
    mape_at_5kw_fraction: Optional[float] = None
    matches: List[dict] = field(default_factory=list)
    mape_buildings: Dict[str, float] = field(default_factory=dict)
    mask_variants: List[dict] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def summary_table(self) -> pd.DataFrame:
        rows = [
            ("Overall MAE (m)", self.overall_mae_m),
            ("Building MAE (m)", self.building_mae_m),
            ("Pitch error (deg)", self.pitch_error_deg),
            ("Azimuth error (deg)", self.azimuth_error_deg),
            ("Segment IoU", self.segment_iou_fraction),
            ("MAPE", self.mape_fraction),
            ("MAPE@5kW", self.mape_at_5kw_fraction),
        ]
        return pd.DataFrame(rows, columns=["metric", "value"])


# ===================================================================
# HEIGHT ERROR
# ===================================================================

def masked_mae(
    pred: HeightRaster,
    label: HeightRaster,
    mask: Optional[EvalMask] = None,
    region="all",
) -> float:
    """
    Mean absolute height error over included, valid pixels.

    Args:
        pred, label: height rasters on one grid
        mask: pixels allowed to participate (default: all)
        region: "all" or a building InstanceMap restricting to building pixels

    Returns:
        MAE in metres
    """
    check_same_meta(pred, label)
    include = pred.valid & label.valid
    if mask is not None:
        check_same_meta(pred, mask)
        include &= mask.include
    if isinstance(region, InstanceMap):
        check_same_meta(pred, region)
        include &= region.binary()
    elif region != "all":
        raise MetricError(f"region must be 'all' or a building InstanceMap, got {region!r}")

    count = int(include.sum())
    if count == 0:
        raise MetricError("masked_mae has no included pixels")
    return float(np.abs(pred.values[include] - label.values[include]).sum() / count)


# ===================================================================
# SEGMENT MATCHING
# ===================================================================

def match_and_iou(
    pred: InstanceMap,
    label: InstanceMap,
    mask: Optional[EvalMask] = None,
) -> Tuple[List[MatchedPair], float]:
    """
    Greedy matching of label segments to predicted segments and mean IoU.

    Label segments, largest first (ties by lower id), each claim the still
    unmatched predicted segment with the largest intersection (ties by lower
    id). The reported IoU is the label-area weighted mean; unmatched label
    segments score 0. Only included pixels count.
    """
    check_same_meta(pred, label)
    include = np.ones(pred.meta.shape, dtype=bool) if mask is None else mask.include
    label_ids = label.ids[include]
    pred_ids = pred.ids[include]

    label_area = np.bincount(label_ids[label_ids > 0])
    pred_area = np.bincount(pred_ids[pred_ids > 0])
    labels_present = np.flatnonzero(label_area)
    if labels_present.size == 0:
        raise MetricError("match_and_iou needs at least one label segment")

    both = (label_ids > 0) & (pred_ids > 0)
    intersections: Dict[int, Dict[int, int]] = {}
    if both.any():
        pairs, counts = np.unique(np.stack([label_ids[both], pred_ids[both]], axis=1), axis=0, return_counts=True)
        for (l_id, p_id), count in zip(pairs, counts):
            intersections.setdefault(int(l_id), {})[int(p_id)] = int(count)

    order = sorted(labels_present, key=lambda i: (-label_area[i], i))
    taken = set()
    matches: List[MatchedPair] = []
    for l_id in order:
        l_id = int(l_id)
        options = [(-count, p_id) for p_id, count in intersections.get(l_id, {}).items() if p_id not in taken]
        if not options:
            matches.append(MatchedPair(l_id, None, 0, int(label_area[l_id]), 0, 0.0))
            continue
        neg_count, p_id = min(options)
        taken.add(p_id)
        inter = -neg_count
        union = int(label_area[l_id]) + int(pred_area[p_id]) - inter
        matches.append(MatchedPair(l_id, p_id, inter, int(label_area[l_id]), int(pred_area[p_id]), inter / union))

    total = sum(m.label_area for m in matches)
    iou = sum(m.label_area * m.iou for m in matches) / total
    return matches, float(iou)


# ===================================================================
# ORIENTATION ERROR
# ===================================================================

def circular_distance(a: float, b: float) -> float:
    """Angular distance between two bearings, in [0, 180]."""
    diff = abs(a - b) % 360.0
    return min(diff, 360.0 - diff)


def segment_angle_errors(
    pred_stats: Sequence[SegmentStats],
    label_stats: Sequence[SegmentStats],
    matching: Sequence[MatchedPair],
) -> Tuple[float, Optional[float]]:
    """
    Label-area weighted pitch and azimuth errors over matched pairs.

    Pairs where either segment is flat are left out of the azimuth error,
    which is None if every pair is flat.
    """
    pred_by_id = {s.segment_id: s for s in pred_stats}
    label_by_id = {s.segment_id: s for s in label_stats}
    pairs = [
        (pred_by_id[m.pred_id], label_by_id[m.label_id])
        for m in matching
        if m.pred_id is not None and m.pred_id in pred_by_id and m.label_id in label_by_id
    ]
    if not pairs:
        raise MetricError("segment_angle_errors needs at least one matched pair")

    weights = np.array([l.area_m2 for _, l in pairs])
    pitch_errors = np.array([abs(p.pitch_deg - l.pitch_deg) for p, l in pairs])
    pitch_error = float((weights * pitch_errors).sum() / weights.sum())

    sloped = [(p, l) for p, l in pairs if not p.is_flat and not l.is_flat]
    if not sloped:
        return pitch_error, None
    az_weights = np.array([l.area_m2 for _, l in sloped])
    az_errors = np.array([circular_distance(p.azimuth_deg, l.azimuth_deg) for p, l in sloped])
    return pitch_error, float((az_weights * az_errors).sum() / az_weights.sum())


# ===================================================================
# ENERGY ERROR
# ===================================================================

def mape(pred_energy: Dict[int, float], label_energy: Dict[int, float]) -> MapeResult:
    """
    Mean absolute percentage error over buildings present in both maps.

    Returns:
        MapeResult with the fraction (0.1 = 10%) and skipped counts
    """
    common = sorted(set(pred_energy) & set(label_energy))
    if not common:
        raise MetricError("mape needs at least one building present in both maps")
    errors = {}
    for building in common:
        reference = label_energy[building]
        if not reference > 0:
            raise MetricError(f"label energy for building {building} must be > 0, got {reference}")
        errors[building] = abs(pred_energy[building] - reference) / reference

    skipped_pred = len(set(pred_energy) - set(label_energy))
    skipped_label = len(set(label_energy) - set(pred_energy))
    if skipped_pred or skipped_label:
        logger.warning(f"mape skipped {skipped_pred} predicted-only and {skipped_label} label-only buildings")
    value = float(np.mean([errors[b] for b in common]))
    return MapeResult(value, len(common), skipped_pred, skipped_label, errors)


def mape_from_placements(
    pred_placements: Sequence[PanelPlacement],
    label_placements: Sequence[PanelPlacement],
    cap_kw: Optional[float] = None,
    spec: Optional[PanelSpec] = None,
) -> MapeResult:
    """MAPE of building energies aggregated with the same capacity cap."""
    return mape(
        building_energy(pred_placements, cap_kw, spec),
        building_energy(label_placements, cap_kw, spec),
    )


# ===================================================================
# REPORT
# ===================================================================

def _try(metric, *args, warnings: Optional[List[str]] = None, **kwargs):
    try:
        return metric(*args, **kwargs)
    except MetricError as e:
        if warnings is not None:
            warnings.append(f"{metric.__name__}: {e}")
        logger.warning(f"{metric.__name__} skipped: {e}")
        return None


def build_report(
    pred_height: HeightRaster,
    label_height: HeightRaster,
    buildings: InstanceMap,
    pred_segments: InstanceMap,
    label_segments: InstanceMap,
    pred_stats: Sequence[SegmentStats],
    label_stats: Sequence[SegmentStats],
    mask: Optional[EvalMask] = None,
    pred_placements: Optional[Sequence[PanelPlacement]] = None,
    label_placements: Optional[Sequence[PanelPlacement]] = None,
    variants: Optional[Dict[str, EvalMask]] = None,
    cap_kw: float = CAPACITY_CAP_KW,
    spec: Optional[PanelSpec] = None,
) -> MetricsReport:
    """
    Full metric suite for one prediction against its labels.

    Metrics whose domain is empty are left as None and noted in warnings.
    """
    report = MetricsReport()
    warnings = report.warnings
    report.overall_mae_m = _try(masked_mae, pred_height, label_height, mask, warnings=warnings)
    report.building_mae_m = _try(masked_mae, pred_height, label_height, mask, buildings, warnings=warnings)

    matched = _try(match_and_iou, pred_segments, label_segments, mask, warnings=warnings)
    if matched is not None:
        matches, report.segment_iou_fraction = matched
        report.matches = [asdict(m) for m in matches]
        angles = _try(segment_angle_errors, pred_stats, label_stats, matches, warnings=warnings)
        if angles is not None:
            report.pitch_error_deg, report.azimuth_error_deg = angles

    if pred_placements is not None and label_placements is not None:
        uncapped = _try(mape_from_placements, pred_placements, label_placements, None, spec, warnings=warnings)
        capped = _try(mape_from_placements, pred_placements, label_placements, cap_kw, spec, warnings=warnings)
        if uncapped is not None:
            report.mape_fraction = uncapped.value
            report.mape_buildings = {str(k): v for k, v in uncapped.per_building.items()}
        if capped is not None:
            report.mape_at_5kw_fraction = capped.value

    for name, variant in (variants or {}).items():
        iou = _try(match_and_iou, pred_segments, label_segments, variant)
        report.mask_variants.append({
            "variant": name,
            "included_fraction": variant.included_fraction,
            "overall_mae_m": _try(masked_mae, pred_height, label_height, variant),
            "building_mae_m": _try(masked_mae, pred_height, label_height, variant, buildings),
            "segment_iou_fraction": None if iou is None else iou[1],
        })

    logger.info(
        f"metrics: overall MAE {report.overall_mae_m}, building MAE {report.building_mae_m}, "
        f"IoU {report.segment_iou_fraction}"
    )
    return report
