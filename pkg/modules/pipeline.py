# modules/pipeline.py
"""
End-to-end orchestration.

- validate_config / parse_config: JSON config -> PipelineConfig, with every
  violation collected and reported together.
- run_pipeline: the staged run (load, terrain, reproject, infill, stitch,
  segment, flux, panels, evaluate, report) writing every intermediate under
  <output_dir>/<prefix>.<suffix> and a RunManifest listing them.
- Prefix-based artifact helpers shared with the CLI subcommands, so that
  `run` and a chain of single subcommands produce the same files.
"""

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy

from modules import persistence
from modules.masking import EvalMask, combine_masks, coverage_mask, mask_variants, temporal_mismatch_mask
from modules.maxflow_solver import resolve_backend
from modules.metrics import MetricsReport, build_report
from modules.panel_placement import (
    PanelPlacement,
    PanelSpec,
    building_energy,
    building_flux_summary,
    place_panels,
)
from modules.pdf_export import generate_run_pdf
from modules.raster_io import (
    load_color_png,
    load_flux,
    load_height,
    load_instances,
    load_mask,
    read_json,
    render_overlay,
    save_color_png,
    save_flux_png,
    save_gray_png,
    save_height,
    save_instances,
    save_mask,
    write_json,
)
from modules.raster_ops import compose_dsm, heightmap_from_dsm, hillshade, resample_bilinear, surface_normals
from modules.rasters import (
    ColorRaster,
    GrayRaster,
    GridMeta,
    HeightRaster,
    InstanceMap,
    MaskRaster,
    _ScalarRaster,
)
from modules.reprojection import ViewGeometry, infill_occlusions, reproject, reproject_with_sides
from modules.roof_segmentation import (
    SegmentationParams,
    SegmentStats,
    coverage_fraction,
    segment_roofs,
    segment_table,
)
from modules.solar_flux import IrradianceModel, annual_flux, sun_positions
from modules.stitching import TilePlacement, extract_tile, split_tiles, stitch
from modules.synth_scene import SceneTruth
from utils.constants import (
    APP_VERSION,
    CAPACITY_CAP_KW,
    COVERAGE_THRESHOLD,
    DEFAULT_SPATIAL_RESOLUTION,
    DEFAULT_TILE_OVERLAP,
    DEFAULT_TILE_SIZE,
    DEFAULT_WORKERS,
    FAILED,
    MAXFLOW_BACKENDS,
    OFFNADIR_TAG,
    OUTPUT_SUFFIXES,
    SAMPLES_PER_DAY,
    SUCCEEDED,
    WALL_LADDER_STEP_M,
)
from utils.errors import ConfigError, GeometryError, RasterError, StageError
from utils.formatting import format_percentage, format_seconds
from utils.validators import check_elevation, check_latitude, normalize_azimuth

logger = logging.getLogger(__name__)

RASTER_KINDS = ("height", "flux", "buildings", "roof_segments", "mask", "rgb")

_TOP_LEVEL_KEYS = {
    "inputs", "view", "latitude", "output_dir", "prefix", "spatial_resolution", "tiling",
    "infill", "segmentation", "flux", "panel", "capacity_cap_kw", "masking", "workers", "pdf_report",
}

_HEADLINE_METRICS = (
    "overall_mae_m", "building_mae_m", "pitch_error_deg", "azimuth_error_deg",
    "segment_iou_fraction", "mape_fraction", "mape_at_5kw_fraction",
)


# ===================================================================
# ARTIFACT HELPERS
# ===================================================================

def output_path(prefix, key: str) -> Path:
    """<prefix>.<suffix> for one of the named outputs."""
    return Path(f"{prefix}.{OUTPUT_SUFFIXES[key]}")


def save_stats(path, stats: Sequence[SegmentStats]) -> None:
    write_json(path, [s.to_dict() for s in stats])


def load_stats(path) -> List[SegmentStats]:
    return [SegmentStats.from_dict(item) for item in read_json(path)]


def save_placements(path, placements: Sequence[PanelPlacement]) -> None:
    write_json(path, [p.to_dict() for p in placements])


def load_placements(path) -> List[PanelPlacement]:
    return [PanelPlacement.from_dict(item) for item in read_json(path)]


def save_segments(prefix, segments: InstanceMap, stats: Sequence[SegmentStats]) -> Dict[str, str]:
    """Segment raster, stats JSON and stats CSV under one prefix."""
    paths = {key: output_path(prefix, key) for key in ("segments", "segment_stats", "segment_table")}
    save_instances(paths["segments"], segments)
    save_stats(paths["segment_stats"], stats)
    segment_table(list(stats)).to_csv(paths["segment_table"], index=False)
    return {key: str(path) for key, path in paths.items()}


def load_raster(path, kind: str, meta: Optional[GridMeta] = None):
    """Load any raster kind the CLI handles."""
    if kind == "height":
        return load_height(path)
    if kind == "flux":
        return load_flux(path)
    if kind in ("buildings", "roof_segments"):
        return load_instances(path, kind)
    if kind == "mask":
        return load_mask(path)
    if kind == "rgb":
        return load_color_png(path, meta)
    raise RasterError(f"raster kind must be one of {RASTER_KINDS}, got {kind!r}")


def guess_kind(path) -> str:
    return "rgb" if str(path).lower().endswith(".png") else "height"


def save_raster(path, raster) -> None:
    """Write a raster in the format of its kind."""
    if isinstance(raster, ColorRaster):
        save_color_png(path, raster)
    elif isinstance(raster, InstanceMap):
        save_instances(path, raster)
    elif isinstance(raster, (MaskRaster, EvalMask)):
        save_mask(path, raster)
    elif isinstance(raster, GrayRaster):
        save_gray_png(path, raster)
    elif isinstance(raster, _ScalarRaster):
        save_height(path, raster)
    else:
        raise RasterError(f"cannot save rasters of type {type(raster).__name__}")


# ===================================================================
# SYNTHETIC SCENES ON DISK
# ===================================================================

def render_offnadir(truth: SceneTruth, view: ViewGeometry, step: float = WALL_LADDER_STEP_M) -> Dict[str, object]:
    """Off-nadir height map, RGB and buildings of a scene, walls included."""
    heights = reproject_with_sides(truth.heightmap, view, step=step)
    rgb = reproject_with_sides(truth.heightmap, view, values=truth.rgb, step=step).output
    buildings = reproject_with_sides(truth.heightmap, view, values=truth.buildings, step=step).output
    return {
        "heightmap": heights.output,
        "rgb": rgb,
        "buildings": buildings,
        "occlusion": heights.occlusion,
    }


def write_scene(
    truth: SceneTruth,
    prefix,
    view: Optional[ViewGeometry] = None,
    noisy_dsm: Optional[HeightRaster] = None,
) -> Dict[str, str]:
    """
    Write every truth raster of a scene under `prefix`.

    With a non-nadir `view`, the off-nadir rendering is also written under
    `<prefix>.offnadir`. A noisy DSM, if given, goes to `<prefix>.noisy.dsm.asc`.
    """
    written: Dict[str, str] = {}

    def put(key, raster, sub=None):
        path = output_path(prefix if sub is None else f"{prefix}.{sub}", key)
        save_raster(path, raster)
        written[key if sub is None else f"{sub}_{key}"] = str(path)

    scene_path = output_path(prefix, "scene")
    write_json(scene_path, truth.spec.to_dict())
    written["scene"] = str(scene_path)
    put("dsm", truth.dsm)
    put("dtm", truth.dtm)
    put("heightmap", truth.heightmap)
    put("rgb", truth.rgb)
    put("buildings", truth.buildings)
    written.update(save_segments(prefix, truth.segments, truth.segment_stats()))

    if noisy_dsm is not None:
        put("dsm", noisy_dsm, "noisy")
    if view is not None and not view.is_nadir:
        rendered = render_offnadir(truth, view)
        for key in ("heightmap", "rgb", "buildings", "occlusion"):
            put(key, rendered[key], OFFNADIR_TAG)
    logger.info(f"write_scene: {len(written)} files under {prefix}")
    return written


# ===================================================================
# CONFIG
# ===================================================================

@dataclass
class PipelineConfig:
    rgb: str
    buildings: str
    output_dir: str
    latitude: float
    heightmap: Optional[str] = None
    dsm: Optional[str] = None
    dtm: Optional[str] = None
    label_prefix: Optional[str] = None
    prefix: str = "run"
    view: ViewGeometry = field(default_factory=lambda: ViewGeometry(90.0, 0.0))
    spatial_resolution: float = DEFAULT_SPATIAL_RESOLUTION
    tile_size: int = DEFAULT_TILE_SIZE
    tile_overlap: int = DEFAULT_TILE_OVERLAP
    infill: bool = True
    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    samples_per_day: int = SAMPLES_PER_DAY
    irradiance: IrradianceModel = field(default_factory=IrradianceModel)
    panel: PanelSpec = field(default_factory=PanelSpec)
    capacity_cap_kw: float = CAPACITY_CAP_KW
    coverage_threshold: float = COVERAGE_THRESHOLD
    workers: int = DEFAULT_WORKERS
    pdf_report: bool = False
    config_path: Optional[str] = None

    @property
    def prefix_path(self) -> Path:
        return Path(self.output_dir) / self.prefix

    def to_dict(self) -> dict:
        """Snapshot in the config-file layout; parse_config(to_dict()) rebuilds it."""
        params = self.segmentation
        return {
            "inputs": {
                "rgb": self.rgb,
                "heightmap": self.heightmap,
                "dsm": self.dsm,
                "dtm": self.dtm,
                "buildings": self.buildings,
                "labels": self.label_prefix,
            },
            "view": {"elevation": self.view.elevation, "azimuth": self.view.azimuth},
            "latitude": self.latitude,
            "output_dir": str(self.output_dir),
            "prefix": self.prefix,
            "spatial_resolution": self.spatial_resolution,
            "tiling": {"tile_size": self.tile_size, "overlap": self.tile_overlap},
            "infill": self.infill,
            "segmentation": {
                "lambda": params.potts_lambda,
                "data_cost_cap_deg": params.data_cost_cap_deg,
                "passes": params.passes,
                "min_area_m2": params.min_area_m2,
                "backend": params.backend,
            },
            "flux": {
                "samples_per_day": self.samples_per_day,
                "dni": self.irradiance.direct_normal_irradiance,
                "diffuse": self.irradiance.diffuse_fraction,
            },
            "panel": asdict(self.panel),
            "capacity_cap_kw": self.capacity_cap_kw,
            "masking": {"coverage_threshold": self.coverage_threshold},
            "workers": self.workers,
            "pdf_report": self.pdf_report,
        }


class _Collector:
    """Reads typed values out of a config dict, collecting every violation."""

    def __init__(self):
        self.errors: List[str] = []

    def section(self, data: dict, key: str) -> dict:
        value = data.get(key, {})
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.errors.append(f"{key} must be an object, got {type(value).__name__}")
            return {}
        return value

    def number(self, section: dict, key: str, default, name: str, low=None, high=None,
               low_open=False, high_open=False, integer=False):
        value = section.get(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            self.errors.append(f"{name} must be a number, got {value!r}")
            return default
        try:
            number = float(value)
        except ValueError:
            self.errors.append(f"{name} must be a number, got {value!r}")
            return default
        if not math.isfinite(number):
            self.errors.append(f"{name} must be finite, got {value!r}")
            return default
        if integer:
            if not number.is_integer():
                self.errors.append(f"{name} must be an integer, got {value!r}")
                return default
            number = int(number)
        if low is not None and (number <= low if low_open else number < low):
            self.errors.append(f"{name} must be {'>' if low_open else '>='} {low}, got {number}")
        elif high is not None and (number >= high if high_open else number > high):
            self.errors.append(f"{name} must be {'<' if high_open else '<='} {high}, got {number}")
        return number

    def flag(self, data: dict, key: str, default: bool) -> bool:
        value = data.get(key, default)
        if not isinstance(value, bool):
            self.errors.append(f"{key} must be true or false, got {value!r}")
            return default
        return value

    def guarded(self, check, *args, **kwargs):
        """Run one of the shared validators, turning its error into a message."""
        try:
            return check(*args, **kwargs)
        except (GeometryError, RasterError) as e:
            self.errors.append(str(e))
            return None


def _resolve(value: str, base_dir: Optional[Path]) -> Path:
    path = Path(os.path.expanduser(str(value)))
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    return path


def _default_workers(collect: _Collector) -> int:
    raw = os.getenv("SATSOLAR_WORKERS")
    if raw is None:
        return DEFAULT_WORKERS
    return collect.number({"workers": raw}, "workers", DEFAULT_WORKERS, "SATSOLAR_WORKERS", low=1, integer=True)


def parse_config(data, base_dir: Optional[Path] = None) -> Tuple[Optional[PipelineConfig], List[str]]:
    """
    Build a PipelineConfig from a parsed JSON object.

    Relative paths resolve against `base_dir` (the config file's folder).

    Returns:
        (config, []) when valid, (None, every violation) otherwise
    """
    if not isinstance(data, dict):
        return None, ["config must be a JSON object"]
    collect = _Collector()
    errors = collect.errors
    for key in sorted(set(data) - _TOP_LEVEL_KEYS):
        errors.append(f"unknown config key '{key}'")

    # ----- inputs -----
    inputs = collect.section(data, "inputs")

    def input_path(key: str, required: bool) -> Optional[str]:
        value = inputs.get(key)
        if value in (None, ""):
            if required:
                errors.append(f"inputs.{key} is required")
            return None
        path = _resolve(value, base_dir)
        if not path.exists():
            errors.append(f"inputs.{key}: file not found: {path}")
        return str(path)

    rgb = input_path("rgb", True)
    buildings = input_path("buildings", True)
    heightmap = input_path("heightmap", False)
    dsm = input_path("dsm", False)
    dtm = input_path("dtm", False)
    if inputs.get("heightmap") in (None, "") and inputs.get("dsm") in (None, ""):
        errors.append("inputs.heightmap or inputs.dsm is required")
    elif heightmap is not None and dsm is not None:
        errors.append("give only one of inputs.heightmap and inputs.dsm")

    label_prefix = None
    if inputs.get("labels") not in (None, ""):
        label_prefix = str(_resolve(inputs["labels"], base_dir))
        if not output_path(label_prefix, "heightmap").exists():
            errors.append(f"inputs.labels: no {OUTPUT_SUFFIXES['heightmap']} under label prefix {label_prefix}")

    # ----- geometry -----
    view_section = collect.section(data, "view")
    elevation = collect.number(view_section, "elevation", 90.0, "view.elevation")
    azimuth = collect.number(view_section, "azimuth", 0.0, "view.azimuth")
    collect.guarded(check_elevation, elevation, name="view.elevation")

    latitude = None
    if "latitude" not in data:
        errors.append("latitude is required")
    else:
        latitude = collect.number(data, "latitude", None, "latitude")
        if latitude is not None:
            collect.guarded(check_latitude, latitude)

    output_dir = data.get("output_dir")
    if output_dir in (None, ""):
        errors.append("output_dir is required")
    else:
        output_dir = str(_resolve(output_dir, base_dir))
    prefix = data.get("prefix", "run")
    if not isinstance(prefix, str) or not prefix or "/" in prefix:
        errors.append(f"prefix must be a plain file name, got {prefix!r}")

    resolution = collect.number(data, "spatial_resolution", DEFAULT_SPATIAL_RESOLUTION, "spatial_resolution",
                                low=0, low_open=True)

    tiling = collect.section(data, "tiling")
    tile_size = collect.number(tiling, "tile_size", DEFAULT_TILE_SIZE, "tiling.tile_size", low=3, integer=True)
    overlap = collect.number(tiling, "overlap", DEFAULT_TILE_OVERLAP, "tiling.overlap", low=0, integer=True)
    if isinstance(tile_size, int) and isinstance(overlap, int) and overlap >= tile_size:
        errors.append(f"tiling.overlap must be < tiling.tile_size, got {overlap} >= {tile_size}")

    # ----- module parameters -----
    seg = collect.section(data, "segmentation")
    seg_values = {
        "lambda": collect.number(seg, "lambda", SegmentationParams.potts_lambda, "segmentation.lambda", low=0),
        "data_cost_cap_deg": collect.number(seg, "data_cost_cap_deg", SegmentationParams.data_cost_cap_deg,
                                            "segmentation.data_cost_cap_deg", low=0, high=180, low_open=True),
        "passes": collect.number(seg, "passes", SegmentationParams.passes, "segmentation.passes", low=1, integer=True),
        "min_area_m2": collect.number(seg, "min_area_m2", SegmentationParams.min_area_m2,
                                      "segmentation.min_area_m2", low=0),
        "backend": seg.get("backend"),
    }
    if seg_values["backend"] is not None and seg_values["backend"] not in MAXFLOW_BACKENDS:
        errors.append(f"segmentation.backend must be one of {MAXFLOW_BACKENDS}, got {seg_values['backend']!r}")

    flux = collect.section(data, "flux")
    samples_per_day = collect.number(flux, "samples_per_day", SAMPLES_PER_DAY, "flux.samples_per_day",
                                     low=1, integer=True)
    irradiance = collect.guarded(
        IrradianceModel,
        collect.number(flux, "dni", IrradianceModel.direct_normal_irradiance, "flux.dni", low=0),
        collect.number(flux, "diffuse", IrradianceModel.diffuse_fraction, "flux.diffuse",
                       low=0, high=1, high_open=True),
    )

    panel_section = collect.section(data, "panel")
    panel = collect.guarded(PanelSpec.from_dict, {
        key: collect.number(panel_section, key, getattr(PanelSpec, key), f"panel.{key}")
        for key in PanelSpec.__dataclass_fields__
    })

    cap_kw = collect.number(data, "capacity_cap_kw", CAPACITY_CAP_KW, "capacity_cap_kw", low=0, low_open=True)
    masking = collect.section(data, "masking")
    threshold = collect.number(masking, "coverage_threshold", COVERAGE_THRESHOLD, "masking.coverage_threshold",
                               low=0, high=1)
    workers = collect.number(data, "workers", _default_workers(collect), "workers", low=1, integer=True)
    infill = collect.flag(data, "infill", True)
    pdf_report = collect.flag(data, "pdf_report", False)

    if errors:
        return None, errors

    config = PipelineConfig(
        rgb=rgb,
        buildings=buildings,
        output_dir=output_dir,
        latitude=latitude,
        heightmap=heightmap,
        dsm=dsm,
        dtm=dtm,
        label_prefix=label_prefix,
        prefix=prefix,
        view=ViewGeometry(elevation, normalize_azimuth(azimuth)),
        spatial_resolution=resolution,
        tile_size=tile_size,
        tile_overlap=overlap,
        infill=infill,
        segmentation=SegmentationParams.from_dict(seg_values),
        samples_per_day=samples_per_day,
        irradiance=irradiance,
        panel=panel,
        capacity_cap_kw=cap_kw,
        coverage_threshold=threshold,
        workers=workers,
        pdf_report=pdf_report,
    )
    return config, []


def validate_config(path) -> Tuple[Optional[PipelineConfig], List[str]]:
    """
    Read and validate a JSON pipeline config.

    Returns:
        (config, []) when valid, (None, every violation) otherwise

    Raises:
        ConfigError: the file cannot be read or is not valid JSON
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError([f"cannot read config {path}: {e}"]) from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"{path} is not valid JSON: {e}"]) from e

    config, errors = parse_config(data, base_dir=path.parent)
    if config is not None:
        config.config_path = str(path)
    for error in errors:
        logger.warning(f"config {path}: {error}")
    return config, errors


# ===================================================================
# MANIFEST
# ===================================================================

@dataclass
class RunManifest:
    run_id: str
    config: dict
    config_path: Optional[str]
    output_dir: str
    versions: Dict[str, str]
    outputs: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    summary: Dict[str, object] = field(default_factory=dict)
    metrics: Optional[Dict[str, Optional[float]]] = None
    status: str = "running"
    failed_stage: Optional[str] = None
    wall_time_s: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})

    def warn(self, message: str) -> None:
        logger.warning(message)
        self.warnings.append(message)

    def missing_outputs(self) -> List[str]:
        return [key for key, path in self.outputs.items() if not Path(path).exists()]


def _versions() -> Dict[str, str]:
    return {
        "satsolar": APP_VERSION,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


@contextmanager
def _stage(manifest: RunManifest, name: str):
    """Time one stage; any failure becomes a StageError naming it."""
    logger.info(f"stage {name}: start")
    start = time.perf_counter()
    try:
        yield
    except Exception as e:
        manifest.timings[name] = round(time.perf_counter() - start, 4)
        manifest.failed_stage = name
        raise StageError(name, e) from e
    manifest.timings[name] = round(time.perf_counter() - start, 4)
    logger.info(f"stage {name}: done in {format_seconds(manifest.timings[name])}")


def _map(function, tasks: list, workers: int) -> list:
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(function, tasks))
    return [function(task) for task in tasks]


# ===================================================================
# PER-TILE WORK
# ===================================================================

def _reproject_tile(args) -> Dict[str, object]:
    heights, rgb, buildings, view = args
    result = reproject(heights, heights, view, "to_nadir")
    return {
        "heightmap": result.output,
        "rgb": reproject(rgb, heights, view, "to_nadir").output,
        "buildings": reproject(buildings, heights, view, "to_nadir").output,
        "occlusion": result.occlusion,
    }


def _infill_tile(args) -> Dict[str, object]:
    """Occluded heights drop to the terrain; occluded colour is diffused."""
    tile, infill_rgb = args
    occlusion = tile["occlusion"]
    ground = HeightRaster.full(occlusion.meta, 0.0)
    filled = dict(tile)
    filled["heightmap"] = infill_occlusions(tile["heightmap"], occlusion, fill=ground)
    if infill_rgb:
        filled["rgb"] = infill_occlusions(tile["rgb"], occlusion)
    return filled


# ===================================================================
# EVALUATION
# ===================================================================

def evaluate_prefixes(
    pred_prefix,
    label_prefix,
    masks: Optional[Sequence[EvalMask]] = None,
    cap_kw: float = CAPACITY_CAP_KW,
    spec: Optional[PanelSpec] = None,
    coverage_threshold: float = COVERAGE_THRESHOLD,
) -> MetricsReport:
    """
    Metrics of the outputs under `pred_prefix` against those under
    `label_prefix`.

    The given masks are ANDed into the evaluation mask. Masking variants
    (temporal mismatch between the two building rasters, label coverage)
    are reported alongside. MAPE needs placements under both prefixes.
    """
    pred_height = load_height(output_path(pred_prefix, "heightmap"))
    label_height = load_height(output_path(label_prefix, "heightmap"))
    pred_segments = load_instances(output_path(pred_prefix, "segments"), "roof_segments")
    label_segments = load_instances(output_path(label_prefix, "segments"), "roof_segments")
    pred_stats = load_stats(output_path(pred_prefix, "segment_stats"))
    label_stats = load_stats(output_path(label_prefix, "segment_stats"))

    def optional(prefix, key, loader):
        path = output_path(prefix, key)
        return loader(path) if path.exists() else None

    pred_buildings = optional(pred_prefix, "buildings", lambda p: load_instances(p, "buildings"))
    label_buildings = optional(label_prefix, "buildings", lambda p: load_instances(p, "buildings"))
    buildings = label_buildings if label_buildings is not None else pred_buildings
    if buildings is None:
        raise RasterError(f"no {OUTPUT_SUFFIXES['buildings']} under {label_prefix} or {pred_prefix}")

    base = combine_masks(masks) if masks else None
    mismatch = None
    if pred_buildings is not None and label_buildings is not None:
        mismatch = temporal_mismatch_mask(pred_buildings, label_buildings)
    coverage = None
    if label_buildings is not None:
        coverage = coverage_mask(label_buildings, label_segments, coverage_threshold)
    variants = mask_variants(pred_height.meta, mismatch, coverage, base)

    pred_placements = optional(pred_prefix, "placements", load_placements)
    label_placements = optional(label_prefix, "placements", load_placements)

    report = build_report(
        pred_height,
        label_height,
        buildings,
        pred_segments,
        label_segments,
        pred_stats,
        label_stats,
        mask=base,
        pred_placements=pred_placements,
        label_placements=label_placements,
        variants=variants,
        cap_kw=cap_kw,
        spec=spec,
    )
    if pred_placements is None or label_placements is None:
        report.warnings.append("panel placements missing under one prefix; MAPE not computed")
    return report


# ===================================================================
# RUN
# ===================================================================

def run_pipeline(config: PipelineConfig) -> RunManifest:
    """
    Execute every stage of a validated config.

    Returns:
        RunManifest of the successful run (also written as
        <prefix>.manifest.json and recorded in the run registry)

    Raises:
        StageError: naming the failed stage; outputs written so far are kept
            and the manifest is written with status "failed"
    """
    start = time.perf_counter()
    Path(config.output_dir).mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        run_id=persistence.generate_run_id(config.config_path),
        config=config.to_dict(),
        config_path=config.config_path,
        output_dir=str(config.output_dir),
        versions=_versions(),
    )
    logger.info(f"run {manifest.run_id}: output under {config.prefix_path}")

    try:
        _run_stages(config, manifest, start)
    except StageError as e:
        manifest.status = FAILED
        logger.error(f"run {manifest.run_id} failed: {e}")
        raise
    finally:
        manifest.wall_time_s = round(time.perf_counter() - start, 4)
        manifest_path = output_path(config.prefix_path, "manifest")
        manifest.outputs["manifest"] = str(manifest_path)
        write_json(manifest_path, manifest.to_dict())
        persistence.save_run(manifest)

    logger.info(f"run {manifest.run_id} finished in {format_seconds(manifest.wall_time_s)}")
    return manifest


def _run_stages(config: PipelineConfig, manifest: RunManifest, start: float) -> None:
    prefix = config.prefix_path

    def out(key: str) -> Path:
        path = output_path(prefix, key)
        manifest.outputs[key] = str(path)
        return path

    # ----- load -----
    with _stage(manifest, "load"):
        backend = resolve_backend(config.segmentation.backend)
        manifest.versions["maxflow_backend"] = backend
        params = replace(config.segmentation, backend=backend)

        surface = load_height(config.heightmap or config.dsm)
        grid = surface.meta
        rgb = load_color_png(config.rgb, meta=grid)
        buildings = load_instances(config.buildings, "buildings")
        if buildings.meta != grid:
            if buildings.meta.shape != grid.shape:
                raise RasterError(f"buildings grid {buildings.meta.shape} does not match heights grid {grid.shape}")
            manifest.warn("buildings metadata differs from the height grid; using the height grid")
            buildings = InstanceMap(grid, buildings.ids, "buildings")
        terrain = load_height(config.dtm) if config.dtm else None
        if not math.isclose(grid.spatial_resolution, config.spatial_resolution):
            manifest.warn(
                f"input resolution {grid.spatial_resolution} m differs from configured "
                f"{config.spatial_resolution} m"
            )

    # ----- terrain -----
    with _stage(manifest, "terrain"):
        if terrain is None:
            dtm = HeightRaster.full(grid, 0.0)
            if config.dsm:
                manifest.warn("no terrain model given; DSM values are used as heights above ground")
        elif terrain.meta != grid:
            logger.info(f"resampling terrain from {terrain.meta.spatial_resolution} m to {grid.spatial_resolution} m")
            dtm = resample_bilinear(terrain, grid)
        else:
            dtm = terrain
        if not dtm.all_valid:
            manifest.warn(f"terrain model misses {int((~dtm.valid).sum())} pixels of the grid")
        heightmap = surface if config.heightmap else heightmap_from_dsm(surface, dtm)
        save_height(out("dtm"), dtm)

    # ----- reproject / infill / stitch -----
    with _stage(manifest, "reproject"):
        windows = split_tiles(grid.shape, config.tile_size, config.tile_overlap)
        manifest.summary["tile_count"] = len(windows)
        if len(windows) > 1:
            logger.info(f"processing {len(windows)} tiles of {config.tile_size} px (overlap {config.tile_overlap})")
        tasks = [
            (extract_tile(heightmap, *w), extract_tile(rgb, *w), extract_tile(buildings, *w), config.view)
            for w in windows
        ]
        nadir = _map(_reproject_tile, tasks, config.workers)

    with _stage(manifest, "infill"):
        nadir = _map(_infill_tile, [(tile, config.infill) for tile in nadir], config.workers)

    with _stage(manifest, "stitch"):
        margin = config.tile_overlap // 2

        def mosaic(key):
            placed = [TilePlacement(tile[key], w[0], w[1], margin) for tile, w in zip(nadir, windows)]
            return stitch(placed, grid)

        nadir_heightmap = mosaic("heightmap")
        nadir_rgb = mosaic("rgb")
        nadir_buildings = mosaic("buildings")
        occlusion = mosaic("occlusion")
        dsm = compose_dsm(nadir_heightmap, dtm)

        save_height(out("heightmap"), nadir_heightmap)
        save_height(out("dsm"), dsm)
        save_color_png(out("rgb"), nadir_rgb)
        save_instances(out("buildings"), nadir_buildings)
        save_mask(out("occlusion"), occlusion)
        save_gray_png(out("hillshade"), hillshade(dsm))

        occluded = float(occlusion.values.mean())
        manifest.summary["occluded_fraction"] = occluded
        if occluded > 0:
            manifest.warn(f"{format_percentage(occluded)} of nadir pixels are occluded and excluded from evaluation")

    # ----- segment -----
    with _stage(manifest, "segment"):
        energy_log: Dict[int, List[float]] = {}
        segments, stats = segment_roofs(dsm, nadir_buildings, params, workers=config.workers, energy_log=energy_log)
        for key, path in save_segments(prefix, segments, stats).items():
            manifest.outputs[key] = path
        for building_id, trace in energy_log.items():
            logger.debug(f"building {building_id}: expansion energies {trace}")
        for building_id, fraction in coverage_fraction(nadir_buildings, segments).items():
            if fraction == 0:
                manifest.warn(f"building {building_id} has no roof segments")

    # ----- flux -----
    with _stage(manifest, "flux"):
        normals = surface_normals(dsm)
        suns = sun_positions(config.latitude, config.samples_per_day)
        flux = annual_flux(dsm, normals, suns, config.irradiance, workers=config.workers)
        save_height(out("flux"), flux)
        save_flux_png(out("flux_png"), flux)

    # ----- panels -----
    with _stage(manifest, "panels"):
        placements = place_panels(segments, stats, flux, config.panel)
        save_placements(out("placements"), placements)
        render_overlay(out("overlay"), nadir_rgb, [p.footprint for p in placements], segments)
        summary = building_flux_summary(
            nadir_buildings, segments, flux, placements, config.capacity_cap_kw, config.panel
        )
        summary.to_csv(out("building_summary"), index=False)

        capped = building_energy(placements, config.capacity_cap_kw, config.panel)
        for building_id, energy in sorted(capped.items()):
            logger.debug(f"building {building_id}: {energy:.1f} kWh/yr at {config.capacity_cap_kw:g} kW")
        manifest.summary.update({
            "building_count": int(nadir_buildings.instance_ids().size),
            "segment_count": len(stats),
            "panel_count": len(placements),
            "total_energy_kwh": float(sum(building_energy(placements, None, config.panel).values())),
            "total_energy_5kw_kwh": float(sum(capped.values())),
        })

    # ----- evaluate -----
    if config.label_prefix:
        with _stage(manifest, "evaluate"):
            report = evaluate_prefixes(
                prefix,
                config.label_prefix,
                [EvalMask.excluding(occlusion)],
                config.capacity_cap_kw,
                config.panel,
                config.coverage_threshold,
            )
            write_json(out("report"), report.to_dict())
            manifest.metrics = {key: getattr(report, key) for key in _HEADLINE_METRICS}
            manifest.warnings.extend(report.warnings)

    # ----- report -----
    manifest.status = SUCCEEDED
    if config.pdf_report:
        with _stage(manifest, "report"):
            manifest.wall_time_s = round(time.perf_counter() - start, 4)
            buffer = generate_run_pdf(manifest, manifest.outputs.get("hillshade"))
            out("pdf").write_bytes(buffer.getvalue())


def load_manifest(path) -> RunManifest:
    return RunManifest.from_dict(read_json(path))


# ===================================================================
# STITCH MANIFESTS
# ===================================================================

def stitch_from_manifest(path):
    """
    Mosaic the tiles listed in a JSON tile manifest:

        {"mosaic": <GridMeta>, "kind": "height", "margin": 64,
         "tiles": [{"path": "t0.asc", "row_offset": 0, "col_offset": 0}, ...]}

    Tile paths are relative to the manifest.
    """
    path = Path(path)
    data = read_json(path)
    kind = data.get("kind", "height")
    mosaic_meta = GridMeta.from_dict(data["mosaic"])
    margin = int(data.get("margin", DEFAULT_TILE_OVERLAP // 2))
    tiles = []
    for entry in data["tiles"]:
        tile_path = _resolve(entry["path"], path.parent)
        row, col = int(entry["row_offset"]), int(entry["col_offset"])
        raster = load_raster(tile_path, kind)
        tiles.append(TilePlacement(raster, row, col, margin))
    return stitch(tiles, mosaic_meta)
