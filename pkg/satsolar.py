# satsolar.py
"""
satsolar - rooftop solar potential from satellite-style rasters.

Command-line entry point. Each subcommand runs one pipeline step on files;
`run` executes the whole chain from a JSON config.

    synth       render a synthetic scene (truth rasters, optional off-nadir view)
    reproject   move a raster between off-nadir and nadir views
    compose-dsm heightmap + terrain -> DSM (or DSM - terrain -> heightmap)
    segment     graph-cut roof segmentation
    mask        evaluation masks (temporal mismatch, segment coverage)
    flux        annual solar flux
    panels      panel layout and building energy
    stitch      mosaic overlapping tiles
    evaluate    metrics of one output prefix against another
    hillshade   grayscale rendering of a height raster
    run         the full pipeline from a config file
    validate    check a config file without running it
    history     recent runs from the run registry

Exit codes: 0 success, 1 usage or config error, 2 stage failure.
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from modules import persistence
from modules.masking import EvalMask, coverage_mask, temporal_mismatch_mask
from modules.panel_placement import PanelSpec, building_flux_summary, place_panels
from modules.pipeline import (
    RASTER_KINDS,
    evaluate_prefixes,
    guess_kind,
    load_placements,
    load_raster,
    load_stats,
    output_path,
    run_pipeline,
    save_placements,
    save_raster,
    save_segments,
    stitch_from_manifest,
    validate_config,
    write_scene,
)
from modules.raster_io import (
    load_color_png,
    load_flux,
    load_height,
    load_instances,
    load_mask,
    read_json,
    render_overlay,
    save_flux_png,
    save_gray_png,
    save_height,
    write_json,
    write_ascii_grid,
)
from modules.raster_ops import compose_dsm, heightmap_from_dsm, hillshade, resample_bilinear, surface_normals
from modules.reprojection import ViewGeometry, reproject, reproject_with_sides
from modules.roof_segmentation import SegmentationParams, segment_roofs
from modules.solar_flux import IrradianceModel, annual_flux, sun_positions
from modules.synth_scene import SceneSpec, example_scene, perturb, random_scene, render_scene
from utils.constants import (
    APP_NAME,
    APP_VERSION,
    CAPACITY_CAP_KW,
    COVERAGE_THRESHOLD,
    DATA_COST_CAP_DEG,
    DEFAULT_SPATIAL_RESOLUTION,
    DEFAULT_WORKERS,
    DIFFUSE_FRACTION,
    DIRECT_NORMAL_IRRADIANCE,
    EXIT_OK,
    EXIT_STAGE_FAILURE,
    EXIT_USAGE,
    EXPANSION_PASSES,
    HILLSHADE_DEFAULT_AZIMUTH,
    HILLSHADE_DEFAULT_ELEVATION,
    MAXFLOW_BACKENDS,
    MIN_SEGMENT_AREA_M2,
    PANEL_SPEC,
    POTTS_LAMBDA,
    SAMPLES_PER_DAY,
)
from utils.errors import ConfigError, GeometryError, SatSolarError, StageError
from utils.formatting import format_kwh, format_meters, format_percentage

logger = logging.getLogger(__name__)

CONFIG_HELP = f"""
config file (JSON); every key except inputs.rgb, inputs.buildings, one of
inputs.heightmap / inputs.dsm, latitude and output_dir has a default:

  inputs.dtm                   terrain raster, resampled to the grid if needed
  inputs.labels                label prefix to evaluate against
  view.elevation / .azimuth    satellite view (90 / 0 = nadir)
  prefix                       output file prefix ("run")
  spatial_resolution           expected metres per pixel ({DEFAULT_SPATIAL_RESOLUTION})
  tiling.tile_size / .overlap  1024 / 128 pixels
  infill                       diffuse occluded RGB pixels (true)
  segmentation.lambda          Potts weight ({POTTS_LAMBDA})
  segmentation.data_cost_cap_deg, .passes, .min_area_m2, .backend
                               {DATA_COST_CAP_DEG}, {EXPANSION_PASSES}, {MIN_SEGMENT_AREA_M2}, auto
  flux.samples_per_day / .dni / .diffuse   {SAMPLES_PER_DAY} / {DIRECT_NORMAL_IRRADIANCE} / {DIFFUSE_FRACTION}
  panel.length_m, .width_m, .rated_power_w, .efficiency, .performance_ratio
  capacity_cap_kw              {CAPACITY_CAP_KW}
  masking.coverage_threshold   {COVERAGE_THRESHOLD}
  workers                      $SATSOLAR_WORKERS or {DEFAULT_WORKERS}
  pdf_report                   false
"""


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with EXIT_USAGE."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env_workers() -> int:
    try:
        return max(1, int(os.getenv("SATSOLAR_WORKERS", DEFAULT_WORKERS)))
    except ValueError:
        return DEFAULT_WORKERS


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )


# ===================================================================
# SUBCOMMANDS
# ===================================================================

def cmd_synth(args) -> int:
    if args.spec:
        spec = SceneSpec.from_dict(read_json(args.spec))
    elif args.random is not None:
        spec = random_scene(args.random, size=args.size, resolution=args.resolution)
    else:
        spec = example_scene(size=args.size, resolution=args.resolution)
    truth = render_scene(spec)
    noisy = perturb(truth, args.noise, args.seed) if args.noise > 0 else None
    view = ViewGeometry(args.view_elevation, args.view_azimuth)
    written = write_scene(truth, args.out_prefix, view=view, noisy_dsm=noisy)
    print(f"Wrote {len(written)} files under {args.out_prefix} ({len(spec.buildings)} buildings, {len(truth.faces)} roof faces)")
    return EXIT_OK


def cmd_reproject(args) -> int:
    view = ViewGeometry(args.elevation, args.azimuth)
    direction = args.direction.replace("-", "_")
    heights = load_height(args.heights)
    kind = args.kind or guess_kind(args.input)
    values = load_raster(args.input, kind, meta=heights.meta if kind == "rgb" else None)
    if args.with_sides:
        result = reproject_with_sides(heights, view, values=values, direction=direction)
    else:
        result = reproject(values, heights, view, direction)

    extension = "png" if kind == "rgb" else "asc"
    save_raster(f"{args.out_prefix}.out.{extension}", result.output)
    save_raster(output_path(args.out_prefix, "occlusion"), result.occlusion)
    write_ascii_grid(output_path(args.out_prefix, "provenance"), heights.meta, result.provenance, integer=True)
    print(f"Reprojected {args.input} {direction}: {format_percentage(result.occluded_fraction)} occluded")
    return EXIT_OK


def cmd_compose_dsm(args) -> int:
    terrain = load_height(args.terrain)
    if args.heightmap:
        surface = load_height(args.heightmap)
    else:
        surface = load_height(args.dsm)
    if terrain.meta != surface.meta:
        terrain = resample_bilinear(terrain, surface.meta)
    result = compose_dsm(surface, terrain) if args.heightmap else heightmap_from_dsm(surface, terrain)
    save_height(args.out, result)
    print(f"Wrote {args.out}")
    return EXIT_OK


def cmd_segment(args) -> int:
    dsm = load_height(args.dsm)
    buildings = load_instances(args.buildings, "buildings")
    params = SegmentationParams(
        potts_lambda=args.potts_lambda,
        passes=args.passes,
        min_area_m2=args.min_area,
        backend=args.backend,
    )
    segments, stats = segment_roofs(dsm, buildings, params, workers=args.workers)
    save_segments(args.out_prefix, segments, stats)
    print(f"Segmented {len(buildings.instance_ids())} buildings into {len(stats)} roof segments")
    return EXIT_OK


def cmd_mask(args) -> int:
    if args.scheme == "mismatch":
        mask = temporal_mismatch_mask(load_instances(args.a), load_instances(args.b))
    else:
        mask = coverage_mask(
            load_instances(args.buildings),
            load_instances(args.segments, "roof_segments"),
            args.threshold,
        )
    save_raster(args.out, mask)
    print(f"Wrote {args.out}: {format_percentage(mask.included_fraction)} of pixels included")
    return EXIT_OK


def cmd_flux(args) -> int:
    dsm = load_height(args.dsm)
    suns = sun_positions(args.lat, args.samples_per_day)
    model = IrradianceModel(args.dni, args.diffuse)
    flux = annual_flux(dsm, surface_normals(dsm), suns, model, workers=args.workers)
    save_height(output_path(args.out_prefix, "flux"), flux)
    save_flux_png(output_path(args.out_prefix, "flux_png"), flux)
    print(f"Flux over {len(suns)} sun samples, peak {format_kwh(float(flux.values.max()))}/m2/yr")
    return EXIT_OK


def panel_spec_from_args(args) -> PanelSpec:
    """Panel geometry and ratings from the `panels` flags; bad values are usage errors."""
    errors = []
    if not args.cap_kw > 0:
        errors.append(f"--cap-kw must be > 0, got {args.cap_kw}")
    try:
        spec = PanelSpec(
            length_m=args.panel_length,
            width_m=args.panel_width,
            rated_power_w=args.rated_power,
            efficiency=args.efficiency,
            performance_ratio=args.performance_ratio,
        )
    except GeometryError as e:
        errors.append(str(e))
    if errors:
        raise ConfigError(errors)
    return spec


def cmd_panels(args) -> int:
    spec = panel_spec_from_args(args)
    segments = load_instances(args.segments, "roof_segments")
    stats = load_stats(args.stats)
    flux = load_flux(args.flux)
    placements = place_panels(segments, stats, flux, spec)
    save_placements(output_path(args.out_prefix, "placements"), placements)
    if args.rgb:
        background = load_color_png(args.rgb, meta=segments.meta)
        render_overlay(output_path(args.out_prefix, "overlay"), background, [p.footprint for p in placements], segments)
    if args.buildings:
        summary = building_flux_summary(load_instances(args.buildings), segments, flux, placements, args.cap_kw, spec)
        summary.to_csv(output_path(args.out_prefix, "building_summary"), index=False)
    total = sum(p.annual_energy_kwh for p in placements)
    print(f"Placed {len(placements)} panels, {format_kwh(total)}/yr in total")
    return EXIT_OK


def cmd_stitch(args) -> int:
    mosaic = stitch_from_manifest(args.tiles)
    save_raster(args.out, mosaic)
    print(f"Wrote {args.out} ({mosaic.meta.height}x{mosaic.meta.width})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    masks = []
    for path in args.masks or []:
        raster = load_mask(path)
        masks.append(EvalMask(raster.meta, raster.values))
    report = evaluate_prefixes(args.pred_prefix, args.label_prefix, masks, cap_kw=args.cap_kw)
    write_json(args.out, report.to_dict())
    print(report.summary_table().to_string(index=False))
    for warning in report.warnings:
        print(f"warning: {warning}")
    return EXIT_OK


def cmd_hillshade(args) -> int:
    shade = hillshade(load_height(args.dsm), args.elevation, args.azimuth)
    save_gray_png(args.out, shade)
    print(f"Wrote {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    config, errors = validate_config(args.config)
    if errors:
        for error in errors:
            print(f"config error: {error}", file=sys.stderr)
        return EXIT_USAGE
    if args.workers is not None:
        config.workers = args.workers
    manifest = run_pipeline(config)
    summary = manifest.summary
    print(f"Run {manifest.run_id} {manifest.status}: {summary.get('building_count', 0)} buildings, "
          f"{summary.get('panel_count', 0)} panels, {format_kwh(summary.get('total_energy_kwh'))}/yr")
    if manifest.metrics:
        print(f"Building MAE {format_meters(manifest.metrics.get('building_mae_m'))}, "
              f"segment IoU {format_percentage(manifest.metrics.get('segment_iou_fraction'))}")
    print(f"Manifest: {manifest.outputs['manifest']}")
    return EXIT_OK


def cmd_validate(args) -> int:
    config, errors = validate_config(args.config)
    if errors:
        for error in errors:
            print(f"config error: {error}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(config.to_dict(), indent=2))
    return EXIT_OK


def cmd_history(args) -> int:
    runs = persistence.list_runs(args.limit)
    if runs.empty:
        print("No runs recorded")
        return EXIT_OK
    print(runs.to_string(index=False))

    stats = persistence.run_statistics()
    if stats:
        by_status = ", ".join(f"{status} {count}" for status, count in sorted(stats["by_status"].items()))
        print(f"\n{stats['total_runs']} runs recorded ({by_status})")
        if stats["avg_wall_time_s"] is not None:
            print(f"Mean wall time of successful runs: {stats['avg_wall_time_s']:.2f} s")
    return EXIT_OK


# ===================================================================
# PARSER
# ===================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog=APP_NAME,
        description="Rooftop solar potential from satellite-style rasters.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    parser.add_argument("--log-level", default=os.getenv("SATSOLAR_LOG_LEVEL", "INFO"),
                        help="logging level (default: $SATSOLAR_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render a synthetic scene")
    source = p.add_mutually_exclusive_group()
    source.add_argument("--spec", help="SceneSpec JSON")
    source.add_argument("--example", action="store_true", help="the built-in example scene (default)")
    source.add_argument("--random", type=int, metavar="SEED", help="random scene from a seed")
    p.add_argument("--size", type=int, default=128, help="pixels per side for generated scenes")
    p.add_argument("--resolution", type=float, default=DEFAULT_SPATIAL_RESOLUTION)
    p.add_argument("--noise", type=float, default=0.0, help="DSM noise sigma in metres")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--view-elevation", type=float, default=90.0)
    p.add_argument("--view-azimuth", type=float, default=0.0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("reproject", help="reproject a raster between views")
    p.add_argument("--elevation", type=float, required=True)
    p.add_argument("--azimuth", type=float, required=True)
    p.add_argument("--direction", choices=["to-nadir", "to-offnadir"], default="to-nadir")
    p.add_argument("--heights", required=True, help="height above terrain (.asc) in the source frame")
    p.add_argument("--input", required=True, help="raster to move (.asc or .png)")
    p.add_argument("--kind", choices=RASTER_KINDS, help="raster kind (default: by extension)")
    p.add_argument("--with-sides", action="store_true", help="fill building walls with the 1 m height ladder")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_reproject)

    p = sub.add_parser("compose-dsm", help="heightmap + terrain -> DSM, or DSM - terrain -> heightmap")
    surface = p.add_mutually_exclusive_group(required=True)
    surface.add_argument("--heightmap")
    surface.add_argument("--dsm")
    p.add_argument("--terrain", required=True, help="DTM or coarse DEM (.asc)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compose_dsm)

    p = sub.add_parser("segment", help="graph-cut roof segmentation")
    p.add_argument("--dsm", required=True)
    p.add_argument("--buildings", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--lambda", dest="potts_lambda", type=float, default=POTTS_LAMBDA)
    p.add_argument("--min-area", type=float, default=MIN_SEGMENT_AREA_M2)
    p.add_argument("--passes", type=int, default=EXPANSION_PASSES)
    p.add_argument("--backend", choices=MAXFLOW_BACKENDS, default=None)
    p.add_argument("--workers", type=int, default=_env_workers())
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("mask", help="evaluation masks")
    schemes = p.add_subparsers(dest="scheme", required=True, parser_class=_Parser)
    m = schemes.add_parser("mismatch", help="exclude pixels where two building rasters disagree")
    m.add_argument("--a", required=True)
    m.add_argument("--b", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mask)
    m = schemes.add_parser("coverage", help="exclude buildings poorly covered by roof segments")
    m.add_argument("--buildings", required=True)
    m.add_argument("--segments", required=True)
    m.add_argument("--threshold", type=float, default=COVERAGE_THRESHOLD)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mask)

    p = sub.add_parser("flux", help="annual solar flux")
    p.add_argument("--dsm", required=True)
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--dni", type=float, default=DIRECT_NORMAL_IRRADIANCE)
    p.add_argument("--diffuse", type=float, default=DIFFUSE_FRACTION)
    p.add_argument("--samples-per-day", type=int, default=SAMPLES_PER_DAY)
    p.add_argument("--workers", type=int, default=_env_workers())
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_flux)

    p = sub.add_parser("panels", help="panel layout and building energy")
    p.add_argument("--segments", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--flux", required=True)
    p.add_argument("--rgb", help="draw the layout over this image")
    p.add_argument("--buildings", help="also write the per-building summary CSV")
    p.add_argument("--cap-kw", type=float, default=CAPACITY_CAP_KW)
    p.add_argument("--panel-length", type=float, default=PANEL_SPEC["length_m"], help="metres")
    p.add_argument("--panel-width", type=float, default=PANEL_SPEC["width_m"], help="metres")
    p.add_argument("--rated-power", type=float, default=PANEL_SPEC["rated_power_w"], help="watts per panel")
    p.add_argument("--efficiency", type=float, default=PANEL_SPEC["efficiency"])
    p.add_argument("--performance-ratio", type=float, default=PANEL_SPEC["performance_ratio"])
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_panels)

    p = sub.add_parser("stitch", help="mosaic overlapping tiles")
    p.add_argument("--tiles", required=True, help="tile manifest JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("evaluate", help="metrics against a label prefix")
    p.add_argument("--pred-prefix", required=True)
    p.add_argument("--label-prefix", required=True)
    p.add_argument("--masks", nargs="*", help="0/1 include masks (.asc)")
    p.add_argument("--cap-kw", type=float, default=CAPACITY_CAP_KW)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("hillshade", help="grayscale hillshade PNG")
    p.add_argument("--dsm", required=True)
    p.add_argument("--elevation", type=float, default=HILLSHADE_DEFAULT_ELEVATION)
    p.add_argument("--azimuth", type=float, default=HILLSHADE_DEFAULT_AZIMUTH)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_hillshade)

    p = sub.add_parser("run", help="full pipeline from a config",
                       epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=None, help="override the config's worker count")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a config file",
                       epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("history", help="recent runs")
    p.add_argument("--limit", type=int, default=20)
    p.set_defaults(func=cmd_history)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        return args.func(args)
    except ConfigError as e:
        for error in e.errors:
            print(f"config error: {error}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as e:
        logger.error(f"{e} (cause: {type(e.cause).__name__})")
        return EXIT_STAGE_FAILURE
    except (SatSolarError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_STAGE_FAILURE


if __name__ == "__main__":
    sys.exit(main())
