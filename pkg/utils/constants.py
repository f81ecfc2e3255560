# utils/constants.py
"""
Global constants for the satsolar raster pipeline.

Every tunable default used by the modules lives here so the pipeline config
and the CLI `--help` texts read from one place.
"""

APP_NAME = "satsolar"
APP_VERSION = "0.4.0"

# ===================================================================
# RASTER CORE
# ===================================================================

DEFAULT_SPATIAL_RESOLUTION = 0.25   # metres / pixel
ASCII_NODATA_VALUE = -9999.0
ASCII_FLOAT_FORMAT = "%.17g"        # round-trips float64 exactly

# Near-flat pixels have no meaningful fall-line direction
FLAT_PITCH_THRESHOLD_DEG = 0.5
UNIT_NORMAL_TOLERANCE = 1e-6

HILLSHADE_DEFAULT_ELEVATION = 45.0
HILLSHADE_DEFAULT_AZIMUTH = 315.0

# ===================================================================
# REPROJECTION & INFILL
# ===================================================================

WALL_LADDER_STEP_M = 1.0

INFILL_MAX_ITERATIONS = 500
INFILL_TOLERANCE = 0.5              # intensity units
INFILL_BLUR_SIZE = 5                # box blur (pixels), applied to filled pixels only

# ===================================================================
# ROOF SEGMENTATION (graph cut)
# ===================================================================

LABEL_PITCHES_DEG = (10.0, 20.0, 30.0, 40.0, 50.0)
LABEL_AZIMUTH_STEP_DEG = 30.0
DATA_COST_CAP_DEG = 60.0
POTTS_LAMBDA = 15.0
EXPANSION_PASSES = 2
MIN_SEGMENT_AREA_M2 = 2.0

MAXFLOW_BACKENDS = ("auto", "dinic", "pymaxflow")
DEFAULT_MAXFLOW_BACKEND = "auto"

# ===================================================================
# CONSISTENCY MASKING
# ===================================================================

COVERAGE_THRESHOLD = 0.5            # strict less-than excludes the building

# ===================================================================
# SOLAR FLUX
# ===================================================================

SAMPLES_PER_DAY = 24
SAMPLE_DAY_OF_MONTH = 15
MAX_ABS_LATITUDE = 66.0
DAYS_IN_MONTH = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)

DIRECT_NORMAL_IRRADIANCE = 1000.0   # W/m^2
DIFFUSE_FRACTION = 0.0

RAY_STEP_FRACTION = 0.5             # march step as a fraction of the pixel size
RAY_MAX_DISTANCE_M = 100.0
RAY_TOLERANCE_M = 1e-3

FLUX_COLORMAP = "inferno"

# ===================================================================
# PANEL PLACEMENT
# ===================================================================

PANEL_SPEC = {
    "length_m": 1.65,
    "width_m": 0.99,
    "rated_power_w": 400.0,
    "efficiency": 0.20,
    "performance_ratio": 0.85,
}

CAPACITY_CAP_KW = 5.0
FOOTPRINT_EPSILON_M = 1e-6

# ===================================================================
# TILING & STITCHING
# ===================================================================

DEFAULT_TILE_SIZE = 1024
DEFAULT_TILE_OVERLAP = 128

# ===================================================================
# PIPELINE
# ===================================================================

DEFAULT_WORKERS = 1
DEFAULT_DB_PATH = "data/satsolar_runs.db"

# Output file suffixes written under a prefix P (P.<suffix>)
OUTPUT_SUFFIXES = {
    "heightmap": "heightmap.asc",
    "dsm": "dsm.asc",
    "dtm": "dtm.asc",
    "rgb": "rgb.png",
    "buildings": "buildings.asc",
    "segments": "segments.asc",
    "segment_stats": "segments.json",
    "segment_table": "segments.csv",
    "occlusion": "occlusion.asc",
    "flux": "flux.asc",
    "flux_png": "flux.png",
    "placements": "placements.json",
    "overlay": "overlay.png",
    "building_summary": "buildings.csv",
    "hillshade": "hillshade.png",
    "report": "report.json",
    "manifest": "manifest.json",
    "pdf": "report.pdf",
    "scene": "scene.json",
    "provenance": "provenance.asc",
}

# Off-nadir renderings written by `synth` when a view is given
OFFNADIR_TAG = "offnadir"

SUCCEEDED = "succeeded"
FAILED = "failed"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STAGE_FAILURE = 2
