# modules/solar_flux.py
"""
Annual rooftop solar flux over a DSM.

Sun geometry: monthly representative days (the 15th) sampled at
mid-interval solar times. Shading: rays are marched from each pixel toward
the sun over the DSM with bilinear sampling. Irradiance: clear sky with a
constant direct normal irradiance plus an optional isotropic diffuse term.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from modules.raster_ops import sun_vector
from modules.rasters import FluxRaster, HeightRaster, NormalField
from utils.constants import (
    DAYS_IN_MONTH,
    DIFFUSE_FRACTION,
    DIRECT_NORMAL_IRRADIANCE,
    RAY_MAX_DISTANCE_M,
    RAY_STEP_FRACTION,
    RAY_TOLERANCE_M,
    SAMPLE_DAY_OF_MONTH,
    SAMPLES_PER_DAY,
)
from utils.errors import GeometryError, RasterError
from utils.validators import check_latitude, check_same_meta

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SunSample:
    elevation: float
    azimuth: float
    weight_hours: float

    def __post_init__(self):
        if not self.weight_hours > 0:
            raise GeometryError(f"weight_hours must be > 0, got {self.weight_hours}")
        if not 0.0 < self.elevation <= 90.0:
            raise GeometryError(f"sun elevation must be in (0, 90], got {self.elevation}")

    @property
    def vector(self) -> np.ndarray:
        return sun_vector(self.elevation, self.azimuth)


@dataclass(frozen=True)
class IrradianceModel:
    direct_normal_irradiance: float = DIRECT_NORMAL_IRRADIANCE
    diffuse_fraction: float = DIFFUSE_FRACTION

    def __post_init__(self):
        if self.direct_normal_irradiance < 0:
            raise GeometryError(f"direct_normal_irradiance must be >= 0, got {self.direct_normal_irradiance}")
        if not 0.0 <= self.diffuse_fraction < 1.0:
            raise GeometryError(f"diffuse_fraction must be in [0, 1), got {self.diffuse_fraction}")


# ===================================================================
# SUN GEOMETRY
# ===================================================================

def declination(day_of_year: float) -> float:
    """Solar declination in degrees (Cooper's approximation)."""
    return 23.45 * math.sin(math.radians(360.0 * (284.0 + day_of_year) / 365.0))


def solar_position(latitude: float, day_of_year: float, solar_hour: float) -> Tuple[float, float]:
    """
    Sun elevation and compass azimuth at a local solar time.

    Args:
        latitude: degrees, positive north
        day_of_year: 1..365
        solar_hour: local solar time in hours (12 = solar noon)

    Returns:
        (elevation_deg, azimuth_deg); azimuth is 180 when the sun is at zenith
    """
    phi = math.radians(latitude)
    delta = math.radians(declination(day_of_year))
    hour_angle = 15.0 * (solar_hour - 12.0)
    h = math.radians(hour_angle)

    sin_e = math.sin(phi) * math.sin(delta) + math.cos(phi) * math.cos(delta) * math.cos(h)
    sin_e = max(-1.0, min(1.0, sin_e))
    elevation = math.degrees(math.asin(sin_e))

    cos_e = math.cos(math.radians(elevation))
    denominator = cos_e * math.cos(phi)
    if abs(denominator) < 1e-12:
        return elevation, 180.0
    cos_az = (math.sin(delta) - sin_e * math.sin(phi)) / denominator
    azimuth = math.degrees(math.acos(max(-1.0, min(1.0, cos_az))))
    if hour_angle > 0:
        azimuth = 360.0 - azimuth
    return elevation, azimuth % 360.0


def sun_positions(latitude: float, samples_per_day: int = SAMPLES_PER_DAY) -> List[SunSample]:
    """
    Above-horizon sun samples for one year.

    One representative day per month (the 15th), samples_per_day samples at
    the middle of equal solar-time intervals; each sample stands for
    days_in_month * 24 / samples_per_day hours.
    """
    check_latitude(latitude)
    if samples_per_day < 1:
        raise GeometryError(f"samples_per_day must be >= 1, got {samples_per_day}")

    interval = 24.0 / samples_per_day
    samples = []
    day_before = 0
    for days in DAYS_IN_MONTH:
        day_of_year = day_before + SAMPLE_DAY_OF_MONTH
        for k in range(samples_per_day):
            elevation, azimuth = solar_position(latitude, day_of_year, (k + 0.5) * interval)
            if elevation > 0:
                samples.append(SunSample(elevation, azimuth, days * interval))
        day_before += days
    logger.debug(f"sun_positions(lat={latitude}): {len(samples)} samples")
    return samples


def daylight_hours(suns: Sequence[SunSample]) -> float:
    return float(sum(s.weight_hours for s in suns))


# ===================================================================
# SHADING
# ===================================================================

def _bilinear(values: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bilinear samples at in-range fractional positions."""
    n_rows, n_cols = values.shape
    r0 = np.minimum(np.floor(rows).astype(np.int64), max(n_rows - 2, 0))
    c0 = np.minimum(np.floor(cols).astype(np.int64), max(n_cols - 2, 0))
    r1 = np.minimum(r0 + 1, n_rows - 1)
    c1 = np.minimum(c0 + 1, n_cols - 1)
    tr = rows - r0
    tc = cols - c0
    return (
        values[r0, c0] * (1 - tr) * (1 - tc)
        + values[r0, c1] * (1 - tr) * tc
        + values[r1, c0] * tr * (1 - tc)
        + values[r1, c1] * tr * tc
    )


def _march(
    surface: np.ndarray,
    rows: np.ndarray,
    cols: np.ndarray,
    sun: SunSample,
    resolution: float,
) -> np.ndarray:
    """
    Shadow test for many start pixels at once.

    The ray height at distance d is z0 + d * tan(elevation). A pixel is
    shaded if any DSM sample along the ray exceeds it by more than the
    tolerance; rays leaving the raster are unshaded.
    """
    n_rows, n_cols = surface.shape
    z0 = surface[rows, cols]
    shaded = np.zeros(rows.size, dtype=bool)
    active = np.arange(rows.size)
    top = float(surface.max())

    step = RAY_STEP_FRACTION * resolution
    tan_e = math.tan(math.radians(sun.elevation))
    az = math.radians(sun.azimuth)
    per_metre_col = math.sin(az) / resolution
    per_metre_row = -math.cos(az) / resolution

    n_steps = int(math.floor(RAY_MAX_DISTANCE_M / step + 1e-9))
    for k in range(1, n_steps + 1):
        if active.size == 0:
            break
        d = k * step
        ray = z0[active] + d * tan_e
        r = rows[active] + d * per_metre_row
        c = cols[active] + d * per_metre_col
        inside = (r >= 0) & (r <= n_rows - 1) & (c >= 0) & (c <= n_cols - 1) & (ray <= top + RAY_TOLERANCE_M)
        active, ray, r, c = active[inside], ray[inside], r[inside], c[inside]
        if active.size == 0:
            break
        blocked = _bilinear(surface, r, c) > ray + RAY_TOLERANCE_M
        shaded[active[blocked]] = True
        active = active[~blocked]
    return shaded


def _surface(dsm: HeightRaster) -> np.ndarray:
    """DSM values with invalid pixels lowered to the valid minimum."""
    if dsm.all_valid:
        return dsm.values
    if not dsm.valid.any():
        raise RasterError("DSM has no valid pixels")
    floor = float(dsm.values[dsm.valid].min())
    return np.where(dsm.valid, dsm.values, floor)


def is_shaded(dsm: HeightRaster, pixel: Tuple[int, int], sun: SunSample) -> bool:
    """True if the DSM blocks the sun as seen from pixel (row, col)."""
    row, col = int(pixel[0]), int(pixel[1])
    if not (0 <= row < dsm.meta.height and 0 <= col < dsm.meta.width):
        raise RasterError(f"pixel {pixel} is outside the raster")
    if not dsm.valid[row, col]:
        raise RasterError(f"pixel {pixel} is not valid")
    shaded = _march(_surface(dsm), np.array([row]), np.array([col]), sun, dsm.meta.spatial_resolution)
    return bool(shaded[0])


def shadow_mask(dsm: HeightRaster, sun: SunSample, where: Optional[np.ndarray] = None) -> np.ndarray:
    """Boolean shadow grid for one sun; pixels outside `where` are False."""
    where = dsm.valid if where is None else (where & dsm.valid)
    rows, cols = np.nonzero(where)
    shaded = np.zeros(dsm.meta.shape, dtype=bool)
    if rows.size:
        shaded[rows, cols] = _march(_surface(dsm), rows, cols, sun, dsm.meta.spatial_resolution)
    return shaded


# ===================================================================
# FLUX INTEGRATION
# ===================================================================

def _sun_contribution(args) -> np.ndarray:
    """kWh/m^2 delivered by one sun sample at every pixel."""
    dsm, normals, valid, sun, model = args
    s = sun.vector
    cos_incidence = normals.values @ s
    lit = valid & (cos_incidence > 0)
    shaded = shadow_mask(dsm, sun, lit)

    direct = np.where(lit & ~shaded, model.direct_normal_irradiance * cos_incidence, 0.0)
    contribution = direct
    if model.diffuse_fraction > 0:
        sky_view = (1.0 + normals.values[..., 2]) / 2.0
        contribution = contribution + model.direct_normal_irradiance * model.diffuse_fraction * sky_view
    return np.where(valid, sun.weight_hours * contribution / 1000.0, 0.0)


def annual_flux(
    dsm: HeightRaster,
    normals: NormalField,
    suns: Sequence[SunSample],
    model: Optional[IrradianceModel] = None,
    workers: int = 1,
) -> FluxRaster:
    """
    Annual flux in kWh/m^2/yr:

        sum over suns of w * [DNI * max(0, n.s) * (1 - shaded)
                              + DNI * diffuse * (1 + cos pitch) / 2] / 1000

    Per-sun contributions are summed in sample order, so the result does not
    depend on the worker count.
    """
    check_same_meta(dsm, normals)
    model = model or IrradianceModel()
    valid = dsm.valid & normals.valid
    tasks = [(dsm, normals, valid, sun, model) for sun in suns]

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            contributions = pool.map(_sun_contribution, tasks)
            total = _accumulate(contributions, dsm.meta.shape)
    else:
        total = _accumulate(map(_sun_contribution, tasks), dsm.meta.shape)

    logger.info(f"annual_flux: {len(tasks)} suns, peak {float(total.max()):.1f} kWh/m2/yr")
    return FluxRaster(dsm.meta, np.maximum(total, 0.0), valid)


def _accumulate(contributions, shape) -> np.ndarray:
    total = np.zeros(shape, dtype=np.float64)
    for contribution in contributions:
        total += contribution
    return total
