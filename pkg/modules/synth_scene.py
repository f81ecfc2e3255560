# modules/synth_scene.py
"""
Procedural scenes with analytically known ground truth.

Buildings are rectangles (optionally rotated) with flat, gable or hip
roofs standing on a planar terrain. Each roof is the lower envelope of its
face planes, rasterised exactly at pixel centres, so every pixel belongs
to the face whose plane forms the roof surface there. On a ridge or hip
line the planes meet; a pixel centre on that seam (planes equal within
SEAM_TOLERANCE_M) goes to the face listed first by BuildingSpec.faces().
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb
from shapely.geometry import Polygon

from modules.raster_ops import compose_dsm
from modules.rasters import ColorRaster, GridMeta, HeightRaster, InstanceMap, canonical_renumber
from modules.roof_segmentation import SegmentStats, plane_normal
from utils.errors import GeometryError
from utils.validators import normalize_azimuth

logger = logging.getLogger(__name__)

ROOF_TYPES = ("flat", "gable", "hip")
CHECKER_SIZE_M = 2.0
GROUND_COLORS = ((96, 112, 88), (128, 140, 112))
# face planes meeting on a ridge or hip line agree to within rounding there
SEAM_TOLERANCE_M = 1e-9


@dataclass(frozen=True)
class TerrainSpec:
    base_m: float = 0.0
    slope_east: float = 0.0
    slope_north: float = 0.0


@dataclass(frozen=True)
class BuildingSpec:
    """
    A rectangular building. length_m runs along the ridge, whose compass
    bearing is ridge_orientation_deg; width_m is the eave-to-eave span.
    """

    center_x: float
    center_y: float
    length_m: float
    width_m: float
    eave_height_m: float
    ridge_height_m: Optional[float] = None
    roof_type: str = "flat"
    ridge_orientation_deg: float = 0.0

    def __post_init__(self):
        if self.roof_type not in ROOF_TYPES:
            raise GeometryError(f"roof_type must be one of {ROOF_TYPES}, got {self.roof_type!r}")
        if not (self.length_m > 0 and self.width_m > 0):
            raise GeometryError(f"building dimensions must be > 0, got {self.length_m} x {self.width_m}")
        if not self.eave_height_m > 0:
            raise GeometryError(f"eave_height_m must be > 0, got {self.eave_height_m}")
        ridge = self.eave_height_m if self.ridge_height_m is None or self.roof_type == "flat" else self.ridge_height_m
        if ridge < self.eave_height_m:
            raise GeometryError(f"ridge height {ridge} is below eave height {self.eave_height_m}")
        object.__setattr__(self, "ridge_height_m", float(ridge))

    @property
    def axes(self) -> Tuple[np.ndarray, np.ndarray]:
        """(along-ridge, across-ridge) unit vectors in map (x, y)."""
        theta = math.radians(self.ridge_orientation_deg)
        return np.array([math.sin(theta), math.cos(theta)]), np.array([math.cos(theta), -math.sin(theta)])

    @property
    def pitch_deg(self) -> float:
        if self.roof_type == "flat":
            return 0.0
        return math.degrees(math.atan(2.0 * (self.ridge_height_m - self.eave_height_m) / self.width_m))

    def footprint(self) -> Polygon:
        along, across = self.axes
        centre = np.array([self.center_x, self.center_y])
        half_l, half_w = self.length_m / 2, self.width_m / 2
        corners = [centre + sl * half_l * along + sw * half_w * across for sl, sw in ((-1, -1), (1, -1), (1, 1), (-1, 1))]
        return Polygon([tuple(c) for c in corners])

    def faces(self) -> List[Tuple[float, Optional[float]]]:
        """(pitch, azimuth) per face in face-id order; azimuth None for flat."""
        if self.roof_type == "flat":
            return [(0.0, None)]
        theta = self.ridge_orientation_deg
        sides = [(self.pitch_deg, normalize_azimuth(theta + 90.0)), (self.pitch_deg, normalize_azimuth(theta + 270.0))]
        if self.roof_type == "hip":
            sides += [(self.pitch_deg, normalize_azimuth(theta)), (self.pitch_deg, normalize_azimuth(theta + 180.0))]
        return sides

    def face_heights(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        """(n_faces, ...) plane heights above terrain at local coordinates."""
        ridge, eave = self.ridge_height_m, self.eave_height_m
        if self.roof_type == "flat":
            return np.full((1,) + s.shape, eave)
        k = (ridge - eave) / (self.width_m / 2)
        planes = [ridge - k * t, ridge + k * t]
        if self.roof_type == "hip":
            inset = self.length_m / 2 - self.width_m / 2
            planes += [ridge - k * (s - inset), ridge + k * (s + inset)]
        return np.stack(planes)


@dataclass(frozen=True)
class SceneSpec:
    meta: GridMeta
    buildings: Tuple[BuildingSpec, ...] = ()
    terrain: TerrainSpec = field(default_factory=TerrainSpec)

    def __post_init__(self):
        object.__setattr__(self, "buildings", tuple(self.buildings))
        west, south, east, north = self.meta.bounds
        bounds = Polygon([(west, south), (east, south), (east, north), (west, north)])
        footprints = [b.footprint() for b in self.buildings]
        for index, polygon in enumerate(footprints):
            if not bounds.buffer(1e-9).contains(polygon):
                raise GeometryError(f"building {index + 1} footprint extends outside the scene bounds")
            for other in range(index):
                if polygon.intersection(footprints[other]).area > 1e-9:
                    raise GeometryError(f"buildings {other + 1} and {index + 1} overlap")

    def to_dict(self) -> dict:
        return {
            "meta": self.meta.to_dict(),
            "terrain": asdict(self.terrain),
            "buildings": [asdict(b) for b in self.buildings],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        return cls(
            meta=GridMeta.from_dict(data["meta"]),
            buildings=tuple(BuildingSpec(**b) for b in data.get("buildings", [])),
            terrain=TerrainSpec(**data.get("terrain", {})),
        )


@dataclass(frozen=True)
class FaceTruth:
    segment_id: int
    building_id: int
    pitch_deg: float
    azimuth_deg: Optional[float]
    pixel_count: int

    @property
    def normal(self) -> np.ndarray:
        return plane_normal(self.pitch_deg, self.azimuth_deg or 0.0)


@dataclass(frozen=True, eq=False)
class SceneTruth:
    spec: SceneSpec
    dsm: HeightRaster
    dtm: HeightRaster
    heightmap: HeightRaster
    buildings: InstanceMap
    segments: InstanceMap
    rgb: ColorRaster
    faces: Tuple[FaceTruth, ...]

    def segment_stats(self) -> List[SegmentStats]:
        """Analytic statistics of the face segments."""
        res2 = self.spec.meta.spatial_resolution ** 2
        return [
            SegmentStats(
                segment_id=f.segment_id,
                building_id=f.building_id,
                area_m2=f.pixel_count * res2,
                pixel_count=f.pixel_count,
                pitch_deg=f.pitch_deg,
                azimuth_deg=f.azimuth_deg,
                normal=tuple(float(v) for v in f.normal),
            )
            for f in self.faces
        ]


# ===================================================================
# RENDERING
# ===================================================================

def _face_colors(count: int) -> np.ndarray:
    """Distinct saturated colours, golden-angle hue steps."""
    hues = (np.arange(count) * 0.618033988749895) % 1.0
    hsv = np.stack([hues, np.full(count, 0.65), np.full(count, 0.9)], axis=-1)
    return np.round(hsv_to_rgb(hsv) * 255).astype(np.uint8)


def render_scene(spec: SceneSpec) -> SceneTruth:
    """Rasterise a scene at pixel centres."""
    meta = spec.meta
    xs, ys = meta.pixel_centers()
    west, south, east, north = meta.bounds
    cx, cy = (west + east) / 2, (south + north) / 2
    terrain = spec.terrain
    dtm_values = terrain.base_m + terrain.slope_east * (xs - cx) + terrain.slope_north * (ys - cy)

    height = np.zeros(meta.shape)
    building_ids = np.zeros(meta.shape, dtype=np.int64)
    face_ids = np.zeros(meta.shape, dtype=np.int64)
    face_info = []

    for index, building in enumerate(spec.buildings):
        building_id = index + 1
        along, across = building.axes
        dx, dy = xs - building.center_x, ys - building.center_y
        s = dx * along[0] + dy * along[1]
        t = dx * across[0] + dy * across[1]
        inside = (np.abs(s) <= building.length_m / 2) & (np.abs(t) <= building.width_m / 2)
        if not inside.any():
            logger.warning(f"building {building_id} covers no pixel centre")
            continue

        planes = building.face_heights(s[inside], t[inside])
        lowest = planes.min(axis=0)
        winner = np.argmax(planes <= lowest + SEAM_TOLERANCE_M, axis=0)
        height[inside] = planes[winner, np.arange(winner.size)]
        building_ids[inside] = building_id
        base = len(face_info)
        face_ids[inside] = base + winner + 1
        for pitch, azimuth in building.faces():
            face_info.append((building_id, pitch, azimuth))

    segments = canonical_renumber(face_ids)
    old_ids, first = np.unique(face_ids.ravel(), return_index=True)
    faces = []
    for old_id, position in zip(old_ids, first):
        if old_id == 0:
            continue
        building_id, pitch, azimuth = face_info[old_id - 1]
        new_id = int(segments.flat[position])
        faces.append(FaceTruth(new_id, building_id, pitch, azimuth, int((face_ids == old_id).sum())))
    faces.sort(key=lambda f: f.segment_id)

    heightmap = HeightRaster(meta, height)
    dtm = HeightRaster(meta, dtm_values)
    dsm = compose_dsm(heightmap, dtm)

    checker = ((np.floor((xs - west) / CHECKER_SIZE_M) + np.floor((north - ys) / CHECKER_SIZE_M)) % 2).astype(int)
    rgb = np.array(GROUND_COLORS, dtype=np.uint8)[checker]
    palette = _face_colors(len(faces))
    for face, color in zip(faces, palette):
        rgb[segments == face.segment_id] = color

    logger.info(f"render_scene: {len(spec.buildings)} buildings, {len(faces)} roof faces on {meta.height}x{meta.width}")
    return SceneTruth(
        spec=spec,
        dsm=dsm,
        dtm=dtm,
        heightmap=heightmap,
        buildings=InstanceMap(meta, building_ids, "buildings"),
        segments=InstanceMap(meta, segments, "roof_segments"),
        rgb=ColorRaster(meta, rgb),
        faces=tuple(faces),
    )


def perturb(truth: SceneTruth, noise_sigma_m: float, seed: int) -> HeightRaster:
    """DSM plus seeded Gaussian noise (numpy PCG64 stream)."""
    if noise_sigma_m < 0:
        raise GeometryError(f"noise_sigma_m must be >= 0, got {noise_sigma_m}")
    if noise_sigma_m == 0:
        return truth.dsm.with_values(truth.dsm.values)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, noise_sigma_m, truth.dsm.meta.shape)
    return truth.dsm.with_values(truth.dsm.values + noise)


# ===================================================================
# SCENE GENERATORS
# ===================================================================

def example_scene(size: int = 128, resolution: float = 0.25) -> SceneSpec:
    """A gable, a hip and a flat building on flat ground."""
    extent = size * resolution
    meta = GridMeta(0.0, extent, size, size, resolution)
    q = extent / 4
    buildings = (
        BuildingSpec(q, 3 * q, 10.0, 8.0, 4.0, 6.0, "gable", 0.0),
        BuildingSpec(3 * q, 3 * q, 12.0, 8.0, 5.0, 7.0, "hip", 90.0),
        BuildingSpec(2 * q, q, 10.0, 10.0, 4.0, None, "flat", 0.0),
    )
    return SceneSpec(meta, buildings)


def random_scene(
    seed: int,
    size: int = 96,
    resolution: float = 0.25,
    roof_types: Tuple[str, ...] = ROOF_TYPES,
    max_buildings: int = 4,
) -> SceneSpec:
    """
    Random non-overlapping buildings, one per cell of a 2x2 layout grid.
    """
    rng = np.random.default_rng(seed)
    extent = size * resolution
    meta = GridMeta(0.0, extent, size, size, resolution)
    cell = extent / 2
    count = int(rng.integers(1, max_buildings + 1))
    cells = rng.permutation(4)[:count]
    buildings = []
    for c in cells:
        row, col = divmod(int(c), 2)
        width = float(rng.uniform(0.3, 0.45) * cell)
        length = float(rng.uniform(width, 0.7 * cell))
        roof = str(rng.choice(roof_types))
        eave = float(rng.uniform(3.0, 8.0))
        ridge = eave + float(rng.uniform(1.0, 3.0)) if roof != "flat" else None
        buildings.append(BuildingSpec(
            center_x=(col + 0.5) * cell,
            center_y=extent - (row + 0.5) * cell,
            length_m=length,
            width_m=width,
            eave_height_m=eave,
            ridge_height_m=ridge,
            roof_type=roof,
            ridge_orientation_deg=float(rng.choice([0.0, 90.0])),
        ))
    return SceneSpec(meta, tuple(buildings))
