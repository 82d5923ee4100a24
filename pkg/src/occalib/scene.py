"""Procedural scenes, ray-cast depth rendering and Velodyne-style LiDAR simulation.

World frame: z up, ground plane ``z = ground_z``. LiDAR frame: x forward,
y left, z up. Azimuth is measured clockwise seen from above (from +x toward
-y), so increasing column index sweeps left-to-right through a forward
camera's image.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geom import PinholeCamera, RigidTransform, so3_exp


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Independent generator for one named use of a root seed.

    Extra integers select further independent streams under the same name,
    e.g. one per frame of a sequence.
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8")), *(int(i) for i in index)])


@dataclass(frozen=True, eq=False)
class PlaneModel:
    """Plane ``normal . x = offset`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.array(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("plane normal must be non-zero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal - self.offset


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; ``extents`` are full side lengths."""

    center: tuple
    extents: tuple

    @property
    def bounds(self):
        c = np.asarray(self.center, dtype=np.float64)
        h = 0.5 * np.asarray(self.extents, dtype=np.float64)
        return np.concatenate([c - h, c + h])

    @property
    def bottom(self) -> float:
        return self.center[2] - 0.5 * self.extents[2]

    def surface_distance(self, pts):
        q = np.abs(pts - np.asarray(self.center)) - 0.5 * np.asarray(self.extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + np.abs(inside)


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder; ``center`` is the midpoint of its axis."""

    center: tuple
    radius: float
    height: float

    @property
    def bottom(self) -> float:
        return self.center[2] - 0.5 * self.height

    def surface_distance(self, pts):
        rho = np.hypot(pts[:, 0] - self.center[0], pts[:, 1] - self.center[1])
        q = np.stack([rho - self.radius, np.abs(pts[:, 2] - self.center[2]) - 0.5 * self.height], axis=1)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + np.abs(inside)


@dataclass(frozen=True, eq=False)
class Scene:
    ground: PlaneModel
    primitives: tuple

    def kernel_args(self):
        boxes, box_ids, cyls, cyl_ids = [], [], [], []
        for i, p in enumerate(self.primitives):
            if isinstance(p, Box):
                boxes.append(p.bounds)
                box_ids.append(i + 1)
            else:
                cx, cy, cz = p.center
                h = 0.5 * p.height
                cyls.append((cx, cy, cz - h, cz + h, p.radius))
                cyl_ids.append(i + 1)
        ground_z = self.ground.offset / self.ground.normal[2]
        return (
            np.array(boxes, dtype=np.float64).reshape(-1, 6),
            np.array(box_ids, dtype=np.int64),
            np.array(cyls, dtype=np.float64).reshape(-1, 5),
            np.array(cyl_ids, dtype=np.int64),
            float(ground_z),
        )

    def cast(self, origins, dirs):
        """Nearest hit distance along each ray and the id of the surface hit."""
        boxes, box_ids, cyls, cyl_ids, gz = self.kernel_args()
        return _kernels.cast_rays(origins, np.ascontiguousarray(dirs), boxes, box_ids, cyls, cyl_ids, gz, True)

    def surface_distance(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        d = np.abs(self.ground.signed_distance(pts))
        for p in self.primitives:
            d = np.minimum(d, p.surface_distance(pts))
        return d


@dataclass
class SceneSpec:
    """Declarative scene description; ``preset`` primitives come first."""

    ground_z: float = 0.0
    boxes: list = field(default_factory=list)
    cylinders: list = field(default_factory=list)
    preset: str | None = None
    seed: int = 0


class SceneError(ValueError):
    pass


def _footprint_free(fp, taken, margin):
    return all(
        fp[1] + margin < f[0] or f[1] + margin < fp[0] or fp[3] + margin < f[2] or f[3] + margin < fp[2]
        for f in taken
    )


def _place(rng, taken, half_x, half_y, x_range, spread=0.65, margin=0.8):
    for _ in range(500):
        x = rng.uniform(*x_range)
        y = rng.uniform(-spread * x, spread * x)
        fp = (x - half_x, x + half_x, y - half_y, y + half_y)
        if _footprint_free(fp, taken, margin):
            taken.append(fp)
            return x, y
    return None


def _urban_lite(rng, g):
    """Street-like layout: side fences, parked vans, poles, pillars, a gate bar, a back wall.

    Vans and fences are taller than the sensors so their roofs are never seen at a
    grazing angle, which would turn the roof itself into spurious range
    discontinuities between neighbouring rings.
    """
    prims = []
    wall_x = rng.uniform(17.0, 18.5)
    prims.append(Box((wall_x + 0.5, 0.0, g + 4.0), (1.0, 60.0, 8.0)))
    taken = []
    # side fences along the street; their tops cross several rings lengthwise
    for side in (-1.0, 1.0):
        y = side * rng.uniform(5.5, 8.0)
        x0, x1 = rng.uniform(4.0, 7.0), rng.uniform(13.0, 16.0)
        h = rng.uniform(1.85, 2.1)
        gap = rng.uniform(8.0, 10.0)
        for a, b in ((x0, gap), (gap + rng.uniform(0.8, 1.5), x1)):
            prims.append(Box((0.5 * (a + b), y, g + 0.5 * h), (b - a, 0.2, h)))
            taken.append((a, b, y - 0.1, y + 0.1))
    # bollard rows: thin posts whose two silhouettes are only a few pixels apart
    for side in (-1.0, 1.0):
        y = side * rng.uniform(2.5, 4.5)
        x, r, h = rng.uniform(5.0, 7.0), rng.uniform(0.05, 0.08), rng.uniform(0.9, 1.2)
        spacing = rng.uniform(0.9, 1.4)
        for _ in range(int(rng.integers(5, 10))):
            prims.append(Cylinder((x, y, g + 0.5 * h), r, h))
            taken.append((x - r, x + r, y - r, y + r))
            x += spacing
    for _ in range(int(rng.integers(2, 4))):
        length, width = rng.uniform(3.6, 4.6), rng.uniform(1.6, 1.9)
        if rng.random() < 0.5:
            length, width = width, length
        h = rng.uniform(1.85, 2.0)
        at = _place(rng, taken, 0.5 * length, 0.5 * width, (6.5, 14.0))
        if at:
            prims.append(Box((at[0], at[1], g + 0.5 * h), (length, width, h)))
    for _ in range(int(rng.integers(3, 6))):
        r, h = rng.uniform(0.06, 0.15), rng.uniform(4.0, 7.0)
        at = _place(rng, taken, r, r, (5.0, 15.5), margin=0.6)
        if at:
            prims.append(Cylinder((at[0], at[1], g + 0.5 * h), r, h))
    for _ in range(int(rng.integers(1, 3))):
        s, h = rng.uniform(0.4, 0.8), rng.uniform(3.0, 6.0)
        at = _place(rng, taken, 0.5 * s, 0.5 * s, (6.0, 15.0))
        if at:
            prims.append(Box((at[0], at[1], g + 0.5 * h), (s, s, h)))
    # gate: a floating bar on two thin posts, gives bottom-occlusion edges
    span = rng.uniform(2.0, 3.5)
    at = _place(rng, taken, 0.2, 0.5 * span + 0.1, (7.0, 13.0))
    if at:
        bottom, thick = rng.uniform(0.7, 1.0), rng.uniform(0.3, 0.45)
        x, y = at
        prims.append(Box((x, y, g + bottom + 0.5 * thick), (0.25, span, thick)))
        top = bottom + thick
        for side in (-1.0, 1.0):
            prims.append(Cylinder((x, y + side * 0.5 * span, g + 0.5 * top), 0.05, top))
    # street signs: a plate on a post, facing the street, gives edges on all four sides
    for _ in range(int(rng.integers(2, 5))):
        w, ph, bottom = rng.uniform(0.5, 0.9), rng.uniform(0.4, 0.7), rng.uniform(1.9, 2.5)
        at = _place(rng, taken, 0.1, 0.5 * w, (6.0, 15.0), margin=0.6)
        if at:
            x, y = at
            prims.append(Box((x, y, g + bottom + 0.5 * ph), (0.06, w, ph)))
            prims.append(Cylinder((x + 0.08, y, g + 0.5 * (bottom + ph)), 0.04, bottom + ph))
    return prims


def _box_wall(rng, g):
    return [
        Box((20.5, 0.0, g + 4.0), (1.0, 40.0, 8.0)),
        Box((10.0, 0.0, g + 0.95), (1.0, 3.0, 1.9)),
    ]


def _pole(rng, g):
    return [
        Box((20.5, 0.0, g + 4.0), (1.0, 40.0, 8.0)),
        Cylinder((9.0, 0.4, g + 3.0), 0.1, 6.0),
        Box((12.0, -3.0, g + 0.95), (4.0, 1.8, 1.9)),
        Box((11.0, 4.5, g + 0.95), (1.8, 4.2, 1.9)),
    ]


def _single_box(rng, g):
    return [Box((45.0, 0.0, g + 0.5), (1.0, 1.0, 1.0))]


PRESETS = {
    "urban-lite": _urban_lite,
    "box-wall": _box_wall,
    "pole": _pole,
    "single-box": _single_box,
}


def build_scene(spec: SceneSpec) -> Scene:
    """Deterministic scene for ``spec``; preset primitives depend on ``spec.seed``."""
    g = float(spec.ground_z)
    prims = []
    if spec.preset is not None:
        if spec.preset not in PRESETS:
            raise SceneError(f"unknown scene preset {spec.preset!r}")
        prims.extend(PRESETS[spec.preset](substream(spec.seed, "scene"), g))
    for b in spec.boxes:
        b = tuple(float(x) for x in b)
        if len(b) != 6 or min(b[3:]) <= 0:
            raise SceneError(f"box needs center and three positive extents, got {b}")
        prims.append(Box(b[:3], b[3:]))
    for c in spec.cylinders:
        c = tuple(float(x) for x in c)
        if len(c) != 5 or c[3] <= 0 or c[4] <= 0:
            raise SceneError(f"cylinder needs center, radius, height > 0, got {c}")
        prims.append(Cylinder(c[:3], c[3], c[4]))
    if not prims:
        raise SceneError("scene has no primitives")
    for p in prims:
        if p.bottom < g - 1e-9:
            raise SceneError(f"primitive {p} extends below the ground plane z={g}")
    return Scene(PlaneModel((0.0, 0.0, 1.0), g), tuple(prims))


# ---------------------------------------------------------------------------
# depth rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Camera-frame Z per pixel, ``NaN`` where invalid."""

    depth: np.ndarray

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth)


def render_depth(scene: Scene, cam: PinholeCamera, cam_pose: RigidTransform, max_depth=None) -> DepthImage:
    """Ray-cast the nearest surface through every pixel centre.

    ``cam_pose`` maps camera-frame points to the world. Rays have unit
    camera-frame z, so the hit parameter is the depth directly.
    """
    rays = cam.pixel_rays() @ cam_pose.rotation.T
    t, _ = scene.cast(cam_pose.translation, rays)
    if max_depth is not None:
        t = np.where(t <= max_depth, t, np.inf)
    depth = np.where(np.isfinite(t), t, np.nan).reshape(cam.height, cam.width)
    return DepthImage(depth)


# ---------------------------------------------------------------------------
# LiDAR
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LidarModel:
    ring_elevations: tuple
    azimuth_step: float
    max_range: float = 80.0
    sigma_r: float = 0.02
    sigma_alpha: float = 0.0
    azimuth_start: float = -180.0

    def __post_init__(self):
        el = np.asarray(self.ring_elevations, dtype=np.float64)
        if el.ndim != 1 or el.size == 0:
            raise ValueError("need at least one ring")
        if np.any(np.diff(el) >= 0):
            raise ValueError("ring elevations must be strictly decreasing")
        if self.azimuth_step <= 0:
            raise ValueError("azimuth_step must be positive")
        object.__setattr__(self, "ring_elevations", tuple(float(e) for e in el))

    @property
    def rings(self) -> int:
        return len(self.ring_elevations)

    @property
    def cols(self) -> int:
        return int(round(360.0 / self.azimuth_step))

    def azimuths(self) -> np.ndarray:
        return self.azimuth_start + self.azimuth_step * np.arange(self.cols)

    def with_noise(self, sigma_r: float, sigma_alpha: float) -> LidarModel:
        return LidarModel(self.ring_elevations, self.azimuth_step, self.max_range, sigma_r, sigma_alpha, self.azimuth_start)

    @classmethod
    def hdl64(cls, **kw) -> LidarModel:
        """Two laser blocks over +2.0 to -24.9 deg: 1/3 deg spacing down to -8.33 deg, ~1/2 deg below."""
        upper = 2.0 - np.arange(32) / 3.0
        lower = np.linspace(-8.8333, -24.9, 32)
        return cls(tuple(np.concatenate([upper, lower])), 0.2, **kw)

    @classmethod
    def hdl64_even(cls, **kw) -> LidarModel:
        """64 rings evenly spaced over +2.0 to -24.9 deg."""
        return cls(tuple(np.linspace(2.0, -24.9, 64)), 0.2, **kw)

    @classmethod
    def hdl32(cls, **kw) -> LidarModel:
        return cls(tuple(np.linspace(10.67, -30.67, 32)), 0.2, **kw)


LIDAR_PRESETS = {"hdl64": LidarModel.hdl64, "hdl64-even": LidarModel.hdl64_even, "hdl32": LidarModel.hdl32}


def beam_directions(elevation_deg, azimuth_deg) -> np.ndarray:
    el, az = np.broadcast_arrays(np.radians(elevation_deg), np.radians(azimuth_deg))
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), -ce * np.sin(az), np.sin(el)], axis=-1)


@dataclass(frozen=True, eq=False)
class OrganizedScan:
    """Ring-by-azimuth grid of returns in the LiDAR frame.

    ``points`` is ``(rings, cols, 3)`` with ``NaN`` in invalid cells; ranges
    are always the norms of the stored points. ``surface_ids`` (simulator
    only) names the surface each return came from: 0 ground, ``i + 1`` for
    primitive ``i``, -1 for misses or unknown.
    """

    points: np.ndarray
    valid: np.ndarray
    surface_ids: np.ndarray | None = None

    @classmethod
    def from_points(cls, points, valid, surface_ids=None) -> OrganizedScan:
        points = np.array(points, dtype=np.float64)
        valid = np.asarray(valid, dtype=bool)
        points[~valid] = np.nan
        return cls(points, valid, surface_ids)

    @classmethod
    def from_ranges(cls, ranges, elevations, azimuths) -> OrganizedScan:
        """Build from a ``(rings, cols)`` range grid (``NaN`` = no return)."""
        ranges = np.asarray(ranges, dtype=np.float64)
        dirs = beam_directions(np.asarray(elevations)[:, None], np.asarray(azimuths)[None, :])
        valid = np.isfinite(ranges) & (ranges > 0)
        return cls.from_points(dirs * np.where(valid, ranges, np.nan)[..., None], valid)

    @property
    def rings(self) -> int:
        return self.points.shape[0]

    @property
    def cols(self) -> int:
        return self.points.shape[1]

    @property
    def ranges(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=2)

    def valid_points(self) -> np.ndarray:
        return self.points[self.valid]


def simulate_lidar(scene: Scene, model: LidarModel, lidar_pose: RigidTransform, seed: int, *frame: int) -> OrganizedScan:
    """One return per (ring, azimuth) cell with Gaussian range and angular noise.

    Noise for every cell is drawn up front as whole arrays, so each beam's
    perturbation is fixed by its cell index and the seed alone.
    """
    rng = substream(seed, "noise", *frame)
    shape = (model.rings, model.cols)
    n_range = rng.standard_normal(shape) * model.sigma_r
    n_el = rng.standard_normal(shape) * model.sigma_alpha
    n_az = rng.standard_normal(shape) * model.sigma_alpha

    el = np.asarray(model.ring_elevations)[:, None] + n_el
    az = model.azimuths()[None, :] + n_az
    dirs = beam_directions(el, az)
    world_dirs = dirs.reshape(-1, 3) @ lidar_pose.rotation.T
    t, ids = scene.cast(lidar_pose.translation, world_dirs)
    t = t.reshape(shape)
    ids = ids.reshape(shape)
    rng_noisy = t + n_range
    valid = np.isfinite(t) & (rng_noisy > 0.0) & (rng_noisy <= model.max_range)
    points = dirs * np.where(valid, rng_noisy, np.nan)[..., None]
    ids = np.where(valid, ids, -1)
    return OrganizedScan.from_points(points, valid, ids)


def sample_perturbation(rot_mag: float, trans_mag: float, seed: int) -> RigidTransform:
    """Rotation of exactly ``rot_mag`` degrees about a uniform random axis plus
    a translation of length ``trans_mag`` in a uniform random direction."""
    if rot_mag < 0 or trans_mag < 0:
        raise ValueError("perturbation magnitudes must be non-negative")
    rng = substream(seed, "perturbation")
    axis = rng.standard_normal(3)
    direction = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    direction /= np.linalg.norm(direction)
    return RigidTransform(so3_exp(axis * np.radians(rot_mag)), direction * trans_mag)


# ---------------------------------------------------------------------------
# rig
# ---------------------------------------------------------------------------

LIDAR_HEIGHT = 1.73


def default_camera() -> PinholeCamera:
    return PinholeCamera(700.0, 700.0, 621.0, 187.0, 1242, 375)


def default_extrinsic() -> RigidTransform:
    """LiDAR-to-camera transform of the simulated rig: camera ahead of and below the LiDAR, looking forward."""
    axes = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    tilt = so3_exp(np.array([0.004, -0.007, 0.002]))
    return RigidTransform(tilt @ axes, np.array([0.0, -0.08, -0.27]))


def lidar_pose_at(x=0.0, y=0.0, yaw_deg=0.0, height=LIDAR_HEIGHT) -> RigidTransform:
    return RigidTransform(so3_exp(np.array([0.0, 0.0, np.radians(yaw_deg)])), np.array([x, y, height]))


def camera_pose(lidar_pose: RigidTransform, extrinsic: RigidTransform) -> RigidTransform:
    """Camera-to-world pose given the LiDAR pose and LiDAR-to-camera extrinsic."""
    return lidar_pose.compose(extrinsic.inverse())


__all__ = [
    "Box",
    "Cylinder",
    "DepthImage",
    "LidarModel",
    "OrganizedScan",
    "PlaneModel",
    "Scene",
    "SceneError",
    "SceneSpec",
    "beam_directions",
    "build_scene",
    "camera_pose",
    "default_camera",
    "default_extrinsic",
    "lidar_pose_at",
    "render_depth",
    "sample_perturbation",
    "simulate_lidar",
    "substream",
]
