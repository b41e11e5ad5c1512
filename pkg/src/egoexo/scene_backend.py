"""Scene backends: the capture interface plus the deterministic analytic mock.

The mock world is right-handed with z up: an infinite ground plane at z = 0
and yaw-oriented boxes for vehicles and pedestrians.  Rendering is an exact
analytic ray cast, so depth, instance and semantic planes are ground truth
to float precision and every capture is a pure function of the scene config.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import (
    InvalidArgument,
    NotFound,
    SpawnError,
    StateError,
)
from .rig_geometry import (
    CameraIntrinsics,
    CameraPose,
    CameraRig,
    Convention,
    PhiMode,
    ego_preset,
    load_rig_file,
    look_at,
    make_exo_rig,
)

TOWNS = (
    "Town01", "Town02", "Town03", "Town04",
    "Town05", "Town06", "Town07", "Town10HD",
)

# semantic class ids (16-bit plane); sky shares the invalid-depth pixels
SEM_SKY = 0
SEM_GROUND = 1
SEM_VEHICLE = 2
SEM_PEDESTRIAN = 3
SEMANTIC_CLASSES = {
    "sky": SEM_SKY,
    "ground": SEM_GROUND,
    "vehicle": SEM_VEHICLE,
    "pedestrian": SEM_PEDESTRIAN,
}

# instance id 0 is reserved for "no actor"
PEDESTRIAN_ID_BASE = 1001

VEHICLE_TYPES = {
    "mock.sedan": (2.25, 0.95, 0.75),
    "mock.hatchback": (1.9, 0.88, 0.72),
    "mock.suv": (2.4, 1.05, 0.9),
    "mock.van": (2.7, 1.0, 1.1),
}
PEDESTRIAN_EXTENT = (0.3, 0.3, 0.9)

# vehicles longer than this are not equipped with rigs
LARGE_VEHICLE_LENGTH_M = 6.0

# camera far clip: grazing rays on the infinite ground plane otherwise
# produce astronomically large, numerically useless depths
RENDER_FAR_M = 10_000.0

LIDAR_INTENSITY = {"vehicle": 1.0, "pedestrian": 0.75, "ground": 0.5}

_SUN = np.array([0.3, 0.2, 0.93])
_SUN = _SUN / np.linalg.norm(_SUN)
_GROUND_ALBEDO = np.array([0.40, 0.40, 0.42])
GROUND_COLOR = _GROUND_ALBEDO * (0.35 + 0.65 * max(0.0, float(_SUN[2])))
SKY_COLOR = np.array([0.53, 0.67, 0.82])


def seed_int(*parts) -> int:
    """Stable 64-bit seed from arbitrary labelled parts."""
    token = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(token).digest()[:8], "little")


def rig_eligible(extent) -> bool:
    """Whether a vehicle of the given half-extents may carry a sensor rig."""
    return 2.0 * float(extent[0]) <= LARGE_VEHICLE_LENGTH_M


@dataclass(frozen=True)
class EgoRigSpec:
    """Outward rig selection: a named preset or an external rig file."""

    preset: str = "nuscenes_like"
    variant: str = "mixed_back110"
    width: int | None = None
    height: int | None = None
    file: str | None = None

    def build(self) -> CameraRig:
        if self.file:
            return load_rig_file(self.file, self.width, self.height)
        return ego_preset(self.preset, self.variant, self.width, self.height)

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "variant": self.variant,
            "width": self.width,
            "height": self.height,
            "file": self.file,
        }


@dataclass(frozen=True)
class ExoRigSpec:
    """Half-sphere rig parameters; radius and z offset are always recorded."""

    n: int = 100
    radius: float = 10.0
    z_offset: float = 0.0
    fov_deg: float = 90.0
    width: int = 800
    height: int = 600
    phi_mode: str = "golden"

    def build(self, center=(0.0, 0.0, 0.0)) -> CameraRig:
        return make_exo_rig(
            self.n, self.radius, self.z_offset, center,
            self.fov_deg, self.width, self.height, PhiMode(self.phi_mode),
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "radius": self.radius,
            "z_offset": self.z_offset,
            "fov_deg": self.fov_deg,
            "width": self.width,
            "height": self.height,
            "phi_mode": self.phi_mode,
        }


@dataclass(frozen=True)
class LidarSpec:
    channels: int = 16
    range_m: float = 60.0
    points_per_tick: int = 2048
    elevation_range_deg: tuple[float, float] = (-25.0, 2.0)
    mount_height_m: float = 1.1

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "range_m": self.range_m,
            "points_per_tick": self.points_per_tick,
            "elevation_range_deg": list(self.elevation_range_deg),
            "mount_height_m": self.mount_height_m,
        }


@dataclass(frozen=True)
class SceneConfig:
    """Complete generation recipe for one scene.

    Equal configs reproduce byte-identical datasets on the mock backend;
    the config is what gets snapshotted next to the generated data.
    """

    town: str
    weather: str = "ClearNoon"
    spawn_point: int = 0
    n_vehicles: int = 20
    n_pedestrians: int = 20
    n_parked_vehicles: int = 5
    timesteps: int = 1
    tick_seconds: float = 0.1
    start_offset_range: tuple[float, float] = (1.0, 3.0)
    seed: int = 0
    ego_rig: EgoRigSpec = field(default_factory=EgoRigSpec)
    exo_rig: ExoRigSpec = field(default_factory=ExoRigSpec)
    lidar: LidarSpec = field(default_factory=LidarSpec)
    equip: str = "first"
    include_ego_vehicle: bool = True
    double_capture: bool = False

    def __post_init__(self):
        if self.timesteps < 1:
            raise InvalidArgument(f"timesteps must be >= 1, got {self.timesteps}")
        if self.tick_seconds <= 0:
            raise InvalidArgument(f"tick_seconds must be positive, got {self.tick_seconds}")
        lo, hi = self.start_offset_range
        if lo < 0 or lo > hi:
            raise InvalidArgument(f"bad start_offset_range {self.start_offset_range}")
        object.__setattr__(self, "start_offset_range", (float(lo), float(hi)))
        if self.n_vehicles < 1:
            raise InvalidArgument("need at least the equipped vehicle")
        if self.n_pedestrians < 0:
            raise InvalidArgument("n_pedestrians must be >= 0")
        if not 0 <= self.n_parked_vehicles <= max(self.n_vehicles - 1, 0):
            raise InvalidArgument(
                f"n_parked_vehicles={self.n_parked_vehicles} out of range for "
                f"{self.n_vehicles} vehicles"
            )
        if self.spawn_point < 0:
            raise InvalidArgument("spawn_point must be >= 0")
        if self.equip not in ("first", "all"):
            raise InvalidArgument(f"equip must be 'first' or 'all', got {self.equip!r}")

    def to_dict(self) -> dict:
        return {
            "town": self.town,
            "weather": self.weather,
            "spawn_point": self.spawn_point,
            "n_vehicles": self.n_vehicles,
            "n_pedestrians": self.n_pedestrians,
            "n_parked_vehicles": self.n_parked_vehicles,
            "timesteps": self.timesteps,
            "tick_seconds": self.tick_seconds,
            "start_offset_range": list(self.start_offset_range),
            "seed": self.seed,
            "ego_rig": self.ego_rig.to_dict(),
            "exo_rig": self.exo_rig.to_dict(),
            "lidar": self.lidar.to_dict(),
            "equip": self.equip,
            "include_ego_vehicle": self.include_ego_vehicle,
            "double_capture": self.double_capture,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgument(f"unknown scene config keys: {sorted(unknown)}")
        if "ego_rig" in data and isinstance(data["ego_rig"], dict):
            data["ego_rig"] = EgoRigSpec(**data["ego_rig"])
        if "exo_rig" in data and isinstance(data["exo_rig"], dict):
            data["exo_rig"] = ExoRigSpec(**data["exo_rig"])
        if "lidar" in data and isinstance(data["lidar"], dict):
            lid = dict(data["lidar"])
            if "elevation_range_deg" in lid:
                lid["elevation_range_deg"] = tuple(lid["elevation_range_deg"])
            data["lidar"] = LidarSpec(**lid)
        if "start_offset_range" in data:
            data["start_offset_range"] = tuple(data["start_offset_range"])
        return cls(**data)


@dataclass
class SensorFrame:
    """Pixel-aligned sensor planes for one camera at one tick.

    depth is planar (distance along the camera -Z axis) in meters with 0
    meaning "no hit"; instance id 0 is reserved for "no actor".
    """

    rgb: np.ndarray
    depth: np.ndarray
    semantic: np.ndarray
    instance: np.ndarray
    flow: np.ndarray | None = None

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.uint8)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.semantic = np.asarray(self.semantic, dtype=np.uint16)
        self.instance = np.asarray(self.instance, dtype=np.uint16)
        h, w = self.depth.shape
        if self.rgb.shape != (h, w, 3):
            raise InvalidArgument(f"rgb shape {self.rgb.shape} != {(h, w, 3)}")
        if self.semantic.shape != (h, w) or self.instance.shape != (h, w):
            raise InvalidArgument("semantic/instance planes misaligned with depth")
        if self.flow is not None:
            self.flow = np.asarray(self.flow, dtype=np.float64)
            if self.flow.shape != (h, w, 2):
                raise InvalidArgument(f"flow shape {self.flow.shape} != {(h, w, 2)}")
        if float(self.depth.min(initial=0.0)) < 0:
            raise InvalidArgument("negative depth")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass
class PointCloud:
    """N x 4 world-frame points (x, y, z, intensity), optionally colored."""

    points: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)
        if not np.isfinite(self.points[:, :3]).all():
            raise InvalidArgument("non-finite point coordinates")
        w = self.points[:, 3]
        if w.size and (w.min() < 0.0 or w.max() > 1.0):
            raise InvalidArgument("intensity outside [0, 1]")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if self.colors.shape[0] != self.points.shape[0]:
                raise InvalidArgument("colors do not match points")

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 4)))


@dataclass(frozen=True)
class BBox3D:
    center: tuple[float, float, float]
    extent: tuple[float, float, float]
    yaw: float
    actor_id: int
    class_id: int

    def __post_init__(self):
        if min(self.extent) <= 0:
            raise InvalidArgument(f"box extents must be positive: {self.extent}")

    def to_dict(self) -> dict:
        return {
            "center": list(self.center),
            "extent": list(self.extent),
            "yaw": self.yaw,
            "actor_id": self.actor_id,
            "class_id": self.class_id,
        }


@dataclass
class CameraCapture:
    name: str
    frame: SensorFrame
    pose: CameraPose
    intrinsics: CameraIntrinsics
    fov_deg: float


@dataclass
class ActorCapture:
    actor_id: int
    ego_cameras: list[CameraCapture]
    exo_cameras: list[CameraCapture]
    lidar: PointCloud
    lidar_pose: CameraPose


@dataclass
class CaptureBundle:
    sim_time: float
    step_index: int
    actors: list[ActorCapture]
    bboxes: list[BBox3D]
    vehicle_types: dict[int, str]
    ego_included: bool


@dataclass
class _Actor:
    actor_id: int
    kind: str  # "vehicle" | "pedestrian"
    type_id: str
    center: np.ndarray
    extent: np.ndarray
    yaw: float
    speed: float
    color: np.ndarray

    @property
    def heading(self) -> np.ndarray:
        return np.array([math.cos(self.yaw), math.sin(self.yaw), 0.0])

    def box_row(self) -> np.ndarray:
        return np.array([
            self.center[0], self.center[1], self.center[2],
            self.extent[0], self.extent[1], self.extent[2],
            math.cos(self.yaw), math.sin(self.yaw),
        ])


class MockSession:
    """Single scene on the analytic backend; strictly sequential ticks."""

    def __init__(self, config: SceneConfig):
        if config.town not in TOWNS:
            raise NotFound(f"unknown town {config.town!r} (known: {', '.join(TOWNS)})")
        self.config = config
        self._closed = False
        self._ticks = 0
        self._removed: set[int] = set()
        self._dir_cache: dict = {}

        self._ego_rig = config.ego_rig.build()
        self._exo_rig = config.exo_rig.build(center=(0.0, 0.0, 0.0))
        self._spawn(config)

        eligible = [a for a in self._vehicles if rig_eligible(a.extent)]
        if config.equip == "first":
            self.equipped_ids = [self._vehicles[0].actor_id] if rig_eligible(
                self._vehicles[0].extent) else []
        else:
            self.equipped_ids = [a.actor_id for a in eligible]
        self.ego_id = self._vehicles[0].actor_id

        # warm-up: a seeded random offset realized as whole ticks before the
        # first capture, so actors are already moving when recorded
        lo, hi = config.start_offset_range
        drawn = float(self._rng.uniform(lo, hi))
        self._warmup_ticks = int(round(drawn / config.tick_seconds))
        self.start_offset_drawn = drawn
        self.start_offset_seconds = self._warmup_ticks * config.tick_seconds
        for _ in range(self._warmup_ticks):
            self._advance()

    # -- scene construction -------------------------------------------------

    def _spawn(self, config: SceneConfig):
        self._rng = np.random.default_rng(seed_int("scene", config.town, config.seed))
        grid_rng = np.random.default_rng(seed_int("spawn-grid", config.town))
        grid = grid_rng.uniform(-30.0, 30.0, size=(32, 2))
        ego_xy = grid[config.spawn_point % len(grid)]

        type_names = sorted(VEHICLE_TYPES)
        self._vehicles: list[_Actor] = []
        placed: list[np.ndarray] = []
        n_parked = config.n_parked_vehicles
        for k in range(config.n_vehicles):
            yaw = float(self._rng.uniform(0.0, 2.0 * math.pi))
            type_id = type_names[int(self._rng.integers(len(type_names)))]
            color = 0.32 + 0.14 * self._rng.random(3)
            extent = np.array(VEHICLE_TYPES[type_id])
            if k == 0:
                xy = np.array(ego_xy)
            else:
                xy = self._place(placed, anchor=ego_xy, r_lo=6.0, r_hi=26.0,
                                 min_dist=3.6, label=f"vehicle {k}")
            placed.append(xy)
            speed = float(self._rng.uniform(3.0, 8.0))
            if k >= config.n_vehicles - n_parked:
                speed = 0.0
            self._vehicles.append(_Actor(
                actor_id=k + 1, kind="vehicle", type_id=type_id,
                center=np.array([xy[0], xy[1], extent[2]]),
                extent=extent, yaw=yaw, speed=speed, color=color,
            ))

        self._pedestrians: list[_Actor] = []
        ped_placed: list[np.ndarray] = []
        for k in range(config.n_pedestrians):
            yaw = float(self._rng.uniform(0.0, 2.0 * math.pi))
            color = 0.36 + 0.10 * self._rng.random(3)
            xy = self._place(ped_placed, anchor=ego_xy, r_lo=4.0, r_hi=20.0,
                             min_dist=0.8, label=f"pedestrian {k}")
            ped_placed.append(xy)
            speed = float(self._rng.uniform(0.5, 1.5))
            extent = np.array(PEDESTRIAN_EXTENT)
            self._pedestrians.append(_Actor(
                actor_id=PEDESTRIAN_ID_BASE + k, kind="pedestrian",
                type_id="mock.pedestrian",
                center=np.array([xy[0], xy[1], extent[2]]),
                extent=extent, yaw=yaw, speed=speed, color=color,
            ))

    def _place(self, placed, anchor, r_lo, r_hi, min_dist, label):
        for _ in range(60):
            r = float(self._rng.uniform(r_lo, r_hi))
            ang = float(self._rng.uniform(0.0, 2.0 * math.pi))
            xy = np.array([anchor[0] + r * math.cos(ang),
                           anchor[1] + r * math.sin(ang)])
            if all(np.linalg.norm(xy - q) >= min_dist for q in placed):
                return xy
        raise SpawnError(f"{label}: no collision-free position after 60 attempts")

    # -- simulation ---------------------------------------------------------

    def _check_open(self):
        if self._closed:
            raise StateError("session is closed")

    @property
    def actors(self) -> list[_Actor]:
        return self._vehicles + self._pedestrians

    @property
    def sim_time(self) -> float:
        return (self._warmup_ticks + self._ticks) * self.config.tick_seconds

    @property
    def step_index(self) -> int:
        return max(self._ticks - 1, 0)

    def _advance(self):
        dt = self.config.tick_seconds
        for a in self.actors:
            if a.speed != 0.0:
                a.center = a.center + a.speed * dt * a.heading

    def tick(self) -> CaptureBundle:
        """Advance the world by one tick and capture all equipped rigs."""
        self._check_open()
        self._advance()
        self._ticks += 1
        return self.capture()

    def remove_dynamic_vehicles(self) -> "MockSession":
        """Hide every moving actor; parked (zero-velocity) ones remain."""
        self._check_open()
        self._removed.update(a.actor_id for a in self.actors if a.speed != 0.0)
        return self

    def close(self):
        self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    # -- capture ------------------------------------------------------------

    def _visible_actors(self, include_ego: bool) -> list[_Actor]:
        hidden = set(self._removed)
        if not include_ego:
            hidden.add(self.ego_id)
        return [a for a in self.actors if a.actor_id not in hidden]

    def _pixel_dirs(self, intr: CameraIntrinsics) -> np.ndarray:
        key = (intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height)
        cached = self._dir_cache.get(key)
        if cached is None:
            u = np.arange(intr.width, dtype=np.float64)
            v = np.arange(intr.height, dtype=np.float64)
            xs = (u - intr.cx) / intr.fx
            ys = -(v - intr.cy) / intr.fy
            gx, gy = np.meshgrid(xs, ys)
            cached = np.stack([gx, gy, -np.ones_like(gx)], axis=-1).reshape(-1, 3)
            self._dir_cache[key] = cached
        return cached

    def render(self, pose: CameraPose, intrinsics: CameraIntrinsics,
               include_ego: bool | None = None) -> SensorFrame:
        """Exact analytic render of the current scene state."""
        self._check_open()
        if include_ego is None:
            include_ego = self.config.include_ego_vehicle
        return self._render(pose, intrinsics, self._visible_actors(include_ego))

    def _render(self, pose: CameraPose, intr: CameraIntrinsics,
                actors: Sequence[_Actor]) -> SensorFrame:
        pose.require(Convention.OPENGL)
        h, w = intr.height, intr.width
        dirs_cam = self._pixel_dirs(intr)
        dirs_world = dirs_cam @ pose.rotation.T
        boxes = (np.stack([a.box_row() for a in actors])
                 if actors else np.zeros((0, 8)))
        # t is the planar depth directly because the camera-frame z component
        # of every pixel direction is -1
        t, hit = kernels.cast_rays(pose.translation, dirs_world, boxes)
        hit = np.where(t > RENDER_FAR_M, kernels.HIT_NONE, hit)

        depth = np.where(hit == kernels.HIT_NONE, 0.0, t).reshape(h, w)

        lut_color = np.empty((len(actors) + 2, 3))
        lut_color[0] = SKY_COLOR
        lut_color[1] = GROUND_COLOR
        lut_sem = np.empty(len(actors) + 2, dtype=np.uint16)
        lut_sem[0] = SEM_SKY
        lut_sem[1] = SEM_GROUND
        lut_inst = np.zeros(len(actors) + 2, dtype=np.uint16)
        for i, a in enumerate(actors):
            lut_color[i + 2] = a.color
            lut_sem[i + 2] = SEM_VEHICLE if a.kind == "vehicle" else SEM_PEDESTRIAN
            lut_inst[i + 2] = a.actor_id

        # map hit codes (-1 sky, -2 ground, k box) to LUT rows (0, 1, k+2)
        rows = np.where(hit == kernels.HIT_NONE, 0,
                        np.where(hit == kernels.HIT_GROUND, 1, hit + 2))
        rgb = np.clip(np.rint(lut_color[rows] * 255.0), 0, 255).astype(np.uint8)
        return SensorFrame(
            rgb=rgb.reshape(h, w, 3),
            depth=depth,
            semantic=lut_sem[rows].reshape(h, w),
            instance=lut_inst[rows].reshape(h, w),
        )

    def lidar(self, pose: CameraPose, channels: int | None = None,
              range_m: float | None = None, points_per_tick: int | None = None,
              elevation_range_deg: tuple[float, float] | None = None,
              include_ego: bool | None = None,
              exclude_ids: Iterable[int] = (),
              phase: float | None = None) -> PointCloud:
        """Seeded spinning ray cast against the same analytic geometry.

        Ray directions live in a level sensor frame (x forward, y left,
        z up) attached to ``pose``; azimuths get a per-tick seeded phase.
        """
        self._check_open()
        spec = self.config.lidar
        channels = spec.channels if channels is None else channels
        range_m = spec.range_m if range_m is None else range_m
        if range_m <= 0:
            raise InvalidArgument(f"range_m must be positive, got {range_m}")
        points_per_tick = (spec.points_per_tick if points_per_tick is None
                           else points_per_tick)
        elo, ehi = (spec.elevation_range_deg if elevation_range_deg is None
                    else elevation_range_deg)
        if include_ego is None:
            include_ego = self.config.include_ego_vehicle
        if phase is None:
            phase = float(np.random.default_rng(
                seed_int("lidar", self.config.seed, self._ticks)).random())

        per_channel = points_per_tick // max(channels, 1)
        if per_channel < 1 or channels < 1:
            return PointCloud.empty()
        if channels > 1:
            elevations = np.array([elo + (ehi - elo) * c / (channels - 1)
                                   for c in range(channels)])
        else:
            elevations = np.array([elo])
        azimuths = 2.0 * math.pi * ((np.arange(per_channel) + phase) / per_channel)

        el = np.repeat(np.radians(elevations), per_channel)
        az = np.tile(azimuths, channels)
        # sensor frame -> OPENGL camera axes: (a, b, c) -> (-b, c, -a)
        d_sensor = np.stack([np.cos(el) * np.cos(az),
                             np.cos(el) * np.sin(az),
                             np.sin(el)], axis=-1)
        d_gl = np.stack([-d_sensor[:, 1], d_sensor[:, 2], -d_sensor[:, 0]], axis=-1)
        dirs_world = d_gl @ pose.rotation.T

        actors = [a for a in self._visible_actors(include_ego)
                  if a.actor_id not in set(exclude_ids)]
        boxes = (np.stack([a.box_row() for a in actors])
                 if actors else np.zeros((0, 8)))
        t, hit = kernels.cast_rays(pose.translation, dirs_world, boxes)

        keep = (hit != kernels.HIT_NONE) & (t <= range_m)
        if not keep.any():
            return PointCloud.empty()
        pts = pose.translation + t[keep, None] * dirs_world[keep]
        hk = hit[keep]
        intensity = np.full(hk.shape[0], LIDAR_INTENSITY["ground"])
        for i, a in enumerate(actors):
            intensity[hk == i] = LIDAR_INTENSITY[a.kind]
        return PointCloud(np.column_stack([pts, intensity]))

    def capture(self, include_ego: bool | None = None) -> CaptureBundle:
        """Capture all equipped rigs at the current state without advancing."""
        self._check_open()
        if include_ego is None:
            include_ego = self.config.include_ego_vehicle
        visible = self._visible_actors(include_ego)

        by_id = {a.actor_id: a for a in self.actors}
        captures: list[ActorCapture] = []
        for actor_id in self.equipped_ids:
            body = by_id[actor_id]
            cy, sy = math.cos(body.yaw), math.sin(body.yaw)
            r_body = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
            t_body = body.center

            def world_pose(entry_pose):
                return entry_pose.world_transformed(r_body, t_body)

            ego_caps = [
                CameraCapture(e.name, self._render(world_pose(e.pose), e.intrinsics, visible),
                              world_pose(e.pose), e.intrinsics, e.fov_deg)
                for e in self._ego_rig
            ]
            exo_caps = [
                CameraCapture(e.name, self._render(world_pose(e.pose), e.intrinsics, visible),
                              world_pose(e.pose), e.intrinsics, e.fov_deg)
                for e in self._exo_rig
            ]
            mount = r_body @ np.array([0.0, 0.0, self.config.lidar.mount_height_m]) + t_body
            lidar_pose = look_at(mount, mount + body.heading)
            phase = float(np.random.default_rng(
                seed_int("lidar", self.config.seed, self._ticks, actor_id)).random())
            cloud = self.lidar(lidar_pose, include_ego=include_ego,
                               exclude_ids=(actor_id,), phase=phase)
            captures.append(ActorCapture(actor_id, ego_caps, exo_caps, cloud, lidar_pose))

        bboxes = [
            BBox3D(tuple(a.center), tuple(a.extent), a.yaw, a.actor_id, SEM_VEHICLE)
            for a in visible if a.kind == "vehicle"
        ]
        types = {a.actor_id: a.type_id for a in visible if a.kind == "vehicle"}
        return CaptureBundle(
            sim_time=self.sim_time,
            step_index=self.step_index,
            actors=captures,
            bboxes=bboxes,
            vehicle_types=types,
            ego_included=include_ego,
        )


class MockBackend:
    name = "mock"

    def load(self, config: SceneConfig) -> MockSession:
        return MockSession(config)


_BACKENDS: dict[str, type] = {}


def register_backend(name: str, factory) -> None:
    _BACKENDS[name] = factory


def get_backend(name: str):
    """Instantiate a registered backend by name ("mock", "carla")."""
    try:
        factory = _BACKENDS[name]
    except KeyError:
        raise NotFound(
            f"unknown backend {name!r} (known: {', '.join(sorted(_BACKENDS))})"
        ) from None
    return factory()


register_backend("mock", MockBackend)
