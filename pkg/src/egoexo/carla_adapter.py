"""Scene-backend implementation against a live CARLA server.

Everything simulator-specific lives here: packed depth decoding, semantic
tag and instance-id translation, rotator pose conversion, left-handed
LiDAR coordinates.  The pure converters are covered by fixture tests; the
live session requires a reachable server plus the matching ``carla``
package and is exercised against real servers only (the rest of the
toolkit runs on the mock backend without either).
"""

from __future__ import annotations

import math
import os
import queue
from dataclasses import dataclass

import numpy as np

from .errors import BackendUnavailable, InvalidArgument, VersionMismatch
from .rig_geometry import CameraPose, Convention, convert_convention
from .scene_backend import (
    ActorCapture,
    BBox3D,
    CameraCapture,
    CaptureBundle,
    PointCloud,
    SceneConfig,
    SEM_GROUND,
    SEM_PEDESTRIAN,
    SEM_SKY,
    SEM_VEHICLE,
    SensorFrame,
    register_backend,
    rig_eligible,
)

REQUIRED_CARLA_VERSION = "0.9.15"

ENV_HOST = "EGOEXO_CARLA_HOST"
ENV_PORT = "EGOEXO_CARLA_PORT"

# native depth cameras pack meters into 24 bits across the RGB channels
DEPTH_MAX_METERS = 1000.0

# simulator semantic tags (0.9.15 palette) condensed to the canonical
# four-class vocabulary; anything not listed counts as static ground/scenery
_TAG_SKY = 11
_TAG_VEHICLE_GROUP = (14, 15, 16)  # car, truck, bus
_TAG_TWO_WHEEL = (18, 19)
_TAG_PEDESTRIAN = 12


@dataclass(frozen=True)
class CarlaConnection:
    host: str = "localhost"
    port: int = 2000
    timeout_seconds: float = 10.0
    synchronous_mode: bool = True
    fixed_delta_seconds: float = 0.1

    @classmethod
    def from_env(cls, tick_seconds: float) -> "CarlaConnection":
        return cls(
            host=os.environ.get(ENV_HOST, "localhost"),
            port=int(os.environ.get(ENV_PORT, "2000")),
            fixed_delta_seconds=tick_seconds,
        )


# -- pure converters (fixture-tested) -----------------------------------------

def decode_native_depth(rgb: np.ndarray, max_range_m: float = DEPTH_MAX_METERS) -> np.ndarray:
    """Packed 24-bit RGB depth -> meters: (R + 256 G + 65536 B) / (2^24 - 1)
    scaled by the sensor range."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InvalidArgument(f"expected HxWx3 packed depth, got {rgb.shape}")
    packed = rgb[..., 0] + 256.0 * rgb[..., 1] + 65536.0 * rgb[..., 2]
    return packed / (256.0 ** 3 - 1.0) * max_range_m


def encode_native_depth(depth_m: np.ndarray, max_range_m: float = DEPTH_MAX_METERS) -> np.ndarray:
    """Meters -> packed 24-bit RGB (fixture generation and replay tests)."""
    depth_m = np.asarray(depth_m, dtype=np.float64)
    packed = np.rint(np.clip(depth_m / max_range_m, 0.0, 1.0) * (256.0 ** 3 - 1.0))
    packed = packed.astype(np.uint32)
    out = np.empty(depth_m.shape + (3,), dtype=np.uint8)
    out[..., 0] = packed & 0xFF
    out[..., 1] = (packed >> 8) & 0xFF
    out[..., 2] = (packed >> 16) & 0xFF
    return out


def bgra_to_rgb(raw: bytes, width: int, height: int) -> np.ndarray:
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 4)
    return arr[..., [2, 1, 0]].copy()


def semantic_to_canonical(tags: np.ndarray) -> np.ndarray:
    """Native semantic tags -> {sky, ground, vehicle, pedestrian} ids."""
    tags = np.asarray(tags)
    out = np.full(tags.shape, SEM_GROUND, dtype=np.uint16)
    out[tags == _TAG_SKY] = SEM_SKY
    out[np.isin(tags, _TAG_VEHICLE_GROUP + _TAG_TWO_WHEEL)] = SEM_VEHICLE
    out[tags == _TAG_PEDESTRIAN] = SEM_PEDESTRIAN
    return out


def instance_to_ids(g: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Native instance images carry the actor id in the G/B channels."""
    return (np.asarray(g, dtype=np.uint32)
            + 256 * np.asarray(b, dtype=np.uint32)).astype(np.uint16)


def native_pose(location_xyz, rotation_pyr_deg) -> CameraPose:
    """Simulator transform (location + pitch/yaw/roll degrees) as a
    SIM_NATIVE camera-to-world pose.

    The rotator applies yaw about +z (positive to the right), then pitch
    about +y, then roll about +x on the native axes (x forward, y right,
    z up): R = Rz(yaw) @ Ry(pitch) @ Rx(roll).
    """
    p, y, r = (math.radians(a) for a in rotation_pyr_deg)
    cy, sy = math.cos(y), math.sin(y)
    cp, sp = math.cos(p), math.sin(p)
    cr, sr = math.cos(r), math.sin(r)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return CameraPose(rz @ ry @ rx, np.asarray(location_xyz, dtype=np.float64),
                      Convention.SIM_NATIVE)


def native_pose_to_opengl(location_xyz, rotation_pyr_deg) -> CameraPose:
    return convert_convention(native_pose(location_xyz, rotation_pyr_deg),
                              Convention.OPENGL)


def opengl_pose_to_rotator(pose: CameraPose):
    """OPENGL pose -> (location_xyz, (pitch, yaw, roll) degrees) for sensor
    mounting; inverse of :func:`native_pose_to_opengl`."""
    sim = convert_convention(pose, Convention.SIM_NATIVE)
    r = sim.rotation
    yaw = math.atan2(r[1, 0], r[0, 0])
    pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    roll = math.atan2(r[2, 1], r[2, 2])
    return tuple(float(v) for v in sim.translation), (
        math.degrees(pitch), math.degrees(yaw), math.degrees(roll))


def lidar_points_to_world(points_sensor: np.ndarray, sensor_pose_sim: CameraPose) -> np.ndarray:
    """Native LiDAR points (sensor frame, x/y/z/intensity) -> world frame of
    the canonical right-handed convention (y flipped)."""
    pts = np.asarray(points_sensor, dtype=np.float64).reshape(-1, 4)
    xyz = pts[:, :3] @ sensor_pose_sim.rotation.T + sensor_pose_sim.translation
    xyz[:, 1] = -xyz[:, 1]
    return np.column_stack([xyz, np.clip(pts[:, 3], 0.0, 1.0)])


def vehicle_rig_eligible(half_extent_xyz) -> bool:
    """Large vehicles are never equipped with rigs."""
    return rig_eligible(half_extent_xyz)


# -- live session --------------------------------------------------------------

class CarlaBackend:
    name = "carla"

    def __init__(self, connection: CarlaConnection | None = None):
        self.connection = connection

    def load(self, config: SceneConfig):
        conn = self.connection or CarlaConnection.from_env(config.tick_seconds)
        if abs(conn.fixed_delta_seconds - config.tick_seconds) > 1e-12:
            raise InvalidArgument(
                "fixed_delta_seconds must equal the scene tick_seconds")
        try:
            import carla
        except ImportError as exc:
            raise BackendUnavailable(
                "the 'carla' Python package is not installed; install the "
                f"client matching server {REQUIRED_CARLA_VERSION} or use the "
                "mock backend"
            ) from exc
        return CarlaSession(carla, conn, config)


class CarlaSession:
    """Synchronous-mode session: one connection, strictly sequential ticks."""

    def __init__(self, carla_mod, conn: CarlaConnection, config: SceneConfig):
        self._carla = carla_mod
        self._conn = conn
        self.config = config
        self._closed = False
        self._ticks = 0
        try:
            client = carla_mod.Client(conn.host, conn.port)
            client.set_timeout(conn.timeout_seconds)
            server_version = client.get_server_version()
        except Exception as exc:
            raise BackendUnavailable(
                f"cannot reach server at {conn.host}:{conn.port}: {exc}") from exc
        if not str(server_version).startswith(REQUIRED_CARLA_VERSION):
            raise VersionMismatch(
                f"server version {server_version} != pinned {REQUIRED_CARLA_VERSION}")
        self.server_version = str(server_version)
        try:
            self._world = client.load_world(config.town)
        except Exception as exc:
            raise BackendUnavailable(
                f"cannot load town {config.town!r}: {exc}") from exc
        self._client = client

        settings = self._world.get_settings()
        settings.synchronous_mode = conn.synchronous_mode
        settings.fixed_delta_seconds = conn.fixed_delta_seconds
        self._world.apply_settings(settings)

        self._spawn_actors()
        self._attach_rigs()

        rng = np.random.default_rng(config.seed)
        drawn = float(rng.uniform(*config.start_offset_range))
        self._warmup_ticks = int(round(drawn / config.tick_seconds))
        self.start_offset_drawn = drawn
        self.start_offset_seconds = self._warmup_ticks * config.tick_seconds
        for _ in range(self._warmup_ticks):
            self._world.tick()

    def _spawn_actors(self):
        carla = self._carla
        bpl = self._world.get_blueprint_library()
        vehicle_bps = [
            bp for bp in bpl.filter("vehicle.*")
            if int(bp.get_attribute("number_of_wheels").as_int()) == 4
        ]
        spawn_points = self._world.get_map().get_spawn_points()
        if not spawn_points:
            raise BackendUnavailable("town has no spawn points")
        rng = np.random.default_rng(self.config.seed)

        self.vehicles = []
        start = self.config.spawn_point % len(spawn_points)
        order = [start] + [i for i in range(len(spawn_points)) if i != start]
        for k in range(self.config.n_vehicles):
            bp = vehicle_bps[int(rng.integers(len(vehicle_bps)))]
            actor = None
            while order and actor is None:
                actor = self._world.try_spawn_actor(bp, spawn_points[order.pop(0)])
            if actor is None:
                raise BackendUnavailable(f"could not spawn vehicle {k}")
            parked = k >= self.config.n_vehicles - self.config.n_parked_vehicles
            if not parked:
                actor.set_autopilot(True)
            self.vehicles.append(actor)

        walker_bps = list(bpl.filter("walker.pedestrian.*"))
        self.pedestrians = []
        for _ in range(self.config.n_pedestrians):
            bp = walker_bps[int(rng.integers(len(walker_bps)))]
            loc = self._world.get_random_location_from_navigation()
            if loc is None:
                continue
            actor = self._world.try_spawn_actor(bp, carla.Transform(loc))
            if actor is not None:
                self.pedestrians.append(actor)

        self.ego = self.vehicles[0]
        eligible = [
            v for v in self.vehicles
            if vehicle_rig_eligible((v.bounding_box.extent.x,
                                     v.bounding_box.extent.y,
                                     v.bounding_box.extent.z))
        ]
        self.equipped = [self.ego] if self.config.equip == "first" else eligible

    def _attach_rigs(self):
        carla = self._carla
        self._sensors = []
        self._queues = {}
        ego_rig = self.config.ego_rig.build()
        exo_rig = self.config.exo_rig.build()

        def attach(vehicle, entry, group):
            loc, (pitch, yaw, roll) = opengl_pose_to_rotator(entry.pose)
            transform = carla.Transform(
                carla.Location(x=loc[0], y=loc[1], z=loc[2]),
                carla.Rotation(pitch=pitch, yaw=yaw, roll=roll),
            )
            bpl = self._world.get_blueprint_library()
            sensors = {}
            for kind, bp_name in (
                ("rgb", "sensor.camera.rgb"),
                ("depth", "sensor.camera.depth"),
                ("semantic", "sensor.camera.semantic_segmentation"),
                ("instance", "sensor.camera.instance_segmentation"),
            ):
                bp = bpl.find(bp_name)
                bp.set_attribute("image_size_x", str(entry.intrinsics.width))
                bp.set_attribute("image_size_y", str(entry.intrinsics.height))
                bp.set_attribute("fov", str(entry.fov_deg))
                sensor = self._world.spawn_actor(bp, transform, attach_to=vehicle)
                q: queue.Queue = queue.Queue()
                sensor.listen(q.put)
                self._sensors.append(sensor)
                self._queues[(vehicle.id, group, entry.name, kind)] = q
                sensors[kind] = sensor
            return sensors

        self._rig_entries = {"ego": list(ego_rig), "exo": list(exo_rig)}
        for vehicle in self.equipped:
            for entry in ego_rig:
                attach(vehicle, entry, "ego")
            for entry in exo_rig:
                attach(vehicle, entry, "exo")
            lidar_bp = self._world.get_blueprint_library().find("sensor.lidar.ray_cast")
            lidar_bp.set_attribute("channels", str(self.config.lidar.channels))
            lidar_bp.set_attribute("range", str(self.config.lidar.range_m))
            lidar_bp.set_attribute(
                "points_per_second",
                str(int(self.config.lidar.points_per_tick / self.config.tick_seconds)))
            mount = carla.Transform(
                carla.Location(z=self.config.lidar.mount_height_m))
            lidar = self._world.spawn_actor(lidar_bp, mount, attach_to=vehicle)
            q = queue.Queue()
            lidar.listen(q.put)
            self._sensors.append(lidar)
            self._queues[(vehicle.id, "lidar", "0", "lidar")] = q

    # -- capture ----------------------------------------------------------

    def _drain(self, key, frame_number):
        q = self._queues[key]
        while True:
            data = q.get(timeout=self._conn.timeout_seconds)
            if data.frame >= frame_number:
                return data

    def _sensor_frame(self, vehicle, group, entry, frame_number) -> tuple[SensorFrame, CameraPose]:
        w, h = entry.intrinsics.width, entry.intrinsics.height
        rgb_img = self._drain((vehicle.id, group, entry.name, "rgb"), frame_number)
        depth_img = self._drain((vehicle.id, group, entry.name, "depth"), frame_number)
        sem_img = self._drain((vehicle.id, group, entry.name, "semantic"), frame_number)
        ins_img = self._drain((vehicle.id, group, entry.name, "instance"), frame_number)

        rgb = bgra_to_rgb(bytes(rgb_img.raw_data), w, h)
        depth = decode_native_depth(bgra_to_rgb(bytes(depth_img.raw_data), w, h))
        sem_raw = bgra_to_rgb(bytes(sem_img.raw_data), w, h)
        ins_raw = bgra_to_rgb(bytes(ins_img.raw_data), w, h)
        frame = SensorFrame(
            rgb=rgb,
            depth=depth,
            semantic=semantic_to_canonical(sem_raw[..., 0]),
            instance=instance_to_ids(ins_raw[..., 1], ins_raw[..., 2]),
        )
        tf = rgb_img.transform
        pose = native_pose_to_opengl(
            (tf.location.x, tf.location.y, tf.location.z),
            (tf.rotation.pitch, tf.rotation.yaw, tf.rotation.roll))
        return frame, pose

    def tick(self) -> CaptureBundle:
        from .errors import StateError

        if self._closed:
            raise StateError("session is closed")
        frame_number = self._world.tick()
        self._ticks += 1

        captures = []
        for vehicle in self.equipped:
            ego_caps = []
            for entry in self._rig_entries["ego"]:
                frame, pose = self._sensor_frame(vehicle, "ego", entry, frame_number)
                ego_caps.append(CameraCapture(entry.name, frame, pose,
                                              entry.intrinsics, entry.fov_deg))
            exo_caps = []
            for entry in self._rig_entries["exo"]:
                frame, pose = self._sensor_frame(vehicle, "exo", entry, frame_number)
                exo_caps.append(CameraCapture(entry.name, frame, pose,
                                              entry.intrinsics, entry.fov_deg))
            data = self._drain((vehicle.id, "lidar", "0", "lidar"), frame_number)
            raw = np.frombuffer(bytes(data.raw_data), dtype=np.float32).reshape(-1, 4)
            tf = data.transform
            pose_sim = native_pose(
                (tf.location.x, tf.location.y, tf.location.z),
                (tf.rotation.pitch, tf.rotation.yaw, tf.rotation.roll))
            cloud = PointCloud(lidar_points_to_world(raw, pose_sim))
            captures.append(ActorCapture(
                vehicle.id, ego_caps, exo_caps, cloud,
                convert_convention(pose_sim, Convention.OPENGL)))

        bboxes = []
        types = {}
        for v in self.vehicles:
            tf = v.get_transform()
            ext = v.bounding_box.extent
            bboxes.append(BBox3D(
                (tf.location.x, -tf.location.y, tf.location.z),
                (ext.x, ext.y, ext.z),
                -math.radians(tf.rotation.yaw),
                v.id, SEM_VEHICLE))
            types[v.id] = v.type_id
        return CaptureBundle(
            sim_time=(self._warmup_ticks + self._ticks) * self.config.tick_seconds,
            step_index=max(self._ticks - 1, 0),
            actors=captures,
            bboxes=bboxes,
            vehicle_types=types,
            ego_included=True,
        )

    def remove_dynamic_vehicles(self):
        for v in self.vehicles:
            vel = v.get_velocity()
            if math.sqrt(vel.x ** 2 + vel.y ** 2 + vel.z ** 2) > 1e-3:
                v.destroy()
        return self

    def close(self):
        if self._closed:
            return
        for sensor in getattr(self, "_sensors", []):
            sensor.stop()
            sensor.destroy()
        for actor in getattr(self, "vehicles", []) + getattr(self, "pedestrians", []):
            try:
                actor.destroy()
            except RuntimeError:
                pass
        self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


register_backend("carla", CarlaBackend)
