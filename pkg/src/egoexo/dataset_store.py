"""On-disk dataset layout: writing, validation, codecs, reproducibility.

Tree shape (one scene)::

    <root>/<town>/<weather>/vehicle/spawn_point_<i>[suffix]/
        config.json                  # exact scene config snapshot
        vehicles.json                # actor id -> vehicle type
        step_<j>/
            bboxes.json
            elapsed_time.json
            <actor_id>/
                <group>/             # e.g. nuscenes, nuscenes_lidar, sphere
                    camera_info.json
                    sensors/<idx>_<kind>.<ext>
                    transforms/transforms.json

Sensor kinds: rgb, depth, semantic_seg, instance_seg, optical_flow (png)
and lidar (ply).  Canonical encodings: depth 16-bit millimeters (0 =
invalid, saturates at 65.535 m), id planes 16-bit, optical flow RGBA8
holding two offset fixed-point uint16 channels, point clouds binary PLY
with float32 x/y/z/intensity.  All JSON is UTF-8 with sorted keys, so equal
inputs write byte-identical trees.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import shutil
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import AlreadyExists, InvalidArgument, ParseError, ValidationError
from .pose_io import atomic_write_text, dumps_canonical, read_transforms, write_transforms
from .scene_backend import (
    CaptureBundle,
    PointCloud,
    SceneConfig,
    SEMANTIC_CLASSES,
    LIDAR_INTENSITY,
)

SENSOR_KINDS_PNG = ("rgb", "depth", "semantic_seg", "instance_seg", "optical_flow")
SENSOR_KINDS = SENSOR_KINDS_PNG + ("lidar",)
REQUIRED_KINDS = ("rgb", "depth", "semantic_seg", "instance_seg")

DEPTH_ENCODING = {
    "format": "png_u16",
    "units": "millimeters",
    "invalid_value": 0,
    "max_meters": 65.535,
    "semantics": "planar_z",
    "render_far_clip_m": 10000.0,
}
FLOW_SCALE = 64.0
FLOW_OFFSET = 32768.0
FLOW_ENCODING = {
    "format": "png_rgba8_u16x2",
    "scale": FLOW_SCALE,
    "offset": FLOW_OFFSET,
    "channels": "dx_hi,dx_lo,dy_hi,dy_lo",
    "units": "pixels_per_tick",
}

_SENSOR_RE = re.compile(
    r"^(\d+)_(rgb|depth|semantic_seg|instance_seg|optical_flow|lidar)\.(png|ply)$")
_SPAWN_RE = re.compile(r"^spawn_point_\d+(_with_ego|_no_ego)?$")
_STEP_RE = re.compile(r"^step_\d+$")

SCENE_FILES = ("config.json", "vehicles.json")
STEP_FILES = ("bboxes.json", "elapsed_time.json")


# -- codecs ------------------------------------------------------------------

def encode_depth(depth_m: np.ndarray) -> np.ndarray:
    """Meters -> 16-bit millimeters; 0 stays "invalid", valid depths below
    half a millimeter clamp to 1 mm so they stay valid, values beyond
    65.535 m saturate."""
    mm = np.rint(np.asarray(depth_m, dtype=np.float64) * 1000.0)
    mm = np.clip(mm, 1.0, 65535.0)
    return np.where(np.asarray(depth_m) > 0.0, mm, 0.0).astype(np.uint16)


def decode_depth(depth_mm: np.ndarray) -> np.ndarray:
    return np.asarray(depth_mm, dtype=np.float64) / 1000.0


def encode_flow(flow: np.ndarray) -> np.ndarray:
    """(H, W, 2) px/tick -> RGBA8 with two offset fixed-point u16 channels."""
    flow = np.asarray(flow, dtype=np.float64)
    q = np.clip(np.rint(flow * FLOW_SCALE + FLOW_OFFSET), 0, 65535).astype(np.uint16)
    out = np.empty(flow.shape[:2] + (4,), dtype=np.uint8)
    out[..., 0] = q[..., 0] >> 8
    out[..., 1] = q[..., 0] & 0xFF
    out[..., 2] = q[..., 1] >> 8
    out[..., 3] = q[..., 1] & 0xFF
    return out


def decode_flow(rgba: np.ndarray) -> np.ndarray:
    rgba = np.asarray(rgba, dtype=np.uint16)
    dx = (rgba[..., 0] << 8) | rgba[..., 1]
    dy = (rgba[..., 2] << 8) | rgba[..., 3]
    return (np.stack([dx, dy], axis=-1).astype(np.float64) - FLOW_OFFSET) / FLOW_SCALE


def write_png_rgb8(path: Path, arr: np.ndarray) -> Path:
    Image.fromarray(np.asarray(arr, dtype=np.uint8), "RGB").save(path)
    return path


def write_png_rgba8(path: Path, arr: np.ndarray) -> Path:
    Image.fromarray(np.asarray(arr, dtype=np.uint8), "RGBA").save(path)
    return path


def write_png_gray16(path: Path, arr: np.ndarray) -> Path:
    arr = np.ascontiguousarray(arr, dtype=np.uint16)
    img = Image.frombuffer("I;16", (arr.shape[1], arr.shape[0]), arr.tobytes(),
                           "raw", "I;16", 0, 1)
    img.save(path)
    return path


def read_png_rgb8(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def read_png_rgba8(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGBA"))


def read_png_gray16(path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.dtype == np.int32:  # Pillow widens I;16 to I on some paths
        arr = arr.astype(np.uint16)
    return np.asarray(arr, dtype=np.uint16)


_PLY_HEADER = (
    "ply\n"
    "format binary_little_endian 1.0\n"
    "element vertex {n}\n"
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "property float intensity\n"
    "end_header\n"
)


def write_ply(path: Path, cloud: PointCloud) -> Path:
    data = np.ascontiguousarray(cloud.points, dtype=np.float32)
    payload = _PLY_HEADER.format(n=data.shape[0]).encode("ascii") + data.tobytes()
    tmp = Path(path).with_name(Path(path).name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)
    return Path(path)


def read_ply(path) -> PointCloud:
    blob = Path(path).read_bytes()
    marker = b"end_header\n"
    pos = blob.find(marker)
    if pos < 0 or not blob.startswith(b"ply\n"):
        raise ParseError(f"{path}: not a PLY file")
    header = blob[:pos].decode("ascii", errors="replace")
    m = re.search(r"element vertex (\d+)", header)
    if m is None:
        raise ParseError(f"{path}: missing vertex count")
    n = int(m.group(1))
    body = blob[pos + len(marker):]
    if len(body) != n * 16:
        raise ParseError(f"{path}: payload size {len(body)} != {n} vertices")
    pts = np.frombuffer(body, dtype="<f4").reshape(n, 4).astype(np.float64)
    return PointCloud(pts)


# -- layout ------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetLayout:
    root: Path

    def scene_dir(self, town: str, weather: str, spawn_point: int,
                  suffix: str = "") -> Path:
        return (Path(self.root) / town / weather / "vehicle"
                / f"spawn_point_{spawn_point}{suffix}")


def ego_group_name(rig_name: str) -> str:
    """Directory group for an ego rig: preset family without the suffix."""
    return rig_name.removesuffix("_like") or "ego"


def _camera_info(group: str, meta: dict, cameras) -> dict:
    info = {
        "rig_group": group,
        "pose_convention": "opengl_camera_to_world",
        "depth_encoding": DEPTH_ENCODING,
        "flow_encoding": FLOW_ENCODING,
        "semantic_classes": SEMANTIC_CLASSES,
        "cameras": [
            {
                "idx": i,
                "name": cap.name,
                "fov_deg": cap.fov_deg,
                "width": cap.intrinsics.width,
                "height": cap.intrinsics.height,
            }
            for i, cap in enumerate(cameras)
        ],
    }
    info.update(meta)
    return info


def _write_camera_group(group_dir: Path, cameras, group: str, meta: dict) -> list[Path]:
    sensors = group_dir / "sensors"
    transforms = group_dir / "transforms"
    sensors.mkdir(parents=True, exist_ok=True)
    transforms.mkdir(parents=True, exist_ok=True)
    written = []
    frames = []
    for idx, cap in enumerate(cameras):
        f = cap.frame
        written.append(write_png_rgb8(sensors / f"{idx}_rgb.png", f.rgb))
        written.append(write_png_gray16(sensors / f"{idx}_depth.png", encode_depth(f.depth)))
        written.append(write_png_gray16(sensors / f"{idx}_semantic_seg.png", f.semantic))
        written.append(write_png_gray16(sensors / f"{idx}_instance_seg.png", f.instance))
        if f.flow is not None:
            written.append(write_png_rgba8(sensors / f"{idx}_optical_flow.png",
                                           encode_flow(f.flow)))
        frames.append((f"../sensors/{idx}_rgb.png", cap.pose, cap.intrinsics))
    written.append(write_transforms(frames, transforms / "transforms.json"))
    written.append(atomic_write_text(group_dir / "camera_info.json",
                                     dumps_canonical(_camera_info(group, meta, cameras))))
    return written


def _write_lidar_group(group_dir: Path, actor_capture, group: str, meta: dict) -> list[Path]:
    sensors = group_dir / "sensors"
    transforms = group_dir / "transforms"
    sensors.mkdir(parents=True, exist_ok=True)
    transforms.mkdir(parents=True, exist_ok=True)
    written = [write_ply(sensors / "0_lidar.ply", actor_capture.lidar)]
    doc = {
        "frames": [],
        "meta": {
            "sensor": "lidar",
            "pose_matrix": [[float(v) for v in row]
                            for row in actor_capture.lidar_pose.matrix()],
        },
    }
    written.append(atomic_write_text(transforms / "transforms.json", dumps_canonical(doc)))
    info = {
        "rig_group": group,
        "pose_convention": "opengl_camera_to_world",
        "cameras": [],
        "lidar": dict(meta.get("lidar", {}), intensity=LIDAR_INTENSITY),
    }
    written.append(atomic_write_text(group_dir / "camera_info.json", dumps_canonical(info)))
    return written


def write_capture(bundle: CaptureBundle, scene_dir: Path, meta: dict) -> list[Path]:
    """Write one tick of captures below ``scene_dir``.

    ``meta`` carries the rig identification recorded in camera_info.json:
    ego_group, ego_rig_name, ego_rig_version, exo_version, lidar (spec dict).
    """
    scene_dir = Path(scene_dir)
    step_dir = scene_dir / f"step_{bundle.step_index}"
    step_dir.mkdir(parents=True, exist_ok=True)
    written = [
        atomic_write_text(step_dir / "bboxes.json", dumps_canonical(
            {"bboxes": [b.to_dict() for b in bundle.bboxes]})),
        atomic_write_text(step_dir / "elapsed_time.json", dumps_canonical(
            {"sim_time_seconds": bundle.sim_time})),
    ]
    ego_group = meta.get("ego_group", "nuscenes")
    for actor in bundle.actors:
        actor_dir = step_dir / str(actor.actor_id)
        written += _write_camera_group(
            actor_dir / ego_group, actor.ego_cameras, ego_group,
            {"rig_name": meta.get("ego_rig_name", ""),
             "rig_version": meta.get("ego_rig_version", "")})
        written += _write_camera_group(
            actor_dir / "sphere", actor.exo_cameras, "sphere",
            {"rig_name": "sphere", "rig_version": meta.get("exo_version", "")})
        written += _write_lidar_group(
            actor_dir / f"{ego_group}_lidar", actor, f"{ego_group}_lidar", meta)
    return written


def snapshot_config(config: SceneConfig, path, resolved: dict | None = None) -> Path:
    """Persist the exact generation recipe plus resolved values (drawn start
    offset, backend, derived seed) so the dataset is regenerable."""
    doc = {"config": config.to_dict(), "resolved": resolved or {}}
    return atomic_write_text(Path(path), dumps_canonical(doc))


def load_snapshot(path) -> tuple[SceneConfig, dict]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON: {exc}") from exc
    if "config" in raw:
        return SceneConfig.from_dict(raw["config"]), raw.get("resolved", {})
    return SceneConfig.from_dict(raw), {}


class SceneWriter:
    """Stages one scene directory and promotes it atomically on commit.

    A failed generation leaves nothing at the final path; an existing
    non-empty target is refused unless ``overwrite`` is set.
    """

    def __init__(self, root, town: str, weather: str, spawn_point: int,
                 suffix: str = "", overwrite: bool = False,
                 config: SceneConfig | None = None,
                 resolved: dict | None = None, capture_meta: dict | None = None):
        self.layout = DatasetLayout(Path(root))
        self.final_dir = self.layout.scene_dir(town, weather, spawn_point, suffix)
        self.overwrite = overwrite
        if self.final_dir.exists() and any(self.final_dir.iterdir()) and not overwrite:
            raise AlreadyExists(
                f"{self.final_dir} exists and is not empty (use overwrite)")
        self.config = config
        self.resolved = dict(resolved or {})
        self.capture_meta = dict(capture_meta or {})
        self._types: dict[int, str] = {}
        self._committed = False
        self.staging = Path(root) / f".staging-{uuid.uuid4().hex}"
        self.staging.mkdir(parents=True)

    def write_capture(self, bundle: CaptureBundle) -> list[Path]:
        self._types.update(bundle.vehicle_types)
        return write_capture(bundle, self.staging, self.capture_meta)

    def commit(self) -> Path:
        if self.config is not None:
            snapshot_config(self.config, self.staging / "config.json", self.resolved)
        atomic_write_text(self.staging / "vehicles.json", dumps_canonical(
            {str(k): v for k, v in sorted(self._types.items())}))
        if self.final_dir.exists():
            if not self.overwrite and any(self.final_dir.iterdir()):
                raise AlreadyExists(f"{self.final_dir} exists and is not empty")
            shutil.rmtree(self.final_dir)
        self.final_dir.parent.mkdir(parents=True, exist_ok=True)
        os.replace(self.staging, self.final_dir)
        self._committed = True
        return self.final_dir

    def abort(self):
        if self.staging.exists():
            shutil.rmtree(self.staging)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None or not self._committed:
            self.abort()
        return False


# -- validation ----------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    path: str
    code: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.path}: {self.message}"


@dataclass
class LayoutReport:
    violations: list[Violation] = field(default_factory=list)
    n_scenes: int = 0
    n_images: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "n_scenes": self.n_scenes,
            "n_images": self.n_images,
            "violations": [
                {"path": v.path, "code": v.code, "message": v.message}
                for v in self.violations
            ],
        }


def _png_size(path: Path):
    with Image.open(path) as img:
        return img.size  # (width, height)


def _validate_camera_group(group_dir: Path, rel, out: LayoutReport):
    sensors = group_dir / "sensors"
    transforms_path = group_dir / "transforms" / "transforms.json"
    info_path = group_dir / "camera_info.json"

    info = None
    if not info_path.is_file():
        out.violations.append(Violation(str(rel / "camera_info.json"),
                                        "missing-camera-info", "camera_info.json absent"))
    else:
        try:
            info = json.loads(info_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            out.violations.append(Violation(str(rel / "camera_info.json"),
                                            "camera-info-invalid", str(exc)))

    if not sensors.is_dir():
        out.violations.append(Violation(str(rel / "sensors"),
                                        "missing-sensors", "sensors/ absent"))
        return

    by_idx: dict[int, dict[str, Path]] = {}
    for entry in sorted(sensors.iterdir()):
        m = _SENSOR_RE.match(entry.name)
        if not m:
            out.violations.append(Violation(str(rel / "sensors" / entry.name),
                                            "bad-sensor-name", "unrecognized sensor file"))
            continue
        idx, kind, ext = int(m.group(1)), m.group(2), m.group(3)
        if (kind == "lidar") != (ext == "ply"):
            out.violations.append(Violation(str(rel / "sensors" / entry.name),
                                            "bad-sensor-name", f"kind {kind} with .{ext}"))
            continue
        by_idx.setdefault(idx, {})[kind] = entry

    expected_size = {}
    if info:
        for cam in info.get("cameras", []):
            expected_size[int(cam["idx"])] = (int(cam["width"]), int(cam["height"]))

    for idx in sorted(by_idx):
        kinds = by_idx[idx]
        if "lidar" in kinds and len(kinds) == 1:
            continue
        for kind in REQUIRED_KINDS:
            if kind not in kinds:
                out.violations.append(Violation(
                    str(rel / "sensors" / f"{idx}_{kind}.png"),
                    "missing-aligned-sensor",
                    f"camera {idx} lacks its {kind} plane"))
        want = expected_size.get(idx)
        for kind, path in sorted(kinds.items()):
            if kind == "lidar":
                continue
            if want is not None:
                size = _png_size(path)
                if size != want:
                    out.violations.append(Violation(
                        str(rel / "sensors" / path.name), "size-mismatch",
                        f"{size[0]}x{size[1]} but camera_info says "
                        f"{want[0]}x{want[1]}"))
        if "rgb" in kinds:
            out.n_images += 1

    if not transforms_path.is_file():
        out.violations.append(Violation(str(rel / "transforms" / "transforms.json"),
                                        "missing-transforms", "transforms.json absent"))
        return
    is_lidar_group = group_dir.name.endswith("_lidar")
    if is_lidar_group:
        try:
            doc = json.loads(transforms_path.read_text(encoding="utf-8"))
            if doc.get("frames"):
                out.violations.append(Violation(
                    str(rel / "transforms" / "transforms.json"),
                    "transforms-image-mismatch",
                    "lidar group transforms should cover no images"))
        except json.JSONDecodeError as exc:
            out.violations.append(Violation(
                str(rel / "transforms" / "transforms.json"),
                "transforms-invalid", str(exc)))
        return
    try:
        doc = read_transforms(transforms_path)
    except ValidationError as exc:
        for detail in exc.details or [str(exc)]:
            out.violations.append(Violation(
                str(rel / "transforms" / "transforms.json"),
                "transforms-invalid", str(detail)))
        return
    except ParseError as exc:
        out.violations.append(Violation(
            str(rel / "transforms" / "transforms.json"), "transforms-invalid", str(exc)))
        return

    listed = {frame.file_path for frame in doc.frames}
    actual = {f"../sensors/{idx}_rgb.png" for idx in by_idx
              if "rgb" in by_idx[idx]}
    for missing in sorted(actual - listed):
        out.violations.append(Violation(
            str(rel / "transforms" / "transforms.json"),
            "transforms-image-mismatch", f"image {missing} not covered"))
    for extra in sorted(listed - actual):
        out.violations.append(Violation(
            str(rel / "transforms" / "transforms.json"),
            "transforms-image-mismatch", f"frame {extra} has no image"))
    if info:
        for frame in doc.frames:
            m = re.search(r"(\d+)_rgb\.png$", frame.file_path)
            if not m:
                continue
            want = expected_size.get(int(m.group(1)))
            intr = frame.intrinsics
            if want is not None and (intr.width, intr.height) != want:
                out.violations.append(Violation(
                    str(rel / "transforms" / "transforms.json"),
                    "camera-info-mismatch",
                    f"frame {frame.file_path}: transforms say "
                    f"{intr.width}x{intr.height}, camera_info {want[0]}x{want[1]}"))


def validate_layout(root) -> LayoutReport:
    """Check hierarchy, naming, sensor alignment, transforms consistency and
    pose orthonormality below ``root``; each finding is one located
    violation."""
    root = Path(root)
    report = LayoutReport()
    if not root.is_dir():
        raise InvalidArgument(f"dataset root {root} is not a directory")

    def unexpected(base: Path, rel: Path, allowed_files=(), allow_dirs=None, dir_re=None):
        """Yield child dirs matching expectations, flag everything else."""
        for entry in sorted(base.iterdir()):
            if entry.name.startswith("."):
                continue
            if entry.is_file():
                if entry.name not in allowed_files:
                    report.violations.append(Violation(
                        str(rel / entry.name), "unexpected-entry", "unknown file"))
                continue
            if dir_re is not None and not dir_re.match(entry.name):
                report.violations.append(Violation(
                    str(rel / entry.name), "unexpected-entry", "unknown directory"))
                continue
            if allow_dirs is not None and entry.name not in allow_dirs:
                report.violations.append(Violation(
                    str(rel / entry.name), "unexpected-entry", "unknown directory"))
                continue
            yield entry

    for town in unexpected(root, Path("."), dir_re=re.compile(r"^[A-Za-z0-9_]+$")):
        for weather in unexpected(town, Path(town.name), dir_re=re.compile(r"^[A-Za-z0-9_]+$")):
            rel_w = Path(town.name) / weather.name
            for vehicle in unexpected(weather, rel_w, allow_dirs=("vehicle",)):
                rel_v = rel_w / vehicle.name
                for scene in unexpected(vehicle, rel_v, dir_re=_SPAWN_RE):
                    report.n_scenes += 1
                    rel_s = rel_v / scene.name
                    for step in unexpected(scene, rel_s, allowed_files=SCENE_FILES,
                                           dir_re=_STEP_RE):
                        rel_t = rel_s / step.name
                        for actor in unexpected(step, rel_t, allowed_files=STEP_FILES,
                                                dir_re=re.compile(r"^\d+$")):
                            rel_a = rel_t / actor.name
                            for group in unexpected(actor, rel_a,
                                                    dir_re=re.compile(r"^[a-z0-9_]+$")):
                                _validate_camera_group(group, rel_a / group.name, report)
    return report


def tree_digest(root) -> str:
    """SHA-256 over sorted relative paths and file contents."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(path.relative_to(root).as_posix().encode("utf-8"))
        h.update(b"\0")
        h.update(path.read_bytes())
        h.update(b"\0")
    return h.hexdigest()
