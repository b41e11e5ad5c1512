"""Camera rig construction.

Half-sphere lattice placement for inward-facing surround cameras, outward
ego camera presets, FoV-derived pinhole intrinsics, and conversions between
the simulator camera convention and the OpenGL/Blender one.

Conventions used throughout:

* A :class:`CameraPose` is camera-to-world: ``p_world = R @ p_cam + t``.
* ``OPENGL`` camera axes: -Z is the look direction, +X right, +Y up.
* ``SIM_NATIVE`` camera axes: +X is the look direction, +Y right, +Z up
  (the left-handed simulator style).  Converting between the two also flips
  the world y-axis so that rotations keep determinant +1 on both sides; the
  OPENGL-side world is therefore right-handed x-forward / y-left / z-up.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ConventionError, InvalidArgument, NotFound, ParseError

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
# The widely circulated pseudocode variant of the lattice angle; kept as a
# switchable mode for bit-level comparisons against such implementations.
VERBATIM_ANGLE = 3.0 * math.pi - math.sqrt(5.0)

UNIT_NORM_TOL = 1e-12
ROTATION_TOL = 1e-9


class Convention(str, enum.Enum):
    SIM_NATIVE = "sim_native"
    OPENGL = "opengl"


class PhiMode(str, enum.Enum):
    GOLDEN = "golden"
    VERBATIM = "verbatim"

    @property
    def angle(self) -> float:
        return GOLDEN_ANGLE if self is PhiMode.GOLDEN else VERBATIM_ANGLE


class RigPreset(str, enum.Enum):
    NUSCENES_LIKE = "nuscenes_like"
    KITTI360_LIKE = "kitti360_like"
    WAYMO_LIKE = "waymo_like"
    ARGOVERSE_LIKE = "argoverse_like"
    INTERFUSER_LIKE = "interfuser_like"


class RigVariant(str, enum.Enum):
    FOV90_ALL = "fov90_all"
    MIXED_BACK110 = "mixed_back110"


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole matrix parameters plus (always-zero here) distortion terms."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgument(f"focal lengths must be positive: {self.fx}, {self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidArgument(
                f"principal point ({self.cx}, {self.cy}) outside image "
                f"{self.width}x{self.height}"
            )

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def horizontal_fov_rad(self) -> float:
        return 2.0 * math.atan(self.width / (2.0 * self.fx))


def _as_rotation(m) -> np.ndarray:
    r = np.asarray(m, dtype=np.float64)
    if r.shape != (3, 3):
        raise InvalidArgument(f"rotation must be 3x3, got {r.shape}")
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > ROTATION_TOL:
        raise InvalidArgument(f"rotation not orthonormal (|R^T R - I| = {err:.3e})")
    det = float(np.linalg.det(r))
    if abs(det - 1.0) > ROTATION_TOL:
        raise InvalidArgument(f"rotation determinant {det} != +1")
    return r


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid transform tagged with its camera-axes convention.

    ``degenerate`` marks poses whose orientation came from a fallback axis
    choice (e.g. look_at with an up hint parallel to the view direction).
    """

    rotation: np.ndarray
    translation: np.ndarray
    convention: Convention
    degenerate: bool = False

    def __post_init__(self):
        r = _as_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not isinstance(self.convention, Convention):
            object.__setattr__(self, "convention", Convention(self.convention))

    @classmethod
    def identity(cls, convention: Convention) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3), convention)

    @classmethod
    def from_matrix(cls, m, convention: Convention) -> "CameraPose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidArgument(f"expected 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3], convention)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def forward(self) -> np.ndarray:
        """Look direction in world coordinates."""
        if self.convention is Convention.OPENGL:
            return -self.rotation[:, 2]
        return self.rotation[:, 0]

    def require(self, convention: Convention) -> "CameraPose":
        if self.convention is not convention:
            raise ConventionError(
                f"pose tagged {self.convention.value}, expected {convention.value}"
            )
        return self

    def world_transformed(self, rotation, translation) -> "CameraPose":
        """Left-compose a world-frame rigid motion (e.g. a body-to-world)."""
        rw = np.asarray(rotation, dtype=np.float64)
        tw = np.asarray(translation, dtype=np.float64).reshape(3)
        return CameraPose(
            rw @ self.rotation,
            rw @ self.translation + tw,
            self.convention,
            self.degenerate,
        )


class InwardAngles(NamedTuple):
    pitch: float
    yaw: float
    degenerate: bool


def _position_angles(x: float, y: float, z: float) -> InwardAngles:
    rxy2 = x * x + y * y
    pitch = math.asin(max(-1.0, min(1.0, z)))
    if rxy2 == 0.0:
        # pole: yaw undefined, fixed to 0
        return InwardAngles(pitch, 0.0, True)
    sign = 1.0 if x >= 0.0 else -1.0
    arg = max(-1.0, min(1.0, y / math.sqrt(rxy2)))
    return InwardAngles(pitch, sign * math.acos(arg), False)


@dataclass(frozen=True)
class SpherePoint:
    """Unit half-sphere sample with its elevation/azimuth angles."""

    x: float
    y: float
    z: float
    pitch: float
    yaw: float
    degenerate: bool = False

    def __post_init__(self):
        norm = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise InvalidArgument(f"sphere point not unit norm: {norm!r}")
        if self.z < 0.0:
            raise InvalidArgument(f"sphere point below the equator: z={self.z!r}")

    @classmethod
    def from_xyz(cls, x: float, y: float, z: float) -> "SpherePoint":
        a = _position_angles(x, y, z)
        return cls(x, y, z, a.pitch, a.yaw, a.degenerate)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


def fibonacci_half_sphere(n: int, phi_mode: PhiMode = PhiMode.GOLDEN) -> list[SpherePoint]:
    """Evenly distribute n points on the unit upper half-sphere.

    Heights are the n inclusive linspace values on [0, 1]; each step rotates
    the azimuth by the golden angle (or the verbatim pseudocode constant,
    see :class:`PhiMode`).  Point i is
    ``(cos(phi*i)*r, sin(phi*i)*r, y_i)`` with ``r = sqrt(1 - y_i^2)``.
    """
    if n < 1:
        raise InvalidArgument(f"need at least one point, got n={n}")
    phi = PhiMode(phi_mode).angle
    points = []
    for i in range(n):
        y = i / (n - 1) if n > 1 else 0.0
        r = math.sqrt(1.0 - y * y)
        points.append(
            SpherePoint.from_xyz(math.cos(phi * i) * r, math.sin(phi * i) * r, y)
        )
    return points


def inward_orientation(point) -> InwardAngles:
    """Elevation/azimuth of a half-sphere position.

    pitch = arcsin(z), yaw = sign(x) * arccos(y / sqrt(x^2 + y^2)) with
    sign(0) = +1.  At the pole (x = y = 0) yaw is undefined; it is returned
    as 0 with the degenerate flag set.  These are angles of the *position*;
    an inward-facing camera looks along the negated radial direction.
    """
    if isinstance(point, SpherePoint):
        return InwardAngles(point.pitch, point.yaw, point.degenerate)
    x, y, z = (float(v) for v in np.asarray(point, dtype=np.float64).reshape(3))
    return _position_angles(x, y, z)


def look_at(position, target, up_hint=(0.0, 0.0, 1.0)) -> CameraPose:
    """OPENGL-convention pose at ``position`` looking at ``target``.

    +Y is as close to ``up_hint`` as orthogonality permits.  An up hint
    parallel to the view direction falls back to the world z axis (or y
    axis) and marks the pose degenerate.
    """
    position = np.asarray(position, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    f = target - position
    norm = float(np.linalg.norm(f))
    if norm == 0.0:
        raise InvalidArgument("look_at position equals target")
    f = f / norm

    degenerate = False
    up = np.asarray(up_hint, dtype=np.float64).reshape(3)
    side = np.cross(f, up)
    if np.linalg.norm(side) < 1e-12:
        degenerate = True
        for fallback in ((0.0, 0.0, 1.0), (0.0, 1.0, 0.0)):
            up = np.array(fallback)
            side = np.cross(f, up)
            if np.linalg.norm(side) >= 1e-12:
                break
    s = side / np.linalg.norm(side)
    u = np.cross(s, f)
    rotation = np.column_stack([s, u, -f])
    return CameraPose(rotation, position, Convention.OPENGL, degenerate)


# Camera-axes basis change, GL -> simulator coordinates (columns are the
# images of the GL basis vectors: right -> +y, up -> +z, back -> -x).
_CAM_GL_TO_SIM = np.array(
    [
        [0.0, 0.0, -1.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
    ]
)
# World y-flip pairing the camera basis change so determinants stay +1.
_WORLD_FLIP = np.diag([1.0, -1.0, 1.0])


def convert_convention(pose: CameraPose, target: Convention) -> CameraPose:
    """Re-express a pose in the other camera-axes convention.

    The round trip is the exact identity: both change-of-basis matrices are
    signed permutations.
    """
    target = Convention(target)
    if pose.convention is target:
        return pose
    if pose.convention is Convention.SIM_NATIVE and target is Convention.OPENGL:
        rotation = _WORLD_FLIP @ pose.rotation @ _CAM_GL_TO_SIM
    elif pose.convention is Convention.OPENGL and target is Convention.SIM_NATIVE:
        rotation = _WORLD_FLIP @ pose.rotation @ _CAM_GL_TO_SIM.T
    else:  # pragma: no cover - two-member enum
        raise ConventionError(f"cannot convert {pose.convention} -> {target}")
    translation = _WORLD_FLIP @ pose.translation
    return CameraPose(rotation, translation, target, pose.degenerate)


def fov_to_intrinsics(fov_deg: float, width: int, height: int) -> CameraIntrinsics:
    """Distortion-free pinhole intrinsics from a horizontal FoV."""
    if not 0.0 < fov_deg < 180.0:
        raise InvalidArgument(f"fov must be in (0, 180) degrees, got {fov_deg}")
    if width < 1 or height < 1:
        raise InvalidArgument(f"invalid image size {width}x{height}")
    f = width / (2.0 * math.tan(math.radians(fov_deg) / 2.0))
    return CameraIntrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                            width=int(width), height=int(height))


@dataclass(frozen=True)
class RigEntry:
    name: str
    pose: CameraPose
    intrinsics: CameraIntrinsics
    fov_deg: float


@dataclass(frozen=True)
class CameraRig:
    """Ordered, uniquely named cameras posed relative to one body frame."""

    entries: tuple[RigEntry, ...]
    name: str = ""
    version: str = ""

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise InvalidArgument(f"duplicate camera names in rig: {names}")
        conventions = {e.pose.convention for e in self.entries}
        if len(conventions) > 1:
            raise InvalidArgument("rig mixes pose conventions")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[RigEntry]:
        return iter(self.entries)

    @property
    def convention(self) -> Convention:
        return self.entries[0].pose.convention if self.entries else Convention.OPENGL


def make_exo_rig(
    n: int,
    radius: float,
    z_offset: float = 0.0,
    center=(0.0, 0.0, 0.0),
    fov_deg: float = 90.0,
    width: int = 800,
    height: int = 600,
    phi_mode: PhiMode = PhiMode.GOLDEN,
) -> CameraRig:
    """Half-sphere rig of n inward-facing cameras around ``center``.

    Cameras sit at ``center + radius * p + (0, 0, z_offset)`` for each
    lattice point p and look at ``center``; all share the same intrinsics.
    """
    if radius <= 0:
        raise InvalidArgument(f"radius must be positive, got {radius}")
    center = np.asarray(center, dtype=np.float64).reshape(3)
    intr = fov_to_intrinsics(fov_deg, width, height)
    pad = max(3, len(str(n - 1)))
    entries = []
    for i, p in enumerate(fibonacci_half_sphere(n, phi_mode)):
        position = center + radius * p.as_array() + np.array([0.0, 0.0, z_offset])
        pose = look_at(position, center)
        entries.append(RigEntry(f"exo_{i:0{pad}d}", pose, intr, float(fov_deg)))
    return CameraRig(tuple(entries), name="sphere", version=f"sphere/1/n={n}")


def _rotation_rpy(roll_deg: float, pitch_deg: float, yaw_deg: float) -> np.ndarray:
    """R = Rz(yaw) @ Ry(pitch) @ Rx(roll), standard right-handed matrices.

    In simulator camera axes (+x look, +y right, +z up) positive yaw turns
    toward +y (to the right) and positive pitch tilts toward -z (down).
    """
    r, p, y = (math.radians(a) for a in (roll_deg, pitch_deg, yaw_deg))
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _build_rig(data: dict, width: int | None, height: int | None,
               variant: RigVariant | None) -> CameraRig:
    try:
        rig_name = data["name"]
        raw_entries = data["entries"]
    except KeyError as exc:
        raise ParseError(f"rig file missing key {exc}") from exc
    version = data.get("version", f"{rig_name}/unversioned")

    entries = []
    for i, raw in enumerate(raw_entries):
        try:
            fov = float(raw["fov_deg"])
            if variant is RigVariant.FOV90_ALL:
                fov = 90.0
            w = int(width or raw["width"])
            h = int(height or raw["height"])
            rpy = raw["rotation_rpy_deg"]
            sim_pose = CameraPose(
                _rotation_rpy(*rpy),
                np.asarray(raw["translation_m"], dtype=np.float64),
                Convention.SIM_NATIVE,
            )
            entries.append(
                RigEntry(
                    name=raw["name"],
                    pose=convert_convention(sim_pose, Convention.OPENGL),
                    intrinsics=fov_to_intrinsics(fov, w, h),
                    fov_deg=fov,
                )
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"rig entry {i}: {exc!r}") from exc
    return CameraRig(tuple(entries), name=rig_name, version=version)


def _preset_resource(preset: RigPreset):
    return resources.files("egoexo").joinpath("presets", f"{preset.value}.json")


def list_presets() -> list[str]:
    return [p.value for p in RigPreset]


def preset_data(name) -> dict:
    """Raw content of a versioned preset file."""
    try:
        preset = RigPreset(str(name).lower())
    except ValueError:
        raise NotFound(f"unknown rig preset {name!r}") from None
    with _preset_resource(preset).open("r", encoding="utf-8") as fh:
        return json.load(fh)


def ego_preset(
    name,
    variant=RigVariant.MIXED_BACK110,
    width: int | None = None,
    height: int | None = None,
) -> CameraRig:
    """Outward-facing ego rig loaded from a versioned preset file.

    ``variant`` selects between uniform 90 degree cameras and the mixed
    setup whose extra rear camera keeps its wide FoV.  ``width``/``height``
    override the preset image size (the mounting poses are unchanged).
    """
    try:
        variant = RigVariant(str(variant).lower()) if not isinstance(variant, RigVariant) else variant
    except ValueError:
        raise InvalidArgument(f"unknown rig variant {variant!r}") from None
    return _build_rig(preset_data(name), width, height, variant)


def load_rig_file(path, width: int | None = None, height: int | None = None) -> CameraRig:
    """Load a user rig file (same JSON schema as the shipped presets)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return _build_rig(data, width, height, variant=None)
