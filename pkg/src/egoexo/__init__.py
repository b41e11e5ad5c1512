"""Synthetic ego-exo multi-view driving dataset toolkit.

Generation runs against a pluggable scene backend ("mock" is the built-in
deterministic analytic one, "carla" targets a live simulator); datasets are
written in a fixed on-disk layout with NeRFStudio-style transforms files
and evaluated with the bundled PSNR/SSIM/depth-RMSE harness.
"""

__version__ = "0.1.0"

from . import carla_adapter  # noqa: F401  (registers the carla backend)
from .rig_geometry import (
    CameraIntrinsics,
    CameraPose,
    CameraRig,
    Convention,
    PhiMode,
    SpherePoint,
    convert_convention,
    ego_preset,
    fibonacci_half_sphere,
    fov_to_intrinsics,
    inward_orientation,
    look_at,
    make_exo_rig,
)
from .scene_backend import (
    CaptureBundle,
    PointCloud,
    SceneConfig,
    SensorFrame,
    get_backend,
)

__all__ = [
    "CameraIntrinsics",
    "CameraPose",
    "CameraRig",
    "CaptureBundle",
    "Convention",
    "PhiMode",
    "PointCloud",
    "SceneConfig",
    "SensorFrame",
    "SpherePoint",
    "__version__",
    "convert_convention",
    "ego_preset",
    "fibonacci_half_sphere",
    "fov_to_intrinsics",
    "get_backend",
    "inward_orientation",
    "look_at",
    "make_exo_rig",
]
