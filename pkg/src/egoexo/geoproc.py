"""Geometric post-processing.

Depth unprojection to colored point clouds, z-buffer point rasterization
into novel views (the 2.5D baseline), FoV center-cropping, and instance
masking.  Pixel (u, v) with planar depth d unprojects to the camera-frame
point ((u - cx) d / fx, -(v - cy) d / fy, -d); projection is the exact
inverse, so unproject/reproject round trips are identities to float
precision.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .errors import InvalidArgument
from .rig_geometry import CameraIntrinsics, CameraPose, Convention
from .scene_backend import PointCloud, SensorFrame


def unproject_depth(frame: SensorFrame, intrinsics: CameraIntrinsics,
                    pose: CameraPose) -> PointCloud:
    """One colored world-frame point per valid-depth pixel."""
    pose.require(Convention.OPENGL)
    depth = frame.depth
    vs, us = np.nonzero(depth > 0.0)
    if us.size == 0:
        return PointCloud.empty()
    d = depth[vs, us]
    x = (us - intrinsics.cx) * d / intrinsics.fx
    y = -(vs - intrinsics.cy) * d / intrinsics.fy
    cam = np.stack([x, y, -d], axis=-1)
    world = cam @ pose.rotation.T + pose.translation
    pts = np.column_stack([world, np.ones(world.shape[0])])
    return PointCloud(pts, colors=frame.rgb[vs, us])


def project_points(points: np.ndarray, intrinsics: CameraIntrinsics,
                   pose: CameraPose):
    """World points -> (u, v, planar depth); depth <= 0 means behind the
    camera."""
    pose.require(Convention.OPENGL)
    rel = np.asarray(points, dtype=np.float64).reshape(-1, 3) - pose.translation
    cam = rel @ pose.rotation
    d = -cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.cx + intrinsics.fx * cam[:, 0] / d
        v = intrinsics.cy - intrinsics.fy * cam[:, 1] / d
    return u, v, d


def rasterize_points(cloud: PointCloud, intrinsics: CameraIntrinsics,
                     pose: CameraPose, width: int, height: int,
                     point_radius_px: int = 1):
    """Z-buffered nearest-point splatting.

    Each point covers the square of pixels within Chebyshev distance
    ``point_radius_px - 1`` of its rounded projection (radius 1 = a single
    pixel).  Returns (rgb, coverage mask, depth buffer); the mask marks
    pixels that received at least one point.
    """
    if point_radius_px < 1:
        raise InvalidArgument(f"point_radius_px must be >= 1, got {point_radius_px}")
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    zbuf = np.zeros((height, width), dtype=np.float64)
    mask = np.zeros((height, width), dtype=bool)
    if len(cloud) == 0:
        return rgb, mask, zbuf

    u, v, d = project_points(cloud.points[:, :3], intrinsics, pose)
    winner, zbuf = kernels.zbuffer_splat(u, v, d, width, height, point_radius_px)
    mask = winner >= 0
    if cloud.colors is not None:
        covered = np.nonzero(mask)
        rgb[covered] = cloud.colors[winner[covered]]
    return rgb, mask, zbuf


def _round_even(x: float) -> int:
    return int(2 * round(x / 2.0))


def crop_to_fov(frame: SensorFrame, intrinsics: CameraIntrinsics,
                target_fov_deg: float):
    """Center-crop all planes down to a narrower horizontal FoV.

    Pixels are copied, never resampled; the crop window is rounded to an
    even pixel count so the principal point stays centered, and the emitted
    focal length is re-fit to the rounded window so the intrinsics report
    the target FoV exactly.  The vertical extent follows the original
    aspect ratio.
    """
    new_frame, new_intr = _crop_arrays(
        {"rgb": frame.rgb, "depth": frame.depth, "semantic": frame.semantic,
         "instance": frame.instance, "flow": frame.flow},
        intrinsics, target_fov_deg)
    return SensorFrame(**new_frame), new_intr


def crop_bounds(intrinsics: CameraIntrinsics, target_fov_deg: float):
    """(x0, y0, new_width, new_height, new_intrinsics) for the center crop."""
    source_fov = intrinsics.horizontal_fov_rad()
    target = math.radians(target_fov_deg)
    if target > source_fov + 1e-12:
        raise InvalidArgument(
            f"target FoV {target_fov_deg} deg exceeds source "
            f"{math.degrees(source_fov):.6f} deg"
        )
    if abs(target - source_fov) <= 1e-12:
        return 0, 0, intrinsics.width, intrinsics.height, intrinsics

    half_tan = math.tan(target / 2.0)
    w_exact = 2.0 * intrinsics.fx * half_tan
    new_w = _round_even(w_exact)
    new_h = _round_even(w_exact * intrinsics.height / intrinsics.width)
    if new_w < 2 or new_h < 2:
        raise InvalidArgument(f"crop to {target_fov_deg} deg leaves no pixels")
    x0 = (intrinsics.width - new_w) // 2
    y0 = (intrinsics.height - new_h) // 2
    fx = new_w / (2.0 * half_tan)
    fy = fx * (intrinsics.fy / intrinsics.fx)
    new_intr = CameraIntrinsics(fx=fx, fy=fy, cx=new_w / 2.0, cy=new_h / 2.0,
                                width=new_w, height=new_h,
                                k1=intrinsics.k1, k2=intrinsics.k2,
                                p1=intrinsics.p1, p2=intrinsics.p2)
    return x0, y0, new_w, new_h, new_intr


def _crop_arrays(planes: dict, intrinsics: CameraIntrinsics, target_fov_deg: float):
    x0, y0, w, h, new_intr = crop_bounds(intrinsics, target_fov_deg)
    out = {}
    for name, arr in planes.items():
        out[name] = None if arr is None else arr[y0:y0 + h, x0:x0 + w].copy()
    return out, new_intr


def crop_image_to_fov(image: np.ndarray, intrinsics: CameraIntrinsics,
                      target_fov_deg: float):
    """Crop a single image plane; returns (image', intrinsics')."""
    x0, y0, w, h, new_intr = crop_bounds(intrinsics, target_fov_deg)
    return image[y0:y0 + h, x0:x0 + w].copy(), new_intr


def extract_vehicle_pixels(rgb: np.ndarray, instance: np.ndarray, ids):
    """Keep pixels whose instance id is in ``ids``, zero the rest."""
    rgb = np.asarray(rgb)
    instance = np.asarray(instance)
    if rgb.shape[:2] != instance.shape:
        raise InvalidArgument(
            f"rgb {rgb.shape} and instance {instance.shape} planes misaligned")
    ids = sorted(set(int(i) for i in ids))
    mask = np.isin(instance, ids) if ids else np.zeros(instance.shape, dtype=bool)
    out = np.zeros_like(rgb)
    out[mask] = rgb[mask]
    return out, mask
