"""Benchmark metrics and reporting.

PSNR / SSIM on [0, 1] images, depth RMSE with range clipping, optional
coverage-masked variants, directory-level evaluation with per-image and
aggregate means, and deterministic leaderboard emission.  A perceptual
metric is supported only through an external command hook; without one the
column is omitted entirely.
"""

from __future__ import annotations

import math
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d, minimum_filter

from .errors import InvalidArgument, ValidationError
from .pose_io import atomic_write_text, dumps_canonical

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
DEPTH_CLIP_M = (0.0, 60.0)


def _check_pair(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidArgument(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != pred.shape[:2]:
            raise InvalidArgument(f"mask shape {mask.shape} != {pred.shape[:2]}")
        if not mask.any():
            raise InvalidArgument("empty mask")
    return pred, gt, mask


def psnr(pred, gt, mask=None) -> float:
    """10*log10(1/MSE) over (masked) pixels, capped at 99 dB."""
    pred, gt, mask = _check_pair(pred, gt, mask)
    diff = pred - gt
    if mask is not None:
        diff = diff[mask]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, -10.0 * math.log10(mse))


def _gaussian_kernel() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return k / k.sum()


_SSIM_KERNEL = _gaussian_kernel()


def _window_means(img: np.ndarray) -> np.ndarray:
    """Gaussian-weighted window means at every fully-interior window center."""
    half = SSIM_WINDOW // 2
    out = correlate1d(img, _SSIM_KERNEL, axis=0, mode="constant")
    out = correlate1d(out, _SSIM_KERNEL, axis=1, mode="constant")
    return out[half:-half, half:-half]


def _ssim_channel(pred: np.ndarray, gt: np.ndarray, window_ok) -> np.ndarray:
    mu_x = _window_means(pred)
    mu_y = _window_means(gt)
    xx = _window_means(pred * pred) - mu_x * mu_x
    yy = _window_means(gt * gt) - mu_y * mu_y
    xy = _window_means(pred * gt) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * xy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (xx + yy + SSIM_C2)
    values = num / den
    return values[window_ok]


def ssim(pred, gt, mask=None) -> float:
    """Mean local SSIM, 11x11 Gaussian window with sigma 1.5, C1=0.01^2,
    C2=0.03^2 on [0, 1] images.

    Only windows fully inside the image count; the masked variant further
    restricts to windows fully inside the mask.  Channels are averaged.
    """
    pred, gt, mask = _check_pair(pred, gt, mask)
    h, w = pred.shape[:2]
    if min(h, w) < SSIM_WINDOW:
        raise InvalidArgument(
            f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    half = SSIM_WINDOW // 2
    if mask is None:
        window_ok = np.ones((h - 2 * half, w - 2 * half), dtype=bool)
    else:
        eroded = minimum_filter(mask.astype(np.uint8), size=SSIM_WINDOW,
                                mode="constant", cval=0)
        window_ok = eroded[half:-half, half:-half].astype(bool)
        if not window_ok.any():
            raise InvalidArgument("mask admits no fully-covered window")
    if pred.ndim == 2:
        return float(np.mean(_ssim_channel(pred, gt, window_ok)))
    vals = [np.mean(_ssim_channel(pred[..., c], gt[..., c], window_ok))
            for c in range(pred.shape[2])]
    return float(np.mean(vals))


def depth_rmse(pred, gt, clip=DEPTH_CLIP_M, mask=None) -> float:
    """RMSE in meters after clamping both depths to ``clip``; only pixels
    with valid ground truth (gt > 0) contribute."""
    pred, gt, mask = _check_pair(pred, gt, mask)
    lo, hi = clip
    valid = gt > 0.0
    if mask is not None:
        valid &= mask
    if not valid.any():
        raise InvalidArgument("no valid ground-truth depth pixels")
    p = np.clip(pred[valid], lo, hi)
    g = np.clip(gt[valid], lo, hi)
    return float(np.sqrt(np.mean((p - g) ** 2)))


@dataclass
class ImageMetrics:
    psnr_db: float
    ssim: float
    drmse_m: float | None = None
    lpips: float | None = None
    mask_coverage: float | None = None

    def to_dict(self) -> dict:
        out = {"psnr_db": self.psnr_db, "ssim": self.ssim}
        if self.drmse_m is not None:
            out["drmse_m"] = self.drmse_m
        if self.lpips is not None:
            out["lpips"] = self.lpips
        if self.mask_coverage is not None:
            out["mask_coverage"] = self.mask_coverage
        return out


@dataclass
class MetricReport:
    images: dict[str, ImageMetrics]
    mean_over_images: dict[str, float]
    mean_over_scenes: dict[str, float]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "images": {k: v.to_dict() for k, v in sorted(self.images.items())},
            "mean_over_images": self.mean_over_images,
            "mean_over_scenes": self.mean_over_scenes,
            "metadata": self.metadata,
        }


def _aggregate(per_image: dict[str, ImageMetrics]):
    keys = ("psnr_db", "ssim", "drmse_m", "lpips", "mask_coverage")

    def mean_of(items):
        out = {}
        for key in keys:
            vals = [getattr(m, key) for m in items]
            vals = [v for v in vals if v is not None]
            if vals:
                out[key] = float(np.mean(vals))
        return out

    mean_images = mean_of(per_image.values())
    scenes: dict[str, list[ImageMetrics]] = {}
    for name, m in per_image.items():
        scenes.setdefault(str(Path(name).parent), []).append(m)
    scene_means = [mean_of(ms) for ms in scenes.values()]
    mean_scenes = {}
    for key in keys:
        vals = [sm[key] for sm in scene_means if key in sm]
        if vals:
            mean_scenes[key] = float(np.mean(vals))
    return mean_images, mean_scenes


def _load_image(path: Path) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def _load_depth(path: Path) -> np.ndarray:
    from .dataset_store import decode_depth, read_png_gray16

    return decode_depth(read_png_gray16(path))


def _load_mask(path: Path) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path).convert("L")) > 0


def check_holdout_listing(listing_path, holdout_towns=("Town02",)) -> None:
    """Refuse train listings that mention a held-out town."""
    import json

    raw = json.loads(Path(listing_path).read_text(encoding="utf-8"))
    entries = raw["train"] if isinstance(raw, dict) and "train" in raw else raw
    offenders = [e for e in entries
                 if any(town in str(e) for town in holdout_towns)]
    if offenders:
        raise ValidationError(
            f"train listing {listing_path} mixes held-out towns "
            f"{list(holdout_towns)} into training data",
            offenders,
        )


def _run_lpips(cmd, pred_path: Path, gt_path: Path) -> float:
    argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
    result = subprocess.run(argv + [str(pred_path), str(gt_path)],
                            capture_output=True, text=True, check=True)
    try:
        return float(result.stdout.strip().splitlines()[-1])
    except (IndexError, ValueError) as exc:
        raise InvalidArgument(
            f"perceptual-metric command printed no score: {result.stdout!r}"
        ) from exc


def evaluate_split(
    pred_dir,
    gt_dir,
    masked: bool = False,
    masks_dir=None,
    clip=DEPTH_CLIP_M,
    lpips_cmd=None,
    train_listing=None,
    holdout_towns=("Town02",),
    split: str = "test",
) -> MetricReport:
    """Pair prediction/ground-truth images by relative path and score them.

    Depth RMSE is added for images that have a sibling ``*_depth.png`` on
    both sides.  ``masked`` scores only coverage-mask pixels; masks are the
    same relative paths under ``masks_dir``.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    if train_listing is not None:
        check_holdout_listing(train_listing, holdout_towns)
    if masked:
        if masks_dir is None:
            raise InvalidArgument("masked evaluation requires masks_dir")
        masks_dir = Path(masks_dir)
        if not masks_dir.is_dir():
            raise InvalidArgument(f"mask directory does not exist: {masks_dir}")

    non_rgb = ("_mask.png", "_depth.png", "_semantic_seg.png",
               "_instance_seg.png", "_optical_flow.png")

    def rgb_set(root: Path):
        return {p.relative_to(root).as_posix()
                for p in root.rglob("*.png")
                if not p.name.endswith(non_rgb)}

    pred_set, gt_set = rgb_set(pred_dir), rgb_set(gt_dir)
    if pred_set != gt_set:
        missing = sorted(gt_set - pred_set)
        extra = sorted(pred_set - gt_set)
        raise ValidationError(
            "prediction/ground-truth file sets differ",
            [f"missing prediction: {m}" for m in missing]
            + [f"unmatched prediction: {e}" for e in extra],
        )
    if not pred_set:
        raise InvalidArgument("no images to evaluate")

    per_image: dict[str, ImageMetrics] = {}
    for rel in sorted(pred_set):
        pred_img = _load_image(pred_dir / rel)
        gt_img = _load_image(gt_dir / rel)
        mask = None
        coverage = None
        if masked:
            mask_path = masks_dir / rel
            if not mask_path.exists():
                raise InvalidArgument(
                    f"missing coverage mask {mask_path} (masks_dir={masks_dir})")
            mask = _load_mask(mask_path)
            coverage = float(mask.mean())

        metrics = ImageMetrics(
            psnr_db=psnr(pred_img, gt_img, mask),
            ssim=ssim(pred_img, gt_img, mask),
            mask_coverage=coverage,
        )
        depth_rel = rel.replace("_rgb.png", "_depth.png")
        if depth_rel != rel and (pred_dir / depth_rel).exists() \
                and (gt_dir / depth_rel).exists():
            metrics.drmse_m = depth_rmse(_load_depth(pred_dir / depth_rel),
                                         _load_depth(gt_dir / depth_rel),
                                         clip, mask)
        if lpips_cmd is not None:
            metrics.lpips = _run_lpips(lpips_cmd, pred_dir / rel, gt_dir / rel)
        per_image[rel] = metrics

    mean_images, mean_scenes = _aggregate(per_image)
    return MetricReport(
        images=per_image,
        mean_over_images=mean_images,
        mean_over_scenes=mean_scenes,
        metadata={"split": split, "masked": masked, "clip_m": list(clip),
                  "n_images": len(per_image)},
    )


def emit_leaderboard(reports, out_base) -> tuple[Path, Path]:
    """Write <base>.json and an aligned <base>.md table.

    Rows are sorted by PSNR descending (mean over images), ties broken by
    SSIM then method name; re-emitting the same reports is byte-identical.
    """
    if not reports:
        raise InvalidArgument("no reports to emit")
    names = [name for name, _ in reports]
    if len(set(names)) != len(names):
        raise InvalidArgument(f"duplicate method names: {sorted(names)}")

    rows = []
    for name, report in reports:
        m = report.mean_over_images
        rows.append({
            "method": name,
            "split": report.metadata.get("split", ""),
            "masked": bool(report.metadata.get("masked", False)),
            "n_images": int(report.metadata.get("n_images", len(report.images))),
            "psnr": m.get("psnr_db"),
            "ssim": m.get("ssim"),
            "drmse": m.get("drmse_m"),
            "lpips": m.get("lpips"),
        })
    rows.sort(key=lambda r: (-r["psnr"], -r["ssim"], r["method"]))

    out_base = Path(out_base)
    json_path = out_base.with_suffix(".json")
    md_path = out_base.with_suffix(".md")
    atomic_write_text(json_path, dumps_canonical({"leaderboard": rows}))

    with_lpips = any(r["lpips"] is not None for r in rows)
    with_drmse = any(r["drmse"] is not None for r in rows)
    headers = ["Method", "PSNR", "SSIM"]
    if with_drmse:
        headers.append("DRMSE")
    if with_lpips:
        headers.append("LPIPS")
    headers += ["Masked", "Images"]

    def fmt(r):
        cells = [r["method"], f"{r['psnr']:.3f}", f"{r['ssim']:.3f}"]
        if with_drmse:
            cells.append("-" if r["drmse"] is None else f"{r['drmse']:.3f}")
        if with_lpips:
            cells.append("-" if r["lpips"] is None else f"{r['lpips']:.3f}")
        cells += ["yes" if r["masked"] else "no", str(r["n_images"])]
        return cells

    table = [headers] + [fmt(r) for r in rows]
    widths = [max(len(row[c]) for row in table) for c in range(len(headers))]
    lines = []
    for i, row in enumerate(table):
        lines.append("| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |")
        if i == 0:
            lines.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
    atomic_write_text(md_path, "\n".join(lines) + "\n")
    return json_path, md_path
