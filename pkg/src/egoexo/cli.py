"""Command-line entry point.

Subcommands: generate, postprocess, validate, evaluate, presets.  One
declarative JSON config drives generation; every run logs the resolved
per-scene config so outputs are reproducible from logs alone.

Exit codes: 0 success, 1 validation/metric failure, 2 usage error,
3 backend unavailable.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, carla_adapter  # noqa: F401  (registers the backend)
from . import geoproc, metrics
from .dataset_store import (
    SceneWriter,
    dumps_canonical,
    ego_group_name,
    read_png_gray16,
    read_png_rgb8,
    validate_layout,
    write_png_gray16,
    write_png_rgb8,
)
from .errors import (
    AlreadyExists,
    BackendUnavailable,
    ConventionError,
    DegenerateGeometry,
    EgoExoError,
    InvalidArgument,
    NotFound,
    ParseError,
    SpawnError,
    StateError,
    ValidationError,
)
from .pose_io import (
    NormalizationScope,
    atomic_write_text,
    normalize_documents,
    read_transforms,
    split_frames,
    write_transforms,
)
from .rig_geometry import RigPreset, list_presets, preset_data
from .scene_backend import SceneConfig, get_backend, seed_int

logger = logging.getLogger("egoexo")


# -- config resolution ---------------------------------------------------------

def resolve_config_file(path: Path):
    """Load a generation config: either one scene object or
    {seed, backend, defaults, scenes: [...]}; per-scene seeds derive from
    the single top-level seed unless given explicitly."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: config must be a JSON object")

    backend = raw.pop("backend", "mock")
    top_seed = raw.pop("seed", 0)
    if "scenes" in raw:
        defaults = raw.get("defaults", {})
        scene_dicts = raw["scenes"]
        extra = set(raw) - {"scenes", "defaults"}
        if extra:
            raise InvalidArgument(f"unknown top-level config keys: {sorted(extra)}")
    else:
        defaults = {}
        scene_dicts = [raw]

    config_dir = Path(path).parent
    scenes = []
    for idx, scene in enumerate(scene_dicts):
        merged = {**defaults, **scene}
        if "seed" not in merged:
            merged["seed"] = seed_int(
                "scene-seed", top_seed, idx,
                merged.get("town"), merged.get("spawn_point", 0)) % (2 ** 31)
        rig = merged.get("ego_rig")
        if isinstance(rig, dict) and rig.get("file"):
            rig = dict(rig)
            rig["file"] = str((config_dir / rig["file"]).resolve())
            merged["ego_rig"] = rig
        scenes.append(SceneConfig.from_dict(merged))
    return backend, scenes


def _capture_meta(config: SceneConfig) -> dict:
    ego = config.ego_rig.build()
    return {
        "ego_group": ego_group_name(ego.name),
        "ego_rig_name": ego.name,
        "ego_rig_version": ego.version,
        "exo_version": config.exo_rig.build().version,
        "lidar": config.lidar.to_dict(),
    }


def generate_scene(scene_dict: dict, backend_name: str, out_dir: str,
                   overwrite: bool = False) -> dict:
    """Generate one scene (worker-safe: plain args, plain return)."""
    config = SceneConfig.from_dict(scene_dict)
    backend = get_backend(backend_name)
    meta = _capture_meta(config)
    session = backend.load(config)
    try:
        resolved = {
            "backend": backend_name,
            "scene_seed": config.seed,
            "start_offset_seconds": session.start_offset_seconds,
            "start_offset_drawn": session.start_offset_drawn,
            "warmup_ticks": int(round(session.start_offset_seconds
                                      / config.tick_seconds)),
            "format_version": 1,
        }
        logger.info("resolved scene config: %s",
                    json.dumps({"config": config.to_dict(), "resolved": resolved},
                               sort_keys=True))

        passes = [("", None)]
        if config.double_capture:
            passes = [("_with_ego", True), ("_no_ego", False)]
        writers = [
            SceneWriter(out_dir, config.town, config.weather, config.spawn_point,
                        suffix=sfx, overwrite=overwrite, config=config,
                        resolved=dict(resolved, ego_included=inc),
                        capture_meta=meta)
            for sfx, inc in passes
        ]
        try:
            for _ in range(config.timesteps):
                bundle = session.tick()
                for (sfx, include), writer in zip(passes, writers):
                    if include is None or include == bundle.ego_included:
                        writer.write_capture(bundle)
                    else:
                        writer.write_capture(session.capture(include_ego=include))
            paths = [str(w.commit()) for w in writers]
        except BaseException:
            for w in writers:
                w.abort()
            raise
    finally:
        session.close()
    return {"town": config.town, "spawn_point": config.spawn_point,
            "scenes": paths, "timesteps": config.timesteps}


def cmd_generate(args) -> int:
    backend_name, scenes = resolve_config_file(Path(args.config))
    if args.backend:
        backend_name = args.backend
    out_dir = str(args.out)
    Path(out_dir).mkdir(parents=True, exist_ok=True)

    scene_dicts = [c.to_dict() for c in scenes]
    if args.workers > 1 and len(scene_dicts) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = [pool.submit(generate_scene, sd, backend_name, out_dir,
                                   args.overwrite) for sd in scene_dicts]
            results = [f.result() for f in futures]
    else:
        results = [generate_scene(sd, backend_name, out_dir, args.overwrite)
                   for sd in scene_dicts]
    for res in results:
        for path in res["scenes"]:
            logger.info("wrote scene %s", path)
    print(json.dumps({"scenes": [p for r in results for p in r["scenes"]]},
                     sort_keys=True))
    return 0


# -- postprocessing ------------------------------------------------------------

def _camera_group_dirs(root: Path, groups=None):
    """Camera rig-group directories under a dataset root (skips lidar
    groups and previously generated postprocessing outputs)."""
    for tpath in sorted(root.rglob("transforms/transforms.json")):
        group_dir = tpath.parent.parent
        name = group_dir.name
        if name.endswith("_lidar") or "_fov" in name or name.endswith("_normalized"):
            continue
        if groups and name not in groups:
            continue
        yield group_dir


def cmd_post_split(args) -> int:
    root = Path(args.root)
    n_groups = 0
    for group_dir in _camera_group_dirs(root, args.groups):
        doc = read_transforms(group_dir / "transforms" / "transforms.json")
        train, test = split_frames(doc.frames, args.ratio, args.seed)
        out_dir = group_dir / "splits"
        out_dir.mkdir(exist_ok=True)
        common = {"ratio": args.ratio, "seed": args.seed,
                  "n_total": len(doc.frames)}
        atomic_write_text(out_dir / "train.json", dumps_canonical(
            dict(common, files=[f.file_path for f in train])))
        atomic_write_text(out_dir / "test.json", dumps_canonical(
            dict(common, files=[f.file_path for f in test])))
        n_groups += 1
    if n_groups == 0:
        raise InvalidArgument(f"no camera groups found under {root}")
    print(json.dumps({"groups_split": n_groups}))
    return 0


def cmd_post_normalize(args) -> int:
    root = Path(args.root)
    scope = NormalizationScope(args.scope)
    # group docs per (scene, actor, group-name) so ACROSS_TIMESTEPS can pool
    # all steps of one actor's rig
    pools: dict[tuple, list[Path]] = {}
    for group_dir in _camera_group_dirs(root, args.groups):
        actor_dir = group_dir.parent
        step_dir = actor_dir.parent
        key = (step_dir.parent, actor_dir.name, group_dir.name)
        pools.setdefault(key, []).append(group_dir)

    if not pools:
        raise InvalidArgument(f"no camera groups found under {root}")
    n_docs = 0
    for key, group_dirs in sorted(pools.items()):
        group_dirs = sorted(group_dirs)
        docs = [read_transforms(g / "transforms" / "transforms.json")
                for g in group_dirs]
        new_docs, sims = normalize_documents(docs, scope)
        sims_per_doc = sims if len(sims) == len(docs) else sims * len(docs)
        for g, doc, sim in zip(group_dirs, new_docs, sims_per_doc):
            out_dir = g / "transforms_normalized"
            out_dir.mkdir(exist_ok=True)
            frames = [(f.file_path,
                       f.pose(),
                       f.intrinsics) for f in doc.frames]
            write_transforms(frames, out_dir / "transforms.json", meta={
                "normalization": {"scope": scope.value,
                                  "applied_similarity": sim.to_dict()}})
            n_docs += 1
    print(json.dumps({"documents_normalized": n_docs}))
    return 0


def cmd_post_vehicles_only(args) -> int:
    root = Path(args.root)
    n_images = 0
    for group_dir in _camera_group_dirs(root, args.groups):
        step_dir = group_dir.parent.parent
        bbox_file = step_dir / "bboxes.json"
        if not bbox_file.exists():
            continue
        boxes = json.loads(bbox_file.read_text(encoding="utf-8"))["bboxes"]
        vehicle_ids = {b["actor_id"] for b in boxes}
        sensors = group_dir / "sensors"
        out_dir = group_dir / "sensors_vehicles_only"
        for rgb_path in sorted(sensors.glob("*_rgb.png")):
            idx = rgb_path.name.split("_")[0]
            inst_path = sensors / f"{idx}_instance_seg.png"
            if not inst_path.exists():
                continue
            rgb = read_png_rgb8(rgb_path)
            instance = read_png_gray16(inst_path)
            masked, mask = geoproc.extract_vehicle_pixels(rgb, instance, vehicle_ids)
            out_dir.mkdir(exist_ok=True)
            write_png_rgb8(out_dir / rgb_path.name, masked)
            write_png_gray16(out_dir / f"{idx}_mask.png",
                             mask.astype(np.uint16) * 65535)
            n_images += 1
    if n_images == 0:
        raise InvalidArgument(f"no maskable images found under {root}")
    print(json.dumps({"images_masked": n_images}))
    return 0


def cmd_post_crop(args) -> int:
    root = Path(args.root)
    target = args.target_fov
    n_images = 0
    for group_dir in _camera_group_dirs(root, args.groups):
        doc = read_transforms(group_dir / "transforms" / "transforms.json")
        out_group = group_dir.parent / f"{group_dir.name}_fov{target:g}"
        out_sensors = out_group / "sensors"
        out_transforms = out_group / "transforms"
        out_sensors.mkdir(parents=True, exist_ok=True)
        out_transforms.mkdir(parents=True, exist_ok=True)

        new_frames = []
        size_by_idx = {}
        for frame in doc.frames:
            idx = Path(frame.file_path).name.split("_")[0]
            intr = frame.intrinsics
            new_intr = None
            for kind, reader, writer in (
                ("rgb", read_png_rgb8, write_png_rgb8),
                ("depth", read_png_gray16, write_png_gray16),
                ("semantic_seg", read_png_gray16, write_png_gray16),
                ("instance_seg", read_png_gray16, write_png_gray16),
            ):
                src = group_dir / "sensors" / f"{idx}_{kind}.png"
                if not src.exists():
                    continue
                image, new_intr = geoproc.crop_image_to_fov(reader(src), intr, target)
                writer(out_sensors / src.name, image)
            if new_intr is None:
                new_intr = geoproc.crop_bounds(intr, target)[4]
            size_by_idx[int(idx)] = (new_intr.width, new_intr.height)
            new_frames.append((frame.file_path, frame.pose(), new_intr))
            n_images += 1
        write_transforms(new_frames, out_transforms / "transforms.json",
                         meta={"cropped_to_fov_deg": target})
        info_path = group_dir / "camera_info.json"
        if info_path.exists():
            info = json.loads(info_path.read_text(encoding="utf-8"))
            for cam in info.get("cameras", []):
                size = size_by_idx.get(int(cam["idx"]))
                if size is not None:
                    cam["width"], cam["height"] = size
                    cam["fov_deg"] = target
            info["rig_group"] = out_group.name
            info["cropped_from"] = group_dir.name
            atomic_write_text(out_group / "camera_info.json", dumps_canonical(info))
    if n_images == 0:
        raise InvalidArgument(f"no camera groups found under {root}")
    print(json.dumps({"images_cropped": n_images}))
    return 0


def cmd_validate(args) -> int:
    report = validate_layout(Path(args.root))
    if args.json:
        print(dumps_canonical(report.to_dict()), end="")
    else:
        for v in report.violations:
            print(str(v))
        print(f"scenes={report.n_scenes} images={report.n_images} "
              f"violations={len(report.violations)}")
    return 0 if report.ok else 1


def cmd_evaluate(args) -> int:
    report = metrics.evaluate_split(
        args.pred, args.gt,
        masked=args.masked,
        masks_dir=args.masks_dir,
        clip=(0.0, args.clip_max),
        lpips_cmd=args.lpips_cmd,
        train_listing=args.train_listing,
        split=args.split,
    )
    payload = dumps_canonical(report.to_dict())
    if args.out:
        atomic_write_text(Path(args.out), payload)
    if args.json:
        print(payload, end="")
    else:
        m = report.mean_over_images
        parts = [f"psnr={m.get('psnr_db', float('nan')):.3f}dB",
                 f"ssim={m.get('ssim', float('nan')):.4f}"]
        if "drmse_m" in m:
            parts.append(f"drmse={m['drmse_m']:.3f}m")
        if "lpips" in m:
            parts.append(f"lpips={m['lpips']:.4f}")
        print(f"{len(report.images)} images  " + "  ".join(parts))
    return 0


def cmd_presets(args) -> int:
    if args.action == "list":
        for name in list_presets():
            data = preset_data(name)
            print(f"{name}\t{data.get('version', '')}\t{len(data['entries'])} cameras")
        return 0
    print(dumps_canonical(preset_data(args.name)), end="")
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egoexo",
        description="Generate, validate and evaluate synthetic ego-exo "
                    "multi-view driving datasets.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a dataset from a config file")
    g.add_argument("config", type=Path)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--backend", default=None, help="override the config backend")
    g.add_argument("--overwrite", action="store_true")
    g.add_argument("--workers", type=int, default=1,
                   help="parallel scene workers (scenes only; a session is sequential)")
    g.set_defaults(func=cmd_generate)

    p = sub.add_parser("postprocess", help="post-process a generated dataset")
    psub = p.add_subparsers(dest="action", required=True)

    ps = psub.add_parser("split", help="train/test listings per rig group")
    ps.add_argument("--root", type=Path, required=True)
    ps.add_argument("--ratio", type=float, default=0.8)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--groups", nargs="*", default=["sphere"])
    ps.set_defaults(func=cmd_post_split)

    pn = psub.add_parser("normalize", help="center/normalize camera poses")
    pn.add_argument("--root", type=Path, required=True)
    pn.add_argument("--scope", choices=[s.value for s in NormalizationScope],
                    default=NormalizationScope.PER_TIMESTEP.value)
    pn.add_argument("--groups", nargs="*", default=None)
    pn.set_defaults(func=cmd_post_normalize)

    pv = psub.add_parser("vehicles-only", help="mask non-vehicle pixels")
    pv.add_argument("--root", type=Path, required=True)
    pv.add_argument("--groups", nargs="*", default=None)
    pv.set_defaults(func=cmd_post_vehicles_only)

    pc = psub.add_parser("crop-fov", help="center-crop images to a narrower FoV")
    pc.add_argument("--root", type=Path, required=True)
    pc.add_argument("--target-fov", type=float, required=True)
    pc.add_argument("--groups", nargs="*", default=None)
    pc.set_defaults(func=cmd_post_crop)

    v = sub.add_parser("validate", help="check dataset layout conformance")
    v.add_argument("root", type=Path)
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("evaluate", help="score predictions against ground truth")
    e.add_argument("pred", type=Path)
    e.add_argument("gt", type=Path)
    e.add_argument("--masked", action="store_true")
    e.add_argument("--masks-dir", type=Path, default=None)
    e.add_argument("--clip-max", type=float, default=60.0)
    e.add_argument("--lpips-cmd", default=None,
                   help="external command printing a perceptual score for "
                        "(pred, gt) image paths")
    e.add_argument("--train-listing", type=Path, default=None,
                   help="train listing to screen for held-out towns")
    e.add_argument("--split", default="test")
    e.add_argument("--json", action="store_true")
    e.add_argument("--out", type=Path, default=None)
    e.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("presets", help="list or show shipped rig presets")
    prsub = pr.add_subparsers(dest="action", required=True)
    prl = prsub.add_parser("list")
    prl.set_defaults(func=cmd_presets, action="list")
    prs = prsub.add_parser("show")
    prs.add_argument("name", choices=[p.value for p in RigPreset])
    prs.set_defaults(func=cmd_presets, action="show")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except BackendUnavailable as exc:
        logger.error("backend unavailable: %s", exc)
        return 3
    except (InvalidArgument, NotFound, ParseError) as exc:
        logger.error("%s", exc)
        return 2
    except (ValidationError, AlreadyExists, SpawnError, StateError,
            DegenerateGeometry, ConventionError) as exc:
        logger.error("%s", exc)
        if isinstance(exc, ValidationError):
            for detail in exc.details:
                logger.error("  %s", detail)
        return 1
    except EgoExoError as exc:  # pragma: no cover - safety net
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
