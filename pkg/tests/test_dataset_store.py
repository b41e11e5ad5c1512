import json

import numpy as np
import pytest
from PIL import Image

from egoexo.cli import generate_scene
from egoexo.dataset_store import (
    SceneWriter,
    decode_depth,
    decode_flow,
    encode_depth,
    encode_flow,
    ego_group_name,
    load_snapshot,
    read_ply,
    read_png_gray16,
    tree_digest,
    validate_layout,
    write_ply,
    write_png_gray16,
)
from egoexo.errors import AlreadyExists
from egoexo.scene_backend import PointCloud, get_backend

from conftest import toy_config


class TestCodecs:
    def test_depth_round_trip_quantization_bound(self):
        rng = np.random.default_rng(0)
        depth = rng.uniform(0.01, 32.7, (32, 32))
        back = decode_depth(encode_depth(depth))
        assert np.abs(back - depth).max() <= 0.5e-3

    def test_depth_bound_holds_to_the_encoding_ceiling(self):
        rng = np.random.default_rng(1)
        depth = rng.uniform(32.7, 65.5, (16, 16))
        back = decode_depth(encode_depth(depth))
        assert np.abs(back - depth).max() <= 0.5e-3

    def test_depth_invalid_zero_preserved(self):
        depth = np.array([[0.0, 1.0], [0.0, 2.5]])
        enc = encode_depth(depth)
        assert enc[0, 0] == 0 and enc[1, 0] == 0
        assert decode_depth(enc)[0, 1] == pytest.approx(1.0, abs=5e-4)

    def test_tiny_valid_depth_stays_valid(self):
        enc = encode_depth(np.array([[1e-5]]))
        assert enc[0, 0] == 1

    def test_depth_saturates_beyond_ceiling(self):
        enc = encode_depth(np.array([[1000.0]]))
        assert enc[0, 0] == 65535

    def test_flow_round_trip(self):
        rng = np.random.default_rng(2)
        flow = rng.uniform(-100, 100, (8, 8, 2))
        back = decode_flow(encode_flow(flow))
        assert np.abs(back - flow).max() <= 0.5 / 64.0

    def test_png_gray16_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        arr = rng.integers(0, 65536, (24, 32), dtype=np.uint16)
        path = tmp_path / "x.png"
        write_png_gray16(path, arr)
        assert np.array_equal(read_png_gray16(path), arr)

    def test_ply_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        pts = np.column_stack([rng.normal(0, 10, (100, 3)), rng.random(100)])
        pts = pts.astype(np.float32).astype(np.float64)
        path = tmp_path / "c.ply"
        write_ply(path, PointCloud(pts))
        back = read_ply(path)
        assert np.array_equal(back.points, pts)

    def test_empty_ply(self, tmp_path):
        path = tmp_path / "e.ply"
        write_ply(path, PointCloud.empty())
        assert len(read_ply(path)) == 0

    def test_truncated_ply_rejected(self, tmp_path):
        from egoexo.errors import ParseError

        path = tmp_path / "t.ply"
        write_ply(path, PointCloud(np.zeros((10, 4))))
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(ParseError, match="payload"):
            read_ply(path)
        path.write_bytes(b"not a ply at all")
        with pytest.raises(ParseError):
            read_ply(path)

    def test_flow_file_round_trip(self, tmp_path):
        from egoexo.dataset_store import read_png_rgba8, write_png_rgba8

        rng = np.random.default_rng(5)
        flow = rng.uniform(-200, 200, (12, 16, 2))
        path = tmp_path / "0_optical_flow.png"
        write_png_rgba8(path, encode_flow(flow))
        back = decode_flow(read_png_rgba8(path))
        assert np.abs(back - flow).max() <= 0.5 / 64.0


class TestWriterValidatorClosure:
    def test_fresh_dataset_has_zero_violations(self, toy_dataset):
        root, _ = toy_dataset
        report = validate_layout(root)
        assert report.ok, [str(v) for v in report.violations]
        assert report.n_scenes == 1
        # 2 steps x (7 ego + 6 exo) rgb images
        assert report.n_images == 2 * 13

    def test_expected_tree_shape(self, toy_dataset):
        root, cfg = toy_dataset
        scene = root / "Town01" / "ClearNoon" / "vehicle" / "spawn_point_0"
        assert (scene / "config.json").is_file()
        assert (scene / "vehicles.json").is_file()
        step = scene / "step_0"
        assert (step / "bboxes.json").is_file()
        assert (step / "elapsed_time.json").is_file()
        actor = step / "1"
        assert sorted(p.name for p in actor.iterdir()) == [
            "nuscenes", "nuscenes_lidar", "sphere"]
        sensors = actor / "sphere" / "sensors"
        names = sorted(p.name for p in sensors.iterdir())
        assert "0_rgb.png" in names and "0_depth.png" in names
        assert "0_semantic_seg.png" in names and "0_instance_seg.png" in names
        assert (actor / "nuscenes_lidar" / "sensors" / "0_lidar.ply").is_file()
        assert (actor / "sphere" / "transforms" / "transforms.json").is_file()
        assert (actor / "sphere" / "camera_info.json").is_file()

    def test_step_metadata_contents(self, toy_dataset):
        root, cfg = toy_dataset
        scene = root / "Town01" / "ClearNoon" / "vehicle" / "spawn_point_0"
        boxes = json.loads((scene / "step_0" / "bboxes.json").read_text())["bboxes"]
        assert len(boxes) == cfg.n_vehicles
        assert all({"actor_id", "center", "extent", "yaw", "class_id"} <= set(b)
                   for b in boxes)
        elapsed = json.loads((scene / "step_0" / "elapsed_time.json").read_text())
        assert elapsed["sim_time_seconds"] > 0
        vehicles = json.loads((scene / "vehicles.json").read_text())
        assert len(vehicles) == cfg.n_vehicles

    def test_snapshot_reproduces_config_and_offset(self, toy_dataset):
        root, cfg = toy_dataset
        snap = (root / "Town01" / "ClearNoon" / "vehicle" / "spawn_point_0"
                / "config.json")
        loaded, resolved = load_snapshot(snap)
        assert loaded == cfg
        assert loaded.weather == "ClearNoon"
        assert 1.0 <= resolved["start_offset_drawn"] <= 3.0
        assert resolved["start_offset_seconds"] == pytest.approx(
            resolved["warmup_ticks"] * cfg.tick_seconds)

    def test_regeneration_from_snapshot_is_byte_identical(self, toy_dataset,
                                                          tmp_path):
        root, _ = toy_dataset
        snap = (root / "Town01" / "ClearNoon" / "vehicle" / "spawn_point_0"
                / "config.json")
        loaded, _ = load_snapshot(snap)
        generate_scene(loaded.to_dict(), "mock", str(tmp_path), False)
        assert tree_digest(tmp_path) == tree_digest(root)

    def test_camera_info_contents(self, toy_dataset):
        root, _ = toy_dataset
        info_path = (root / "Town01" / "ClearNoon" / "vehicle" / "spawn_point_0"
                     / "step_0" / "1" / "sphere" / "camera_info.json")
        info = json.loads(info_path.read_text())
        assert info["rig_group"] == "sphere"
        assert info["pose_convention"] == "opengl_camera_to_world"
        assert info["depth_encoding"]["invalid_value"] == 0
        assert len(info["cameras"]) == 6
        assert info["cameras"][0]["fov_deg"] == 90.0
        lidar_info = json.loads((info_path.parent.parent / "nuscenes_lidar"
                                 / "camera_info.json").read_text())
        assert lidar_info["lidar"]["intensity"]["vehicle"] == 1.0


class TestFaultInjection:
    def test_missing_depth_plane(self, dataset_copy):
        root, _ = dataset_copy
        victim = next(iter(root.rglob("sphere/sensors/2_depth.png")))
        victim.unlink()
        report = validate_layout(root)
        assert len(report.violations) == 1
        v = report.violations[0]
        assert v.code == "missing-aligned-sensor"
        assert "2_depth.png" in v.path

    def test_corrupt_rotation_names_frame(self, dataset_copy):
        root, _ = dataset_copy
        victim = next(iter(root.rglob("sphere/transforms/transforms.json")))
        doc = json.loads(victim.read_text())
        doc["frames"][3]["transform_matrix"][0][0] = 0.123
        victim.write_text(json.dumps(doc, sort_keys=True))
        report = validate_layout(root)
        assert len(report.violations) == 1
        v = report.violations[0]
        assert v.code == "transforms-invalid"
        assert "frame 3" in v.message

    def test_size_mismatch(self, dataset_copy):
        root, _ = dataset_copy
        victim = next(iter(root.rglob("sphere/sensors/1_semantic_seg.png")))
        img = Image.open(victim)
        img.resize((16, 16)).save(victim)
        report = validate_layout(root)
        assert len(report.violations) == 1
        v = report.violations[0]
        assert v.code == "size-mismatch"
        assert "1_semantic_seg.png" in v.path

    def test_unexpected_entry(self, dataset_copy):
        root, _ = dataset_copy
        (root / "Town01" / "stray.txt").write_text("x")
        report = validate_layout(root)
        assert [v.code for v in report.violations] == ["unexpected-entry"]


class TestSceneWriter:
    def test_refuses_existing_non_empty_target(self, tmp_path):
        cfg = toy_config(timesteps=1)
        generate_scene(cfg.to_dict(), "mock", str(tmp_path), False)
        with pytest.raises(AlreadyExists):
            generate_scene(cfg.to_dict(), "mock", str(tmp_path), False)

    def test_overwrite_replaces(self, tmp_path):
        cfg = toy_config(timesteps=1)
        generate_scene(cfg.to_dict(), "mock", str(tmp_path), False)
        first = tree_digest(tmp_path)
        generate_scene(cfg.to_dict(), "mock", str(tmp_path), True)
        assert tree_digest(tmp_path) == first

    def test_abort_leaves_nothing(self, tmp_path):
        cfg = toy_config(timesteps=1)
        writer = SceneWriter(tmp_path, cfg.town, cfg.weather, cfg.spawn_point,
                             config=cfg)
        session = get_backend("mock").load(cfg)
        writer.write_capture(session.tick())
        writer.abort()
        assert list(tmp_path.iterdir()) == []

    def test_nothing_visible_until_commit(self, tmp_path):
        cfg = toy_config(timesteps=1)
        writer = SceneWriter(tmp_path, cfg.town, cfg.weather, cfg.spawn_point,
                             config=cfg)
        session = get_backend("mock").load(cfg)
        writer.write_capture(session.tick())
        assert not writer.final_dir.exists()
        writer.commit()
        assert writer.final_dir.is_dir()
        assert not writer.staging.exists()

    def test_context_manager_aborts_on_error(self, tmp_path):
        cfg = toy_config(timesteps=1)
        session = get_backend("mock").load(cfg)
        with pytest.raises(RuntimeError):
            with SceneWriter(tmp_path, cfg.town, cfg.weather, cfg.spawn_point,
                             config=cfg) as writer:
                writer.write_capture(session.tick())
                raise RuntimeError("boom")
        assert list(tmp_path.iterdir()) == []


class TestDoubleCapture:
    def test_sibling_scene_directories(self, tmp_path):
        cfg = toy_config(timesteps=1, double_capture=True)
        generate_scene(cfg.to_dict(), "mock", str(tmp_path), False)
        base = tmp_path / "Town01" / "ClearNoon" / "vehicle"
        assert (base / "spawn_point_0_with_ego").is_dir()
        assert (base / "spawn_point_0_no_ego").is_dir()
        report = validate_layout(tmp_path)
        assert report.ok, [str(v) for v in report.violations]
        assert report.n_scenes == 2

    def test_no_ego_tree_excludes_the_ego_vehicle(self, tmp_path):
        cfg = toy_config(timesteps=1, double_capture=True)
        generate_scene(cfg.to_dict(), "mock", str(tmp_path), False)
        base = tmp_path / "Town01" / "ClearNoon" / "vehicle"
        with_boxes = json.loads((base / "spawn_point_0_with_ego" / "step_0"
                                 / "bboxes.json").read_text())["bboxes"]
        no_boxes = json.loads((base / "spawn_point_0_no_ego" / "step_0"
                               / "bboxes.json").read_text())["bboxes"]
        ids_with = {b["actor_id"] for b in with_boxes}
        ids_without = {b["actor_id"] for b in no_boxes}
        assert ids_with - ids_without == {1}
        inst = read_png_gray16(base / "spawn_point_0_no_ego" / "step_0" / "1"
                               / "sphere" / "sensors" / "0_instance_seg.png")
        assert 1 not in np.unique(inst)


def test_ego_group_name_mapping():
    assert ego_group_name("nuscenes_like") == "nuscenes"
    assert ego_group_name("waymo_like") == "waymo"
    assert ego_group_name("custom") == "custom"
