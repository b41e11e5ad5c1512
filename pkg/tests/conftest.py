import shutil

import pytest

from egoexo.cli import generate_scene
from egoexo.scene_backend import EgoRigSpec, ExoRigSpec, LidarSpec, SceneConfig


def toy_config(**overrides) -> SceneConfig:
    """Small deterministic scene used across the suite."""
    base = dict(
        town="Town01",
        spawn_point=0,
        n_vehicles=3,
        n_pedestrians=2,
        n_parked_vehicles=1,
        timesteps=2,
        seed=7,
        ego_rig=EgoRigSpec(width=64, height=40),
        exo_rig=ExoRigSpec(n=6, width=64, height=48),
        lidar=LidarSpec(channels=4, points_per_tick=128, range_m=40.0),
    )
    base.update(overrides)
    return SceneConfig(**base)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """One generated toy dataset shared read-only by the whole session."""
    root = tmp_path_factory.mktemp("toy_ds")
    config = toy_config()
    generate_scene(config.to_dict(), "mock", str(root), False)
    return root, config


@pytest.fixture
def dataset_copy(toy_dataset, tmp_path):
    """Private mutable copy of the toy dataset."""
    root, config = toy_dataset
    dst = tmp_path / "ds"
    shutil.copytree(root, dst)
    return dst, config
