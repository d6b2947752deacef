import os
from pathlib import Path

import numpy as np
import pytest

# Set test environment before importing package modules
os.environ["ENVIRONMENT"] = "test"

from reloc_kit.models.geometry import CameraIntrinsics
from reloc_kit.models.scene import SceneSpec, SyntheticScene
from reloc_kit.services.dataset import save_dataset
from reloc_kit.services.scene import generate_scene


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator so every test is reproducible."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_intrinsics() -> CameraIntrinsics:
    """16×12 pinhole camera for brute-force oracles."""
    return CameraIntrinsics(fx=12.0, fy=12.0, cx=8.0, cy=6.0, width=16, height=12)


@pytest.fixture
def small_spec() -> SceneSpec:
    """Two 6-keyframe corridor passes at 32×24."""
    return SceneSpec(
        room_length=4.0,
        loops=2,
        keyframes_per_loop=6,
        image_width=32,
        image_height=24,
    )


@pytest.fixture(scope="session")
def corridor_scene() -> SyntheticScene:
    """The default 40-keyframe corridor, rendered once per session."""
    return generate_scene(SceneSpec(), seed=1)


@pytest.fixture(scope="session")
def twenty_keyframe_scene() -> SyntheticScene:
    """One 20-keyframe corridor pass, the encoder training scene."""
    return generate_scene(SceneSpec(loops=1), seed=1)


@pytest.fixture
def small_scene(small_spec: SceneSpec) -> SyntheticScene:
    return generate_scene(small_spec, seed=3)


@pytest.fixture
def dataset_dir(tmp_path: Path, small_scene: SyntheticScene) -> Path:
    """Small scene saved in the on-disk dataset layout."""
    return save_dataset(
        tmp_path / "dataset", small_scene.keyframes, small_scene.trajectory, small_scene.intrinsics
    )

