import math

import numpy as np
import pytest
import torch

from app.config import Settings
from app.core.dependencies import Services
from app.models.observation import RasterObservation
from app.models.surrogate import Architecture, SurrogateModel
from app.models.terrain import TerrainState
from app.schemas.terrain import MaterialSpec, TerrainSpec

FLAT = MaterialSpec(id=1, name="Flatland", family="fine", scoopability=1.0, density=1.5,
                    roughness_amplitude=0.0, color=(200, 180, 160))
WALL = MaterialSpec(id=2, name="Wall", family="rock", scoopability=0.0, density=2.0,
                    roughness_amplitude=0.0, color=(90, 90, 90))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session", autouse=True)
def setup_and_teardown():
    print("...Setting up...")
    yield
    print("...Tearing down...")


@pytest.fixture(scope="session")
def settings() -> Settings:
    """Small camera and patch, short training schedule."""
    return Settings().override(
        perception={"RESOLUTION_W": 240, "RESOLUTION_H": 180, "FOCAL_PX": 150.0, "PATCH_SIZE": 16,
                    "PATCH_EXTENT": 16.0},
        training={"ACTIONS_PER_TERRAIN": 24, "RESET_EVERY": 12, "MEAN_EPOCHS": 20, "BATCH_SIZE": 16,
                  "KERNEL_STEPS": 40, "EVAL_INTERVAL": 10, "EVAL_EPISODES": 8, "FEATURE_DIM": 8},
        harness={"BUDGET": 3, "RUNS_PER_CELL": 2, "MAX_PARALLEL_EPISODES": 2},
    )


@pytest.fixture(scope="session")
def services(settings) -> Services:
    return Services(settings=settings, seed=0)


@pytest.fixture
def flat_spec() -> TerrainSpec:
    return TerrainSpec(spec_id="flat_test", materials=[FLAT], background_material=FLAT.id)


@pytest.fixture
def flat_state(services, flat_spec) -> TerrainState:
    return services.terrain.synthesize_terrain(flat_spec)


def exact_raster(state: TerrainState) -> RasterObservation:
    """Observation equal to the ground truth, bypassing the camera."""
    palette = np.zeros((256, 3), dtype=np.uint8)
    for m in state.spec.materials:
        palette[m.id] = m.color
    return RasterObservation(depth=np.array(state.height), color=palette[state.material],
                             valid=np.ones(state.shape, dtype=bool), cell_size=state.cell_size)


def voxel_volume(state, action, length, width, resolution=0.1):
    """Brute-force volume above the cut plane inside the footprint on a lattice of `resolution` cm."""
    c, s = math.cos(action.theta), math.sin(action.theta)
    corners_x = [action.x + u * c - v * s for u in (0, length) for v in (-width / 2, width / 2)]
    corners_y = [action.y + u * s + v * c for u in (0, length) for v in (-width / 2, width / 2)]
    xs = np.arange(min(corners_x) + resolution / 2, max(corners_x), resolution)
    ys = np.arange(min(corners_y) + resolution / 2, max(corners_y), resolution)
    px, py = np.meshgrid(xs, ys, indexing="ij")
    u = (px - action.x) * c + (py - action.y) * s
    v = -(px - action.x) * s + (py - action.y) * c
    inside = (u >= 0) & (u <= length) & (np.abs(v) <= width / 2)
    i = (px[inside] // state.cell_size).astype(int)
    j = (py[inside] // state.cell_size).astype(int)
    entry = state.height[int(action.x // state.cell_size), int(action.y // state.cell_size)]
    column = np.maximum(state.height[i, j] - max(entry - action.depth, 0.0), 0.0)
    return float(column.sum() * resolution ** 2)


@pytest.fixture(scope="session")
def tiny_model(settings) -> SurrogateModel:
    """Untrained surrogate with reward scale 10 cm^3 around an offset of 20 cm^3."""
    torch.manual_seed(7)
    return SurrogateModel(Architecture.from_settings(settings.training, settings.perception),
                          reward_offset=20.0, reward_scale=10.0)
