import math
from dataclasses import replace

import numpy as np
import pytest

from app.exceptions import ConfigurationError, NoValidCellsError, PatchOutOfBoundsError
from app.models.observation import CameraPose, PointCloud, RasterObservation
from app.schemas.action import ScoopAction
from app.schemas.terrain import RectRegion, TerrainSpec
from app.services.perception import SceneConstraints
from app.tests.conftest import FLAT, exact_raster

HEIGHT_QUANTIZATION = 0.1


@pytest.fixture
def block_state(services):
    """5 x 5 toy bin with a single 10 cm block in the middle cell."""
    spec = TerrainSpec(spec_id="block", bin_width=5.0, bin_length=5.0, base_height=1.0, materials=[FLAT],
                       background_material=FLAT.id,
                       regions=[RectRegion(material_id=FLAT.id, raise_height=10.0, x0=2.0, y0=2.0, x1=3.0, y1=3.0)])
    return services.terrain.synthesize_terrain(spec)


@pytest.fixture
def low_pose():
    # Looks along +x from behind the x = 0 wall, just above the flat surface
    return CameraPose(position=(-10.0, 2.5, 6.0), pan=0.0, tilt=math.atan2(5.0, 12.5), focal_px=200.0,
                      resolution=(200, 150))


def smooth_raster(fn, shape=(90, 70), cell_size=1.0):
    xs = (np.arange(shape[0]) + 0.5) * cell_size
    ys = (np.arange(shape[1]) + 0.5) * cell_size
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    return RasterObservation(depth=fn(xx, yy), color=np.full(shape + (3,), 100, dtype=np.uint8),
                             valid=np.ones(shape, dtype=bool), cell_size=cell_size)


def test_flat_render_returns_surface_heights(services, flat_state):
    cloud = services.perception.render_pointcloud(flat_state)
    settings = services.settings.perception
    assert 0 < len(cloud) <= settings.RESOLUTION_W * settings.RESOLUTION_H
    assert np.all(cloud.points[:, 2] == flat_state.spec.base_height)
    assert np.all(cloud.colors == np.array(FLAT.color, dtype=np.uint8))


def test_block_occludes_the_cell_behind_it(services, block_state, low_pose):
    perception = services.perception
    cloud = perception.render_pointcloud(block_state, pose=low_pose)
    raster = perception.reproject_topdown(cloud, block_state.shape, block_state.cell_size)
    assert raster.valid[2, 2]
    assert raster.depth[2, 2] == 11.0
    assert raster.valid[0, 2]
    assert not raster.valid[4, 2]


def test_filled_occlusion_stays_within_observed_range(services, block_state, low_pose):
    perception = services.perception
    cloud = perception.render_pointcloud(block_state, pose=low_pose)
    raster = perception.reproject_topdown(cloud, block_state.shape, block_state.cell_size)
    filled = perception.fill_missing(raster)
    observed = raster.depth[raster.valid]
    assert filled.fully_valid
    missing = ~raster.valid
    assert np.all(filled.depth[missing] >= observed.min())
    assert np.all(filled.depth[missing] <= observed.max())
    assert np.array_equal(filled.depth[raster.valid], raster.depth[raster.valid])


def test_reproject_one_point_per_cell_is_exact(services):
    rng = np.random.default_rng(0)
    shape = (6, 4)
    ii, jj = np.meshgrid(np.arange(6), np.arange(4), indexing="ij")
    heights = rng.uniform(0.0, 10.0, size=shape)
    points = np.column_stack([(ii.ravel() + 0.5) * 2.0, (jj.ravel() + 0.5) * 2.0, heights.ravel()])
    cloud = PointCloud(points=points, colors=np.zeros((points.shape[0], 3), dtype=np.uint8))
    raster = services.perception.reproject_topdown(cloud, shape, 2.0)
    assert raster.fully_valid
    assert np.array_equal(raster.depth, heights)


def test_reproject_keeps_highest_point(services):
    points = np.array([[0.5, 0.5, 3.0], [0.6, 0.4, 5.0], [0.7, 0.2, 4.0]])
    colors = np.array([[1, 1, 1], [2, 2, 2], [3, 3, 3]], dtype=np.uint8)
    raster = services.perception.reproject_topdown(PointCloud(points, colors), (2, 2), 1.0)
    assert raster.depth[0, 0] == 5.0
    assert np.array_equal(raster.color[0, 0], [2, 2, 2])
    assert raster.valid.sum() == 1


def test_filter_anomalies(services, flat_spec):
    constraints = SceneConstraints.from_spec(flat_spec, services.settings.perception)
    points = np.array([
        [10.0, 10.0, 5.0],
        [10.0, 10.0, 1000.0],
        [-5.0, 10.0, 5.0],
        [20.0, 20.0, 6.0],
        [20.0, 75.0, 5.0],
        [np.nan, 1.0, 1.0],
    ])
    colors = np.arange(18, dtype=np.uint8).reshape(6, 3)
    kept = services.perception.filter_anomalies(PointCloud(points, colors), constraints)
    assert np.array_equal(kept.points, points[[0, 3]])
    assert np.array_equal(kept.colors, colors[[0, 3]])

    clean = PointCloud(points[[3, 0]], colors[[3, 0]])
    unchanged = services.perception.filter_anomalies(clean, constraints)
    assert np.array_equal(unchanged.points, clean.points)
    assert np.array_equal(unchanged.colors, clean.colors)


def test_fill_single_hole_with_constant_neighbours(services):
    depth = np.full((5, 5), 4.0)
    valid = np.ones((5, 5), dtype=bool)
    depth[2, 2] = 0.0
    valid[2, 2] = False
    raster = RasterObservation(depth, np.zeros((5, 5, 3), dtype=np.uint8), valid, 1.0)
    filled = services.perception.fill_missing(raster)
    assert filled.depth[2, 2] == pytest.approx(4.0)
    assert filled.fully_valid


def test_fill_is_identity_on_valid_raster(services, flat_state):
    raster = exact_raster(flat_state)
    filled = services.perception.fill_missing(raster)
    assert np.array_equal(filled.depth, raster.depth)
    assert np.array_equal(filled.color, raster.color)


def test_fill_without_valid_cells_raises(services):
    raster = RasterObservation(np.zeros((3, 3)), np.zeros((3, 3, 3), dtype=np.uint8),
                               np.zeros((3, 3), dtype=bool), 1.0)
    with pytest.raises(NoValidCellsError):
        services.perception.fill_missing(raster)


def test_observe_flat_terrain(services, flat_state):
    raster = services.perception.observe(flat_state)
    assert raster.fully_valid
    assert raster.shape == flat_state.shape
    rmse = float(np.sqrt(np.mean((raster.depth - flat_state.height) ** 2)))
    assert rmse <= HEIGHT_QUANTIZATION / 2


def test_camera_pose_must_see_the_whole_bin(services, flat_state, low_pose):
    perception = services.perception
    perception.validate_pose(perception.camera_pose(), flat_state.spec)

    overhead = CameraPose(position=(45.0, 35.0, 70.0), pan=0.0, tilt=math.pi / 2, focal_px=150.0,
                          resolution=(240, 180))
    with pytest.raises(ConfigurationError) as error:
        perception.render_pointcloud(flat_state, pose=overhead)
    assert any("over the bin footprint" in d for d in error.value.details)

    zoomed = replace(perception.camera_pose(), focal_px=1000.0)
    with pytest.raises(ConfigurationError) as error:
        perception.validate_pose(zoomed, flat_state.spec)
    assert all("outside the image" in d for d in error.value.details)

    # Sees the 5 x 5 toy bin, not the full-size one
    with pytest.raises(ConfigurationError):
        perception.validate_pose(low_pose, flat_state.spec)


def test_depth_noise_is_seeded(services, flat_state):
    noisy = services.harness.perception_for("noisy")
    first = noisy.render_pointcloud(flat_state, rng=np.random.default_rng(3))
    second = noisy.render_pointcloud(flat_state, rng=np.random.default_rng(3))
    assert np.array_equal(first.points, second.points)
    assert np.std(first.points[:, 2]) > 0.1


def test_axis_aligned_patch_is_a_crop(services):
    raster = smooth_raster(lambda x, y: 0.3 * x - 0.2 * y)
    size = services.settings.perception.PATCH_SIZE
    patch = services.perception.extract_patch(raster, ScoopAction(x=45.5, y=35.5, theta=0.0, depth=0.4))
    half = size // 2
    expected = raster.depth[45 - half:45 + half, 35 - half:35 + half] - raster.depth[45, 35]
    assert patch.depth_patch.shape == (size, size)
    assert patch.depth_patch[half, half] == 0.0
    np.testing.assert_allclose(patch.depth_patch, expected, atol=1e-12)
    np.testing.assert_allclose(patch.color_patch, 100 / 255.0)
    assert patch.depth == 0.4


def test_constant_raster_gives_zero_patch(services):
    raster = smooth_raster(lambda x, y: np.full_like(x, 7.0))
    for theta in services.settings.scoop.yaws:
        patch = services.perception.extract_patch(raster, ScoopAction(x=40.0, y=30.0, theta=theta, depth=0.2))
        np.testing.assert_allclose(patch.depth_patch, 0.0, atol=1e-12)


def test_patch_is_rotation_equivariant(services):
    centre = np.array([45.5, 35.5])
    theta = services.settings.scoop.yaws[1]

    def terrain(x, y):
        return 3.0 * np.sin(x / 7.0) * np.cos(y / 9.0)

    def rotated(x, y):
        c, s = math.cos(-theta), math.sin(-theta)
        dx, dy = x - centre[0], y - centre[1]
        return terrain(centre[0] + c * dx - s * dy, centre[1] + s * dx + c * dy)

    reference = services.perception.extract_patch(smooth_raster(terrain),
                                                  ScoopAction(x=centre[0], y=centre[1], theta=0.0, depth=0.2))
    turned = services.perception.extract_patch(smooth_raster(rotated),
                                               ScoopAction(x=centre[0], y=centre[1], theta=theta, depth=0.2))
    np.testing.assert_allclose(turned.depth_patch, reference.depth_patch, atol=0.05)


def test_patch_window_outside_raster_raises(services, flat_state):
    raster = exact_raster(flat_state)
    with pytest.raises(PatchOutOfBoundsError):
        services.perception.extract_patch(raster, ScoopAction(x=2.0, y=2.0, theta=0.0, depth=0.2))
    holes = RasterObservation(raster.depth, raster.color, np.zeros_like(raster.valid), raster.cell_size)
    with pytest.raises(PatchOutOfBoundsError):
        services.perception.extract_patch(holes, ScoopAction(x=40.0, y=30.0, theta=0.0, depth=0.2))
