"""
Perception Service Module

Simulates the oblique pan-tilt RGB-D camera over the bin and implements the
observation pipeline:

    render_pointcloud -> filter_anomalies -> reproject_topdown -> fill_missing

followed by action-aligned patch extraction for every candidate scoop.

Key Features:
- Per-pixel ray marching against the heightmap with bisection refinement;
  cells hidden behind taller features return no points
- Max-z orthographic binning to a top-down raster
- Inverse-distance hole filling with a capped radius and nearest-cell fallback
- Bilinear, heading-aligned patch sampling normalised by the centre height
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial import cKDTree

from app.config import PerceptionSettings
from app.exceptions import ConfigurationError, NoValidCellsError, PatchOutOfBoundsError
from app.models.observation import CameraPose, Patch, PointCloud, RasterObservation
from app.models.terrain import TerrainState
from app.schemas.action import ScoopAction
from app.schemas.terrain import TerrainSpec

# Configure logging for perception operations
logger = logging.getLogger(__name__)

_RAY_CHUNK = 8192
_BISECTION_STEPS = 10


@dataclass(frozen=True)
class SceneConstraints:
    """
    System state used to reject anomalous points.

    Attributes:
        bin_width, bin_length (float): Bin extent in cm
        floor (float): Lowest plausible height
        max_height (float): Highest plausible height
    """
    bin_width: float
    bin_length: float
    floor: float
    max_height: float

    @classmethod
    def from_spec(cls, spec: TerrainSpec, settings: PerceptionSettings) -> "SceneConstraints":
        return cls(spec.bin_width, spec.bin_length, settings.FLOOR_HEIGHT, settings.MAX_PLAUSIBLE_HEIGHT)


class PerceptionService:
    """
    Service class for the simulated camera and observation processing.

    Attributes:
        settings (PerceptionSettings): Camera, filtering and patch parameters

    Methods:
        render_pointcloud: Ray-cast the heightmap from the camera
        filter_anomalies: Drop points violating the scene constraints
        reproject_topdown: Bin points into a top-down raster
        fill_missing: Reconstruct invalid raster cells
        extract_patch: Sample a heading-aligned patch for an action
        observe: Run the full pipeline on a terrain
    """

    def __init__(self, settings: PerceptionSettings):
        self.settings = settings

    def camera_pose(self) -> CameraPose:
        return CameraPose.from_settings(self.settings)

    def validate_pose(self, pose: CameraPose, spec: TerrainSpec) -> None:
        """
        Check that the camera sits outside the bin footprint above the floor and that
        every floor corner of the bin projects into the image.

        Raises:
            ConfigurationError: With one detail per violated condition
        """
        x, y, z = pose.position
        problems = []
        if 0.0 <= x <= spec.bin_width and 0.0 <= y <= spec.bin_length:
            problems.append(f"camera at ({x}, {y}) is over the bin footprint")
        if z <= self.settings.FLOOR_HEIGHT:
            problems.append(f"camera height {z} is not above the bin floor")
        forward, right, down = pose.axes()
        width, height = pose.resolution
        floor = self.settings.FLOOR_HEIGHT
        corners = [(0.0, 0.0), (spec.bin_width, 0.0), (0.0, spec.bin_length), (spec.bin_width, spec.bin_length)]
        for corner in corners:
            offset = np.array([corner[0], corner[1], floor]) - np.asarray(pose.position, dtype=np.float64)
            distance = float(offset @ forward)
            if distance <= 0.0:
                problems.append(f"bin corner {corner} is behind the camera")
                continue
            u = pose.focal_px * float(offset @ right) / distance + width / 2.0
            v = pose.focal_px * float(offset @ down) / distance + height / 2.0
            if not (0.0 <= u <= width and 0.0 <= v <= height):
                problems.append(f"bin corner {corner} projects to pixel ({u:.1f}, {v:.1f}) outside the image")
        if problems:
            raise ConfigurationError(f"Camera pose does not cover bin {spec.spec_id}", details=problems)

    def render_pointcloud(self, state: TerrainState, pose: Optional[CameraPose] = None,
                          rng: Optional[np.random.Generator] = None) -> PointCloud:
        """
        Ray-cast the heightmap from the camera.

        Every pixel casts a ray; the first sample at or below the surface of the
        cell under it marks a hit, refined by bisection. The returned point lies
        at the refined x, y with z equal to that cell's height, coloured with the
        cell's material colour. Rays leaving the bin before hitting produce no point.

        Args:
            state (TerrainState): Terrain to observe
            pose (CameraPose, optional): Defaults to the configured pose
            rng (np.random.Generator, optional): Noise source; defaults to NOISE_SEED

        Returns:
            PointCloud: At most width * height points, in pixel order

        Raises:
            ConfigurationError: If the pose does not see the whole bin
        """
        pose = pose or self.camera_pose()
        self.validate_pose(pose, state.spec)
        width, height = pose.resolution
        forward, right, down = pose.axes()
        us = (np.arange(width) + 0.5 - width / 2.0) / pose.focal_px
        vs = (np.arange(height) + 0.5 - height / 2.0) / pose.focal_px
        uu, vv = np.meshgrid(us, vs)
        dirs = (forward[None, :] + uu.reshape(-1, 1) * right[None, :] + vv.reshape(-1, 1) * down[None, :])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origin = np.asarray(pose.position, dtype=np.float64)

        heights = state.height
        z_top = float(heights.max()) + 1e-9
        hits = []
        for start in range(0, dirs.shape[0], _RAY_CHUNK):
            chunk = dirs[start:start + _RAY_CHUNK]
            hits.append(self._march(origin, chunk, heights, state.cell_size, z_top))
        points = np.concatenate(hits, axis=0)
        found = np.isfinite(points[:, 0])
        points = points[found]

        nx, ny = state.shape
        ix = np.clip((points[:, 0] // state.cell_size).astype(np.intp), 0, nx - 1)
        iy = np.clip((points[:, 1] // state.cell_size).astype(np.intp), 0, ny - 1)
        palette = np.zeros((256, 3), dtype=np.uint8)
        for m in state.spec.materials:
            palette[m.id] = m.color
        colors = palette[state.material[ix, iy]]

        if self.settings.DEPTH_NOISE_STD > 0.0:
            rng = rng or np.random.default_rng(self.settings.NOISE_SEED)
            points = points.copy()
            points[:, 2] += rng.normal(0.0, self.settings.DEPTH_NOISE_STD, size=points.shape[0])
        logger.debug(f"Rendered {points.shape[0]} points from {width * height} rays")
        return PointCloud(points=points, colors=colors)

    def _march(self, origin: np.ndarray, dirs: np.ndarray, heights: np.ndarray,
               cell_size: float, z_top: float) -> np.ndarray:
        nx, ny = heights.shape
        out = np.full((dirs.shape[0], 3), np.nan)
        descending = dirs[:, 2] < -1e-12
        if not descending.any():
            return out
        d = dirs[descending]

        # Parametric interval where the ray is inside the bin box and the height band [0, z_top]
        t_enter = np.maximum((origin[2] - z_top) / -d[:, 2], 0.0)
        t_exit = origin[2] / -d[:, 2]
        for axis, extent in ((0, nx * cell_size), (1, ny * cell_size)):
            with np.errstate(divide="ignore", invalid="ignore"):
                t0 = (0.0 - origin[axis]) / d[:, axis]
                t1 = (extent - origin[axis]) / d[:, axis]
            moving = np.abs(d[:, axis]) > 1e-12
            lo = np.where(moving, np.minimum(t0, t1), np.where(
                (origin[axis] >= 0.0) & (origin[axis] <= extent), -np.inf, np.inf))
            hi = np.where(moving, np.maximum(t0, t1), np.where(
                (origin[axis] >= 0.0) & (origin[axis] <= extent), np.inf, -np.inf))
            t_enter = np.maximum(t_enter, lo)
            t_exit = np.minimum(t_exit, hi)
        crosses = t_exit >= t_enter
        t_exit = np.where(crosses, t_exit, t_enter)

        span = float((t_exit - t_enter).max())
        steps = int(np.ceil(span / self.settings.RAY_STEP)) + 1
        ts = t_enter[:, None] + np.arange(steps)[None, :] * self.settings.RAY_STEP
        ts = np.minimum(ts, t_exit[:, None])

        def below_surface(t: np.ndarray) -> np.ndarray:
            direction = d[:, None, :] if t.ndim == 2 else d
            p = origin + t[..., None] * direction
            ix = np.floor(p[..., 0] / cell_size).astype(np.intp)
            iy = np.floor(p[..., 1] / cell_size).astype(np.intp)
            inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
            surface = np.full(ix.shape, -np.inf)
            surface[inside] = heights[ix[inside], iy[inside]]
            return p[..., 2] <= surface

        below = below_surface(ts) & crosses[:, None]
        hit = below.any(axis=1)
        first = np.argmax(below, axis=1)
        rows = np.arange(ts.shape[0])
        t_hi = ts[rows, first]
        t_lo = np.where(first > 0, ts[rows, np.maximum(first - 1, 0)], t_enter)
        for _ in range(_BISECTION_STEPS):
            t_mid = 0.5 * (t_lo + t_hi)
            mid_below = below_surface(t_mid)
            t_hi = np.where(mid_below, t_mid, t_hi)
            t_lo = np.where(mid_below, t_lo, t_mid)

        p = origin + t_hi[:, None] * d
        ix = np.clip(np.floor(p[:, 0] / cell_size).astype(np.intp), 0, nx - 1)
        iy = np.clip(np.floor(p[:, 1] / cell_size).astype(np.intp), 0, ny - 1)
        result = np.column_stack([p[:, 0], p[:, 1], heights[ix, iy]])
        result[~hit] = np.nan
        out[descending] = result
        return out

    def filter_anomalies(self, cloud: PointCloud, constraints: SceneConstraints) -> PointCloud:
        """
        Drop points outside the bin, below the floor, above the plausible height or non-finite.

        Order of the surviving points is preserved; a cloud without anomalies is
        returned with identical content.
        """
        p = cloud.points
        keep = np.all(np.isfinite(p), axis=1)
        keep &= (p[:, 0] >= 0.0) & (p[:, 0] <= constraints.bin_width)
        keep &= (p[:, 1] >= 0.0) & (p[:, 1] <= constraints.bin_length)
        keep &= (p[:, 2] >= constraints.floor) & (p[:, 2] <= constraints.max_height)
        dropped = int((~keep).sum())
        if dropped:
            logger.debug(f"Filtered {dropped} anomalous points")
        return PointCloud(points=p[keep], colors=cloud.colors[keep])

    def reproject_topdown(self, cloud: PointCloud, shape: Tuple[int, int], cell_size: float) -> RasterObservation:
        """
        Orthographic top-down binning; each cell keeps its highest point.

        Args:
            cloud (PointCloud): Points in the bin frame
            shape (Tuple[int, int]): Raster shape (nx, ny)
            cell_size (float): Cell edge in cm

        Returns:
            RasterObservation: Cells without points are marked invalid
        """
        nx, ny = shape
        depth = np.zeros(nx * ny)
        color = np.zeros((nx * ny, 3), dtype=np.uint8)
        valid = np.zeros(nx * ny, dtype=bool)
        if len(cloud):
            ix = np.floor(cloud.points[:, 0] / cell_size).astype(np.intp)
            iy = np.floor(cloud.points[:, 1] / cell_size).astype(np.intp)
            # Points on the far bin walls belong to the last cell
            ix[cloud.points[:, 0] == nx * cell_size] = nx - 1
            iy[cloud.points[:, 1] == ny * cell_size] = ny - 1
            inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
            flat = (ix * ny + iy)[inside]
            z = cloud.points[inside, 2]
            rgb = cloud.colors[inside]
            order = np.lexsort((z, flat))
            flat_sorted = flat[order]
            last = np.r_[flat_sorted[1:] != flat_sorted[:-1], True]
            winners = order[last]
            depth[flat[winners]] = z[winners]
            color[flat[winners]] = rgb[winners]
            valid[flat[winners]] = True
        return RasterObservation(
            depth=depth.reshape(nx, ny),
            color=color.reshape(nx, ny, 3),
            valid=valid.reshape(nx, ny),
            cell_size=cell_size,
        )

    def fill_missing(self, raster: RasterObservation) -> RasterObservation:
        """
        Fill invalid cells: inverse-distance weighting of the nearest valid cells
        within FILL_RADIUS_CELLS for depth (nearest valid cell beyond it), nearest
        valid cell for colour. Valid cells are left unchanged.

        Raises:
            NoValidCellsError: If the raster has no valid cell
        """
        if raster.fully_valid:
            return RasterObservation(raster.depth.copy(), raster.color.copy(), raster.valid.copy(),
                                     raster.cell_size)
        if not raster.valid.any():
            raise NoValidCellsError("Cannot fill a raster without valid cells")

        valid_idx = np.argwhere(raster.valid)
        missing_idx = np.argwhere(~raster.valid)
        tree = cKDTree(valid_idx)
        k = min(self.settings.FILL_NEIGHBORS, valid_idx.shape[0])
        dist, nn = tree.query(missing_idx, k=k, distance_upper_bound=self.settings.FILL_RADIUS_CELLS)
        dist = np.asarray(dist, dtype=np.float64).reshape(missing_idx.shape[0], k)
        nn = np.asarray(nn).reshape(missing_idx.shape[0], k)
        nearest_dist, nearest = tree.query(missing_idx, k=1)

        valid_depth = raster.depth[raster.valid]
        found = np.isfinite(dist)
        weights = np.where(found, 1.0 / np.where(found, dist, 1.0) ** 2, 0.0)
        neighbor_depth = valid_depth[np.where(found, nn, 0)]
        total = weights.sum(axis=1)
        filled = np.where(total > 0.0,
                          (weights * neighbor_depth).sum(axis=1) / np.where(total > 0.0, total, 1.0),
                          valid_depth[nearest])

        depth = raster.depth.copy()
        color = raster.color.copy()
        depth[missing_idx[:, 0], missing_idx[:, 1]] = filled
        color[missing_idx[:, 0], missing_idx[:, 1]] = raster.color[raster.valid][nearest]
        logger.debug(f"Filled {missing_idx.shape[0]} missing cells "
                     f"({int((total == 0).sum())} by nearest-cell fallback)")
        return RasterObservation(depth, color, np.ones_like(raster.valid), raster.cell_size)

    def patch_coordinates(self, shape: Tuple[int, int], cell_size: float, x: float, y: float,
                          theta: float) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """
        Fractional raster indices of the P x P sampling lattice, or None if it leaves the raster.

        Row r, column c samples (x, y) + a_r * h + b_c * n with h the heading,
        n its left normal and a_r, b_c = (index - P // 2) * extent / P, so pixel
        (P // 2, P // 2) samples exactly (x, y).
        """
        size = self.settings.PATCH_SIZE
        offsets = (np.arange(size) - size // 2) * (self.settings.PATCH_EXTENT / size)
        c, s = np.cos(theta), np.sin(theta)
        px = x + offsets[:, None] * c - offsets[None, :] * s
        py = y + offsets[:, None] * s + offsets[None, :] * c
        fi = px / cell_size - 0.5
        fj = py / cell_size - 0.5
        nx, ny = shape
        if fi.min() < 0.0 or fj.min() < 0.0 or fi.max() > nx - 1 or fj.max() > ny - 1:
            return None
        return fi, fj

    def extract_patch(self, raster: RasterObservation, action: ScoopAction) -> Patch:
        """
        Bilinear heading-aligned patch centred at the action's (x, y).

        The scoop heading maps to the patch's +row axis; depth is normalised by
        subtracting the value at the centre pixel.

        Raises:
            PatchOutOfBoundsError: If the raster has invalid cells or the window leaves it
        """
        if not raster.fully_valid:
            raise PatchOutOfBoundsError("Patch extraction needs a fully valid raster")
        coords = self.patch_coordinates(raster.shape, raster.cell_size, action.x, action.y, action.theta)
        if coords is None:
            raise PatchOutOfBoundsError(
                f"Patch window at ({action.x}, {action.y}, {action.theta:.3f}) leaves the raster")
        fi, fj = coords
        depth = map_coordinates(raster.depth, [fi, fj], order=1, mode="nearest")
        center = self.settings.PATCH_SIZE // 2
        depth = depth - depth[center, center]
        color = np.stack([
            map_coordinates(raster.color[..., channel].astype(np.float64), [fi, fj], order=1, mode="nearest")
            for channel in range(3)
        ], axis=-1) / 255.0
        return Patch(depth_patch=depth, color_patch=color, depth=action.depth, stiffness=action.stiffness)

    def observe(self, state: TerrainState, rng: Optional[np.random.Generator] = None) -> RasterObservation:
        """
        Full pipeline: render, filter, reproject and fill.

        Args:
            state (TerrainState): Terrain to observe
            rng (np.random.Generator, optional): Depth noise source

        Returns:
            RasterObservation: Fully valid raster on the terrain grid
        """
        cloud = self.render_pointcloud(state, rng=rng)
        cloud = self.filter_anomalies(cloud, SceneConstraints.from_spec(state.spec, self.settings))
        raster = self.reproject_topdown(cloud, state.shape, state.cell_size)
        missing = int((~raster.valid).sum())
        if missing:
            logger.debug(f"Observation of {state.spec.spec_id}: {missing} cells unobserved")
        return self.fill_missing(raster)
