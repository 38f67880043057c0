"""
Terrain Service Module

This module implements the terrain simulator: synthesizing multi-material
heightmap terrains from a TerrainSpec and executing scoop actions against them.

Key Features:
- Deterministic synthesis from (spec, seed): base height, raised regions,
  cosine mounds, reset bumps and per-material value-noise roughness
- Excavation model: a straight cut at fixed depth under the entry height,
  per-cell column capacity, scoopability-weighted collection, jamming on
  unscoopable contact and a total capacity cap
- Geometric feasibility against the bin walls and the arm's reach annulus
- Mass measurement from per-material collected volumes

All operations are pure: they never modify the TerrainState they are given.
"""

import logging
from typing import Dict, Optional, Tuple

import numpy as np

from app.config import ScoopSettings, WorkspaceSettings
from app.exceptions import InfeasibleActionError, InvalidTerrainSpecError, UnknownMaterialError
from app.models.terrain import TerrainState
from app.schemas.action import ScoopAction, ScoopOutcome, Stiffness
from app.schemas.terrain import MaterialSpec, TerrainSpec
from app.utils.geometry import footprint_corners, footprint_coverage, inside_annulus, inside_box
from app.utils.noise import value_noise

# Configure logging for terrain simulation operations
logger = logging.getLogger(__name__)

# Reset bumps draw from their own stream; material streams use ids 0-255
RESET_STREAM = 1000


def measure_mass(volumes_by_material: Dict[int, float], materials: Dict[int, MaterialSpec]) -> float:
    """
    Convert per-material collected volumes into a mass.

    Args:
        volumes_by_material (Dict[int, float]): Volume in cm^3 per material id
        materials (Dict[int, MaterialSpec]): Material table

    Returns:
        float: Mass in g, sum of volume * density

    Raises:
        UnknownMaterialError: If a material id is not in the table
        ValueError: If a volume is negative
    """
    mass = 0.0
    for material_id, volume in volumes_by_material.items():
        if material_id not in materials:
            raise UnknownMaterialError(f"Unknown material id {material_id}")
        if volume < 0:
            raise ValueError(f"Negative volume {volume} for material {material_id}")
        mass += volume * materials[material_id].density
    return mass


class TerrainService:
    """
    Service class for terrain synthesis and scoop execution.

    Attributes:
        scoop (ScoopSettings): Scoop geometry and excavation parameters
        workspace (WorkspaceSettings): Bin clearance and reach annulus

    Methods:
        validate_spec: Enforce the spec invariants that need the whole spec
        synthesize_terrain: Build the TerrainState for a spec
        check_feasibility: Geometric feasibility of an action
        execute_scoop: Run an action, returning outcome and mutated terrain
        scoopable_fraction: Ground-truth share of a footprint on scoopable material
    """

    def __init__(self, scoop: ScoopSettings, workspace: WorkspaceSettings):
        self.scoop = scoop
        self.workspace = workspace

    def validate_spec(self, spec: TerrainSpec) -> None:
        """
        Check the invariants of a terrain spec.

        Raises:
            InvalidTerrainSpecError: With one diagnostic per violated invariant in details
        """
        problems = []
        for extent, name in ((spec.bin_width, "bin_width"), (spec.bin_length, "bin_length")):
            cells = extent / spec.cell_size
            if abs(cells - round(cells)) > 1e-9 or round(cells) < 1:
                problems.append(f"{name} {extent} is not a whole number of {spec.cell_size} cm cells")
        if spec.base_height > spec.max_height:
            problems.append(f"base_height {spec.base_height} exceeds max_height {spec.max_height}")

        ids = [m.id for m in spec.materials]
        if len(set(ids)) != len(ids):
            problems.append("material ids are not unique")
        table = spec.material_table()
        referenced = [spec.background_material] + [r.material_id for r in spec.regions]
        referenced += [m.material_id for m in spec.mounds if m.material_id is not None]
        for material_id in referenced:
            if material_id not in table:
                problems.append(f"material {material_id} is not in the material table")

        for index, mound in enumerate(spec.mounds):
            if not (0.0 <= mound.x <= spec.bin_width and 0.0 <= mound.y <= spec.bin_length):
                problems.append(f"mound {index} centre ({mound.x}, {mound.y}) lies outside the bin")

        if not problems:
            xs, ys = self._cell_centers(spec)
            for index, region in enumerate(spec.regions):
                if not region.mask(xs, ys).any():
                    problems.append(f"region {index} ({region.kind}) covers no cell")

        if problems:
            logger.warning(f"Rejected terrain spec {spec.spec_id}: {problems}")
            raise InvalidTerrainSpecError(f"Invalid terrain spec {spec.spec_id}", details=problems)

    def synthesize_terrain(self, spec: TerrainSpec) -> TerrainState:
        """
        Build the terrain described by a spec.

        Regions are painted in order (later regions win) and set the height of
        their cells to base + raise_height. Mounds add a raised-cosine bump and
        optionally repaint the material under them. Reset bumps follow, on
        background cells only. Each material then receives
        its own value-noise roughness, seeded from (spec.seed, material id).

        Args:
            spec (TerrainSpec): Terrain description

        Returns:
            TerrainState: Deterministic function of (spec, seed)

        Raises:
            InvalidTerrainSpecError: If the spec violates its invariants
        """
        self.validate_spec(spec)
        xs, ys = self._cell_centers(spec)
        height = np.full(xs.shape, spec.base_height, dtype=np.float64)
        material = np.full(xs.shape, spec.background_material, dtype=np.uint8)

        for region in spec.regions:
            mask = region.mask(xs, ys)
            material[mask] = region.material_id
            height[mask] = spec.base_height + region.raise_height

        for mound in spec.mounds:
            r = np.hypot(xs - mound.x, ys - mound.y)
            inside = r < mound.radius
            height[inside] += mound.height * 0.5 * (1.0 + np.cos(np.pi * r[inside] / mound.radius))
            if mound.material_id is not None:
                material[inside] = mound.material_id

        if spec.reset_features:
            self._add_reset_features(spec, xs, ys, height, material == spec.background_material)

        for spec_material in sorted(spec.materials, key=lambda m: m.id):
            if spec_material.roughness_amplitude == 0.0:
                continue
            mask = material == spec_material.id
            if not mask.any():
                continue
            rng = np.random.default_rng([spec.seed, spec_material.id])
            noise = value_noise(xs, ys, spec_material.roughness_length,
                                (spec.bin_width, spec.bin_length), rng)
            height[mask] += spec_material.roughness_amplitude * noise[mask]

        np.clip(height, 0.0, spec.max_height, out=height)
        logger.info(f"Synthesized terrain {spec.spec_id} (seed {spec.seed}, grid {height.shape})")
        return TerrainState(height=height, material=material, spec=spec)

    def check_feasibility(self, state: TerrainState, action: ScoopAction,
                          workspace: Optional[WorkspaceSettings] = None) -> bool:
        """
        Geometric feasibility of an action.

        An action is feasible iff its parameters belong to the configured depth,
        yaw and stiffness sets and its footprint, grown by the clearance margin,
        lies inside the bin and inside the reach annulus.

        Args:
            state (TerrainState): Terrain the action would run on
            action (ScoopAction): Candidate action
            workspace (WorkspaceSettings, optional): Overrides the service workspace

        Returns:
            bool: True iff feasible
        """
        ws = workspace or self.workspace
        if not self.is_valid_action(action):
            return False
        spec = state.spec
        corners = footprint_corners(action.x, action.y, action.theta,
                                    self.scoop.LENGTH, self.scoop.WIDTH, ws.CLEARANCE)
        if not inside_box(corners, spec.bin_width, spec.bin_length):
            return False
        return inside_annulus(action.x, action.y, action.theta, self.scoop.LENGTH, self.scoop.WIDTH,
                              ws.CLEARANCE, (ws.REACH_ORIGIN_X, ws.REACH_ORIGIN_Y),
                              ws.REACH_MIN, ws.REACH_MAX)

    def is_valid_action(self, action: ScoopAction) -> bool:
        """True iff depth, yaw and stiffness belong to the configured sets."""
        if not np.any(np.isclose(action.depth, self.scoop.DEPTHS, rtol=0.0, atol=1e-9)):
            return False
        yaws = np.asarray(self.scoop.yaws)
        delta = np.angle(np.exp(1j * (action.theta - yaws)))
        if not np.any(np.abs(delta) < 1e-6):
            return False
        return action.stiffness in (Stiffness.LOW, Stiffness.HIGH)

    def execute_scoop(self, state: TerrainState, action: ScoopAction) -> Tuple[ScoopOutcome, TerrainState]:
        """
        Execute a scoop and return its outcome and the mutated terrain.

        The cut plane lies `depth` below the entry height (surface of the cell
        holding the start point). For every swept cell the column above the cut
        plane, capped at the bowl depth and weighted by coverage, is removed if
        the cell's material is scoopable; the collected volume is the removed
        volume times scoopability. If more than JAM_THRESHOLD of the footprint
        meets unscoopable material above the cut plane the scoop jams and both
        removal and collection are multiplied by JAM_FACTOR. Collection is capped
        at the scoop capacity, scaling removal alike.

        Args:
            state (TerrainState): Current terrain
            action (ScoopAction): Feasible action

        Returns:
            Tuple[ScoopOutcome, TerrainState]: Outcome and new terrain

        Raises:
            InfeasibleActionError: If the action fails check_feasibility
        """
        if not self.check_feasibility(state, action):
            raise InfeasibleActionError(f"Infeasible scoop action {action.as_tuple()}")

        ii, jj, frac = self.coverage(state, action)
        height = state.height
        cut = max(self._entry_height(state, action) - action.depth, 0.0)

        cell_height = height[ii, jj]
        cell_material = state.material[ii, jj]
        scoopability = self._scoopability_lut(state.spec)[cell_material]

        above = np.clip(cell_height - cut, 0.0, self.scoop.BOWL_DEPTH)
        removed = np.where(scoopability > 0.0, above, 0.0) * frac
        collected = removed * scoopability

        contact = frac[(scoopability == 0.0) & (cell_height > cut)].sum()
        jammed = bool(contact / frac.sum() > self.scoop.JAM_THRESHOLD)
        if jammed:
            removed = removed * self.scoop.JAM_FACTOR
            collected = collected * self.scoop.JAM_FACTOR

        cell_area = state.cell_area
        total = collected.sum() * cell_area
        if total > self.scoop.capacity:
            scale = self.scoop.capacity / total
            removed = removed * scale
            collected = collected * scale

        new_height = height.copy()
        new_height[ii, jj] -= removed

        volumes = np.bincount(cell_material, weights=collected * cell_area, minlength=256)
        volumes_by_material = {int(m): float(volumes[m]) for m in np.unique(cell_material) if volumes[m] > 0.0}
        table = state.spec.material_table()
        outcome = ScoopOutcome(
            volume=float(collected.sum() * cell_area),
            mass=measure_mass(volumes_by_material, table),
            jammed=jammed,
            removed_volume=float(removed.sum() * cell_area),
            volumes_by_material=volumes_by_material,
            scoopable_fraction=float(frac[scoopability > 0.0].sum() / frac.sum()),
            executed_action=action,
        )
        logger.debug(f"Scoop {action.as_tuple()} -> {outcome.volume:.2f} cm3, jammed={jammed}")
        return outcome, state.with_height(new_height)

    def coverage(self, state: TerrainState, action: ScoopAction) -> tuple:
        """Footprint coverage (ii, jj, fraction) of an action on a terrain grid."""
        return footprint_coverage(action.x, action.y, action.theta, self.scoop.LENGTH, self.scoop.WIDTH,
                                  state.cell_size, state.shape, self.scoop.FOOTPRINT_SUBSAMPLES)

    def scoopable_fraction(self, state: TerrainState, action: ScoopAction) -> float:
        """Share of the action's footprint lying on material with scoopability > 0."""
        ii, jj, frac = self.coverage(state, action)
        if frac.size == 0:
            return 0.0
        scoopability = self._scoopability_lut(state.spec)[state.material[ii, jj]]
        return float(frac[scoopability > 0.0].sum() / frac.sum())

    @staticmethod
    def _add_reset_features(spec: TerrainSpec, xs: np.ndarray, ys: np.ndarray, height: np.ndarray,
                            background: np.ndarray) -> None:
        rng = np.random.default_rng([spec.seed, RESET_STREAM])
        for _ in range(spec.reset_features):
            cx = rng.uniform(0.0, spec.bin_width)
            cy = rng.uniform(0.0, spec.bin_length)
            radius = rng.uniform(4.0, 8.0)
            amplitude = rng.uniform(0.3, 1.0) * spec.reset_feature_height
            r = np.hypot(xs - cx, ys - cy)
            inside = (r < radius) & background
            height[inside] += amplitude * 0.5 * (1.0 + np.cos(np.pi * r[inside] / radius))

    @staticmethod
    def _cell_centers(spec: TerrainSpec) -> tuple:
        nx, ny = spec.grid_shape
        xs = (np.arange(nx) + 0.5) * spec.cell_size
        ys = (np.arange(ny) + 0.5) * spec.cell_size
        return np.meshgrid(xs, ys, indexing="ij")

    @staticmethod
    def _entry_height(state: TerrainState, action: ScoopAction) -> float:
        nx, ny = state.shape
        i = min(max(int(action.x // state.cell_size), 0), nx - 1)
        j = min(max(int(action.y // state.cell_size), 0), ny - 1)
        return float(state.height[i, j])

    @staticmethod
    def _scoopability_lut(spec: TerrainSpec) -> np.ndarray:
        lut = np.zeros(256)
        for m in spec.materials:
            lut[m.id] = m.scoopability
        return lut


class PlannerEmulator:
    """
    Feasibility oracle used during fallback selection.

    Accepts an action iff it is geometrically feasible and a seeded coin with
    the configured failure rate does not reject it. The coin is only drawn for
    feasible actions when the rate is positive.
    """

    def __init__(self, terrain: TerrainService, state: TerrainState, failure_rate: float,
                 rng: Optional[np.random.Generator] = None):
        if not 0.0 <= failure_rate <= 1.0:
            raise ValueError(f"Planner failure rate must lie in [0, 1], got {failure_rate}")
        self.terrain = terrain
        self.state = state
        self.failure_rate = failure_rate
        self.rng = rng or np.random.default_rng(0)
        self.failures = 0

    def __call__(self, action: ScoopAction) -> bool:
        if not self.terrain.check_feasibility(self.state, action):
            return False
        if self.failure_rate > 0.0 and self.rng.random() < self.failure_rate:
            self.failures += 1
            logger.info(f"Simulated planning failure for {action.as_tuple()}")
            return False
        return True
