"""
Policy Service Module

Candidate generation, scoring and action selection for the three policies:

- CoDeGa: upper-confidence score mu + beta * s from the surrogate posterior
  conditioned on the online support set
- Non-Adaptive: deep-mean prediction only, blind to the support set
- Vol-Max: intersection volume of the swept scoop prism with the observed
  surface, computed from the raster alone

Rankings break exact ties with a seeded uniform draw, and fallback selection
walks down a ranking until the planner accepts an action.
"""

import logging
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from app.config import PolicySettings, ScoopSettings, WorkspaceSettings
from app.exceptions import EmptyCandidateSetError, PlanningFailureError
from app.models.candidate import Candidate, CandidateSet, Ranking, Selection
from app.models.observation import RasterObservation
from app.models.surrogate import SupportSet, SurrogateModel
from app.models.terrain import TerrainState
from app.schemas.action import ScoopAction, Stiffness
from app.schemas.scenario import PolicyKind
from app.services.perception import PerceptionService
from app.services.terrain import TerrainService
from app.utils.geometry import footprint_coverage

logger = logging.getLogger(__name__)


class PolicyService:
    """
    Service class for candidate generation and action selection.

    Attributes:
        settings (PolicySettings): Grid pitch, beta and scoopable-region thresholds
        scoop (ScoopSettings): Depth, yaw and stiffness sets and footprint geometry
        terrain (TerrainService): Geometric feasibility
        perception (PerceptionService): Patch extraction

    Methods:
        generate_candidates: Feasible (action, patch) pairs on a uniform grid
        score_codega: Upper-confidence scores from the surrogate posterior
        score_nonadaptive: Deep-mean scores
        score_volmax: Swept-volume scores
        select_action: Full ranking for a policy
        fallback_select: First ranked action the planner accepts
    """

    def __init__(self, settings: PolicySettings, scoop: ScoopSettings, terrain: TerrainService,
                 perception: PerceptionService):
        self.settings = settings
        self.scoop = scoop
        self.terrain = terrain
        self.perception = perception

    def scoopable_region(self, raster: RasterObservation) -> np.ndarray:
        """Cells whose local slope and height pass the configured thresholds."""
        gx, gy = np.gradient(raster.depth, raster.cell_size)
        slope = np.hypot(gx, gy)
        return (slope <= self.settings.MAX_SLOPE) & (raster.depth <= self.settings.MAX_SCOOP_HEIGHT)

    def grid_points(self, raster: RasterObservation) -> list:
        pitch = self.settings.GRID_PITCH
        nx, ny = raster.shape
        xs = np.arange(pitch / 2, nx * raster.cell_size, pitch)
        ys = np.arange(pitch / 2, ny * raster.cell_size, pitch)
        return [(float(x), float(y)) for x in xs for y in ys]

    def feasible_yaws(self, raster: RasterObservation, state: TerrainState, x: float, y: float,
                      workspace: Optional[WorkspaceSettings] = None) -> Tuple[list, list]:
        """
        Split the configured yaws at a grid point into (feasible, excluded).

        A yaw is feasible iff its footprint passes the geometric check and its
        patch window stays inside the raster.
        """
        feasible, excluded = [], []
        probe_depth = self.scoop.DEPTHS[0]
        for theta in self.scoop.yaws:
            probe = ScoopAction(x=x, y=y, theta=theta, depth=probe_depth)
            ok = (self.terrain.check_feasibility(state, probe, workspace)
                  and self.perception.patch_coordinates(raster.shape, raster.cell_size, x, y, theta) is not None)
            (feasible if ok else excluded).append(theta)
        return feasible, excluded

    def generate_candidates(self, raster: RasterObservation, state: TerrainState,
                            workspace: Optional[WorkspaceSettings] = None) -> CandidateSet:
        """
        Candidate actions on a uniform grid over the scoopable region.

        Each feasible (point, yaw) yields one patch shared by |depths| x |stiffness|
        candidates.

        Args:
            raster (RasterObservation): Fully valid observation
            state (TerrainState): Terrain used for geometric feasibility
            workspace (WorkspaceSettings, optional): Overrides the terrain service workspace

        Returns:
            CandidateSet: Candidates plus grid metadata

        Raises:
            EmptyCandidateSetError: If no candidate survives
        """
        region = self.scoopable_region(raster)
        nx, ny = raster.shape
        stiffness_levels = [Stiffness(level) for level in self.scoop.STIFFNESS_LEVELS]
        candidates, feasible_points, excluded_yaws = [], [], {}

        for x, y in self.grid_points(raster):
            i = min(int(x // raster.cell_size), nx - 1)
            j = min(int(y // raster.cell_size), ny - 1)
            if not region[i, j]:
                continue
            feasible, excluded = self.feasible_yaws(raster, state, x, y, workspace)
            if excluded:
                excluded_yaws[(x, y)] = excluded
            if not feasible:
                continue
            feasible_points.append((x, y))
            for theta in feasible:
                base = self.perception.extract_patch(
                    raster, ScoopAction(x=x, y=y, theta=theta, depth=self.scoop.DEPTHS[0]))
                for depth in self.scoop.DEPTHS:
                    for stiffness in stiffness_levels:
                        action = ScoopAction(x=x, y=y, theta=theta, depth=depth, stiffness=stiffness)
                        candidates.append(Candidate(action, base.with_action(depth, stiffness)))

        if not candidates:
            raise EmptyCandidateSetError("No feasible candidate action on this observation")
        logger.debug(f"Generated {len(candidates)} candidates at {len(feasible_points)} grid points")
        return CandidateSet(candidates, self.settings.GRID_PITCH, feasible_points, excluded_yaws)

    def score_codega(self, model: SurrogateModel, candidates: CandidateSet, support: Optional[SupportSet],
                     beta: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Upper-confidence scores mu + beta * s.

        Returns:
            Tuple[np.ndarray, np.ndarray, np.ndarray]: (scores, means, standard deviations)
        """
        beta = self.settings.BETA if beta is None else beta
        if beta < 0:
            raise ValueError(f"beta must be >= 0, got {beta}")
        means, variances = model.predict(candidates.patches, support)
        stds = np.sqrt(variances)
        return means + beta * stds, means, stds

    @staticmethod
    def score_nonadaptive(model: SurrogateModel, candidates: CandidateSet) -> np.ndarray:
        return model.predict_mean(candidates.patches)

    def swept_volume(self, raster: RasterObservation, x: float, y: float, theta: float, depth: float,
                     coverage: Optional[tuple] = None) -> float:
        """
        Volume of observed terrain above the cut plane inside the scoop footprint, cm^3.

        The cut plane lies `depth` below the raster height of the cell holding
        (x, y), floored at the bin floor; the prism is unbounded above.
        """
        nx, ny = raster.shape
        if coverage is None:
            coverage = footprint_coverage(x, y, theta, self.scoop.LENGTH, self.scoop.WIDTH, raster.cell_size,
                                          raster.shape, self.scoop.FOOTPRINT_SUBSAMPLES)
        ii, jj, frac = coverage
        i = min(max(int(x // raster.cell_size), 0), nx - 1)
        j = min(max(int(y // raster.cell_size), 0), ny - 1)
        cut = max(float(raster.depth[i, j]) - depth, 0.0)
        column = np.maximum(raster.depth[ii, jj] - cut, 0.0)
        return float((frac * column).sum() * raster.cell_size ** 2)

    def score_volmax(self, raster: RasterObservation, candidates: CandidateSet) -> np.ndarray:
        """Swept-volume score per candidate, from geometry only."""
        cache: Dict[Tuple[float, float, float], tuple] = {}
        scores = np.empty(len(candidates))
        for index, candidate in enumerate(candidates.candidates):
            a = candidate.action
            key = (a.x, a.y, a.theta)
            if key not in cache:
                cache[key] = footprint_coverage(a.x, a.y, a.theta, self.scoop.LENGTH, self.scoop.WIDTH,
                                                raster.cell_size, raster.shape, self.scoop.FOOTPRINT_SUBSAMPLES)
            scores[index] = self.swept_volume(raster, a.x, a.y, a.theta, a.depth, cache[key])
        return scores

    def select_action(self, kind: PolicyKind, candidates: CandidateSet, rng: np.random.Generator,
                      model: Optional[SurrogateModel] = None, support: Optional[SupportSet] = None,
                      raster: Optional[RasterObservation] = None, beta: Optional[float] = None) -> Ranking:
        """
        Rank every candidate for a policy, best first.

        Exact score ties are broken by uniform keys drawn from `rng`; the keys
        are drawn for every call so the generator advances identically across
        policies.

        Raises:
            EmptyCandidateSetError: If there are no candidates
            ValueError: If the policy's model or raster is missing
        """
        if len(candidates) == 0:
            raise EmptyCandidateSetError("Cannot rank an empty candidate set")
        means = stds = None
        if kind is PolicyKind.CODEGA:
            if model is None:
                raise ValueError("CoDeGa selection needs a surrogate model")
            scores, means, stds = self.score_codega(model, candidates, support, beta)
        elif kind is PolicyKind.NON_ADAPTIVE:
            if model is None:
                raise ValueError("Non-Adaptive selection needs a surrogate model")
            scores = means = self.score_nonadaptive(model, candidates)
        else:
            if raster is None:
                raise ValueError("Vol-Max selection needs the observation raster")
            scores = self.score_volmax(raster, candidates)

        tie_keys = rng.random(len(candidates))
        order = np.lexsort((tie_keys, -scores))
        return Ranking(order=order, scores=scores, means=means, stds=stds)

    @staticmethod
    def fallback_select(ranking: Ranking, candidates: CandidateSet,
                        oracle: Callable[[ScoopAction], bool]) -> Selection:
        """
        First action in rank order that the feasibility oracle accepts.

        Raises:
            EmptyCandidateSetError: If the ranking is empty
            PlanningFailureError: If every ranked action is rejected
        """
        if len(ranking) == 0:
            raise EmptyCandidateSetError("Cannot select from an empty ranking")
        for position, index in enumerate(ranking.order):
            action = candidates[int(index)].action
            if oracle(action):
                if position > 0:
                    logger.warning(f"Planning fell back to rank {position + 1} for {action.as_tuple()}")
                return Selection(action=action, candidate_index=int(index), fallback_depth=position)
        raise PlanningFailureError(f"All {len(ranking)} ranked actions failed planning")
