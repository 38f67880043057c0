"""
Harness Service Module

Runs the deployment loop and experiments over scenarios, policies and seeds.

Each attempt of an episode:
1. renders and processes a fresh observation of the current terrain;
2. generates candidates and ranks them with the episode's policy, the
   support set holding the n - 1 earlier attempts;
3. walks down the ranking until the planner emulator accepts an action;
4. executes it, measures the mass and appends (patch, action, volume) to the
   support set. The mutated terrain carries over to the next attempt.

Every random choice of an episode is derived from its master seed.
"""

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from app.config import Settings
from app.core.random import derive_seed, rng_for
from app.exceptions import ConfigurationError, EmptyCandidateSetError, PlanningFailureError
from app.models.candidate import CandidateSet, Ranking, Selection
from app.models.observation import RasterObservation
from app.models.surrogate import SupportSet, SurrogateModel
from app.models.terrain import TerrainState
from app.repositories.results import ResultsRepository
from app.schemas.action import ScoopAction
from app.schemas.scenario import (AttemptRecord, EpisodeResult, ExperimentSummary, PolicyKind, ScenarioConfig,
                                  SummaryCell, mean_of)
from app.services.perception import PerceptionService
from app.services.policy import PolicyService
from app.services.scenarios import ScenarioLibrary
from app.services.terrain import PlannerEmulator, TerrainService
from app.worker.tasks import run_bounded

logger = logging.getLogger(__name__)

PERCEPTION_PROFILES: Dict[str, dict] = {
    "default": {},
    "noisy": {"DEPTH_NOISE_STD": 0.2},
}


@dataclass
class AttemptTrace:
    """In-memory view of one attempt, for plots and rank dumps."""
    attempt: int
    raster: RasterObservation
    candidates: CandidateSet
    ranking: Ranking
    selection: Selection
    state_before: TerrainState


class HarnessService:
    """
    Service class for episodes and experiments.

    Attributes:
        settings (Settings): Full settings
        terrain (TerrainService): Terrain synthesis and execution
        policy (PolicyService): Candidate generation and selection
        library (ScenarioLibrary): Terrain specs by id
        results (ResultsRepository): Persistence for experiment output

    Methods:
        run_episode: One k-attempt episode
        run_experiment: Every (scenario, policy, seed) cell, in parallel
        summarize: Per-cell mean mass from episode results
        calibration_volume: Volume of a standard scoop on flat Regolith
    """

    def __init__(self, settings: Settings, terrain: TerrainService, policy: PolicyService,
                 library: ScenarioLibrary, results: Optional[ResultsRepository] = None):
        self.settings = settings
        self.terrain = terrain
        self.policy = policy
        self.library = library
        self.results = results or ResultsRepository()
        self._perception: Dict[str, PerceptionService] = {}

    def perception_for(self, profile: str) -> PerceptionService:
        """
        Raises:
            ConfigurationError: If the profile id is unknown
        """
        if profile not in PERCEPTION_PROFILES:
            raise ConfigurationError(f"Unknown perception config '{profile}'",
                                     details=sorted(PERCEPTION_PROFILES))
        if profile not in self._perception:
            section = self.settings.perception
            settings = type(section)(**{**section.model_dump(), **PERCEPTION_PROFILES[profile]})
            self._perception[profile] = PerceptionService(settings)
        return self._perception[profile]

    def run_episode(self, config: ScenarioConfig, model: Optional[SurrogateModel] = None,
                    trace: Optional[List[AttemptTrace]] = None) -> EpisodeResult:
        """
        Run one episode.

        Args:
            config (ScenarioConfig): Scenario, policy, budget and seed
            model (SurrogateModel, optional): Required by CoDeGa and Non-Adaptive
            trace (List[AttemptTrace], optional): Receives per-attempt observations and rankings

        Returns:
            EpisodeResult: k attempt records, or fewer with status "aborted"

        Raises:
            ConfigurationError: If the policy needs a model and none is given
            InvalidTerrainSpecError: If the scenario id does not resolve
        """
        if config.policy.needs_model and model is None:
            raise ConfigurationError(f"Policy {config.policy.value} needs a model checkpoint")
        started = time.perf_counter()
        spec = self.library.get(config.scenario_id)
        perception = self.perception_for(config.perception_config)
        state = self.terrain.synthesize_terrain(spec.with_seed(derive_seed(config.seed, "terrain", spec.spec_id)))
        tie_rng = rng_for(config.seed, "ties")
        noise_rng = rng_for(config.seed, "noise")
        planner = PlannerEmulator(self.terrain, state, config.planner_failure_rate, rng_for(config.seed, "planner"))
        support = SupportSet(config.budget)
        attempts: List[AttemptRecord] = []
        status, reason = "completed", None

        for n in range(1, config.budget + 1):
            raster = perception.observe(state, rng=noise_rng)
            try:
                candidates = self.policy.generate_candidates(raster, state)
                ranking = self.policy.select_action(config.policy, candidates, tie_rng, model=model,
                                                    support=support, raster=raster, beta=config.beta)
                planner.state = state
                selection = self.policy.fallback_select(ranking, candidates, planner)
            except (EmptyCandidateSetError, PlanningFailureError) as e:
                status, reason = "aborted", f"attempt {n}: {e}"
                logger.warning(f"Episode {config.scenario_id}/{config.policy.value}/seed {config.seed} "
                               f"aborted: {reason}")
                break

            if trace is not None:
                trace.append(AttemptTrace(n, raster, candidates, ranking, selection, state))
            candidate = candidates[selection.candidate_index]
            outcome, state = self.terrain.execute_scoop(state, selection.action)
            support.append(candidate.patch, selection.action, outcome.volume)
            index = selection.candidate_index
            attempts.append(AttemptRecord(
                attempt=n,
                action=selection.action,
                candidate_count=len(candidates),
                volume=outcome.volume,
                mass=outcome.mass,
                jammed=outcome.jammed,
                fallback_depth=selection.fallback_depth,
                scoopable_fraction=outcome.scoopable_fraction,
                predicted_mean=None if ranking.means is None else float(ranking.means[index]),
                predicted_std=None if ranking.stds is None else float(ranking.stds[index]),
            ))
            logger.info(f"{config.scenario_id}/{config.policy.value}/seed {config.seed} attempt {n}: "
                        f"{outcome.volume:.1f} cm3, {outcome.mass:.1f} g"
                        f"{' (jammed)' if outcome.jammed else ''}")

        result = EpisodeResult(
            config=config,
            attempts=attempts,
            status=status,
            abort_reason=reason,
            total_mass=math.fsum(a.mass for a in attempts),
            support_size=len(support),
            wall_clock=time.perf_counter() - started,
        )
        result._support = support
        return result

    async def run_experiment(self, scenario_ids: Sequence[str], policies: Sequence[PolicyKind],
                             seeds: Sequence[int], model: Optional[SurrogateModel] = None,
                             output_dir: Optional[Path] = None, budget: Optional[int] = None,
                             planner_failure_rate: Optional[float] = None,
                             beta: Optional[float] = None) -> Tuple[ExperimentSummary, List[EpisodeResult]]:
        """
        Run every (scenario, policy, seed) episode and aggregate per cell.

        Episodes run concurrently up to MAX_PARALLEL_EPISODES. An episode that
        raises is recorded with status "failed" and counted, not propagated.
        Results are sorted by (scenario, policy, seed) before aggregation and
        persistence so the output does not depend on completion order.

        Returns:
            Tuple[ExperimentSummary, List[EpisodeResult]]: Summary and sorted results
        """
        for scenario_id in scenario_ids:
            self.library.get(scenario_id)
        harness = self.settings.harness
        rate = self.settings.workspace.PLANNER_FAILURE_RATE if planner_failure_rate is None else planner_failure_rate
        configs = sorted(
            (ScenarioConfig(scenario_id=s, policy=p, budget=budget or harness.BUDGET, seed=seed,
                            planner_failure_rate=rate, beta=beta)
             for s in scenario_ids for p in policies for seed in seeds),
            key=lambda c: (c.scenario_id, c.policy.value, c.seed),
        )
        logger.info(f"Running {len(configs)} episodes "
                    f"({len(scenario_ids)} scenarios x {len(policies)} policies x {len(seeds)} seeds)")

        outcomes = await run_bounded(lambda c: self.run_episode(c, model), configs, harness.MAX_PARALLEL_EPISODES)
        results = []
        for config, outcome in zip(configs, outcomes):
            if isinstance(outcome, BaseException):
                logger.error(f"Episode {config.scenario_id}/{config.policy.value}/seed {config.seed} failed: "
                             f"{outcome}")
                outcome = EpisodeResult(config=config, status="failed", abort_reason=str(outcome))
            results.append(outcome)
        results.sort(key=lambda r: r.key)

        summary = self.summarize(results)
        if output_dir is not None:
            for result in results:
                self.results.save_episode(result, output_dir)
            self.results.save_summary(summary, Path(output_dir) / "summary.csv")
        return summary, results

    @staticmethod
    def summarize(results: Sequence[EpisodeResult]) -> ExperimentSummary:
        """Mean total mass per (scenario, policy) cell; failed episodes are counted apart."""
        cells: Dict[Tuple[str, PolicyKind], List[EpisodeResult]] = {}
        failures = 0
        for result in sorted(results, key=lambda r: r.key):
            if result.status == "failed":
                failures += 1
                continue
            cells.setdefault((result.config.scenario_id, result.config.policy), []).append(result)
        order = list(PolicyKind)
        summary_cells = []
        for (scenario_id, policy) in sorted(cells, key=lambda k: (k[0], order.index(k[1]))):
            totals = [r.total_mass for r in cells[(scenario_id, policy)]]
            summary_cells.append(SummaryCell(scenario_id=scenario_id, policy=policy, runs=len(totals),
                                             mean_mass=mean_of(totals), totals=totals))
        return ExperimentSummary(cells=summary_cells, failures=failures)

    def calibration_volume(self) -> float:
        """
        Volume collected by a maximum-depth, heading-0 scoop at the centre of flat Regolith.

        Used as the reference for "low volume" in the adaptation analysis.
        """
        spec = self.library.get("flat_regolith")
        state = self.terrain.synthesize_terrain(spec)
        action = ScoopAction(x=spec.bin_width / 2, y=spec.bin_length / 2, theta=0.0,
                             depth=max(self.settings.scoop.DEPTHS))
        outcome, _ = self.terrain.execute_scoop(state, action)
        return outcome.volume
