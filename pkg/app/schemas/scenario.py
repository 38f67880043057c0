"""
Scenario, Episode and Experiment Schemas

Pydantic models for episode configuration and the persisted results of
episodes and experiments.
"""

import math
from enum import Enum
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, PrivateAttr, model_validator

from app.schemas.action import ScoopAction


class PolicyKind(str, Enum):
    """Action selection strategy."""
    CODEGA = "codega"
    NON_ADAPTIVE = "non_adaptive"
    VOL_MAX = "vol_max"

    @property
    def needs_model(self) -> bool:
        return self is not PolicyKind.VOL_MAX

    @property
    def label(self) -> str:
        return {"codega": "CoDeGa", "non_adaptive": "Non-Adaptive", "vol_max": "Vol-Max"}[self.value]


class ScenarioConfig(BaseModel):
    scenario_id: str = Field(..., description="Terrain spec id")
    policy: PolicyKind = Field(..., description="Policy used for the episode")
    budget: int = Field(5, ge=1, description="Scooping attempts k")
    seed: int = Field(0, description="Master seed of the episode")
    planner_failure_rate: float = Field(0.0, ge=0, le=1, description="Probability a feasible plan fails")
    perception_config: str = Field("default", description="Perception configuration id")
    beta: Optional[float] = Field(None, ge=0, description="UCB weight; policy default when omitted")


class AttemptRecord(BaseModel):
    attempt: int = Field(..., ge=1, description="Attempt number n")
    action: ScoopAction = Field(..., description="Executed action")
    candidate_count: int = Field(..., ge=0, description="Number of scored candidates")
    volume: float = Field(..., ge=0, description="Collected volume, cm^3")
    mass: float = Field(..., ge=0, description="Collected mass, g")
    jammed: bool = Field(False, description="The scoop jammed on unscoopable material")
    fallback_depth: int = Field(0, ge=0, description="Rank position of the executed candidate (0 = top)")
    scoopable_fraction: float = Field(..., ge=0, le=1, description="Footprint share on scoopable material")
    predicted_mean: Optional[float] = Field(None, description="Surrogate mean of the executed action, cm^3")
    predicted_std: Optional[float] = Field(None, description="Surrogate standard deviation, cm^3")


class EpisodeResult(BaseModel):
    """
    Outcome of one k-attempt episode.

    An aborted episode stopped early on an empty candidate set or a planning
    failure; a failed one raised an unexpected error and is left out of the
    summary. The final support set is kept in memory only; its (action, reward) content
    is already in the attempt records. Wall clock time is excluded from
    serialization so repeated runs persist identical bytes.
    """
    config: ScenarioConfig
    attempts: List[AttemptRecord] = Field(default_factory=list)
    status: Literal["completed", "aborted", "failed"] = "completed"
    abort_reason: Optional[str] = None
    total_mass: float = Field(0.0, ge=0, description="Sum of attempt masses, g")
    support_size: int = Field(0, ge=0, description="Final size of the support set")
    wall_clock: float = Field(0.0, exclude=True, description="Seconds spent running the episode")

    _support = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _consistent(self) -> "EpisodeResult":
        if len(self.attempts) > self.config.budget:
            raise ValueError(f"{len(self.attempts)} attempts exceed budget {self.config.budget}")
        if self.status == "completed" and len(self.attempts) != self.config.budget:
            raise ValueError("a completed episode records exactly k attempts")
        expected = math.fsum(a.mass for a in self.attempts)
        if self.total_mass != expected:
            raise ValueError(f"total mass {self.total_mass} differs from attempt sum {expected}")
        return self

    @property
    def key(self) -> Tuple[str, str, int]:
        return (self.config.scenario_id, self.config.policy.value, self.config.seed)

    @property
    def support(self):
        return self._support


class SummaryCell(BaseModel):
    scenario_id: str = Field(..., description="Terrain spec id")
    policy: PolicyKind = Field(..., description="Policy")
    runs: int = Field(..., ge=0, description="Completed or aborted episodes in the cell")
    mean_mass: float = Field(..., description="Mean total mass per run, g")
    totals: List[float] = Field(default_factory=list, description="Total mass of each run, g")

    @model_validator(mode="after")
    def _mean_matches(self) -> "SummaryCell":
        if self.totals and self.mean_mass != mean_of(self.totals):
            raise ValueError("stored mean differs from the mean of the per-run totals")
        return self


class ExperimentSummary(BaseModel):
    cells: List[SummaryCell] = Field(default_factory=list)
    failures: int = Field(0, ge=0, description="Episodes that raised instead of producing a result")

    def scenarios(self) -> List[str]:
        return sorted({c.scenario_id for c in self.cells})

    def policies(self) -> List[PolicyKind]:
        order = list(PolicyKind)
        return sorted({c.policy for c in self.cells}, key=order.index)

    def mean(self, scenario_id: str, policy: PolicyKind) -> Optional[float]:
        for cell in self.cells:
            if cell.scenario_id == scenario_id and cell.policy == policy:
                return cell.mean_mass
        return None

    def policy_average(self, policy: PolicyKind) -> float:
        """Average over scenarios of the per-scenario means of a policy."""
        return mean_of([c.mean_mass for c in self.cells if c.policy == policy])


def mean_of(values: List[float]) -> float:
    """Exactly rounded mean; 0.0 for an empty list."""
    return math.fsum(values) / len(values) if values else 0.0
