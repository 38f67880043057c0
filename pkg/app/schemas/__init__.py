from .action import ScoopAction, ScoopOutcome, Stiffness
from .scenario import AttemptRecord, EpisodeResult, ExperimentSummary, PolicyKind, ScenarioConfig, SummaryCell
from .terrain import CircleRegion, MaterialSpec, MoundSpec, PolygonRegion, RectRegion, TerrainSpec
from .training import FoldPlan, TrainingLogEntry, TrainingReport

__all__ = [
    "ScoopAction", "ScoopOutcome", "Stiffness",
    "AttemptRecord", "EpisodeResult", "ExperimentSummary", "PolicyKind", "ScenarioConfig", "SummaryCell",
    "CircleRegion", "MaterialSpec", "MoundSpec", "PolygonRegion", "RectRegion", "TerrainSpec",
    "FoldPlan", "TrainingLogEntry", "TrainingReport"
]
