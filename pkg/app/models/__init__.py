from .candidate import Candidate, CandidateSet, Ranking, Selection
from .observation import Patch, RasterObservation
from .surrogate import SupportSet, SurrogateModel
from .terrain import TerrainState

__all__ = [
    "Candidate", "CandidateSet", "Ranking", "Selection",
    "Patch", "RasterObservation",
    "SupportSet", "SurrogateModel",
    "TerrainState"
]
