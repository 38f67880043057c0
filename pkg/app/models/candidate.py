"""
Candidate Action Models

Candidate actions generated from an observation, their rankings and the result
of fallback selection.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.models.observation import Patch
from app.schemas.action import ScoopAction


@dataclass(frozen=True)
class Candidate:
    action: ScoopAction
    patch: Patch


@dataclass
class CandidateSet:
    """
    Candidates with generation metadata.

    Attributes:
        candidates (List[Candidate]): Every (action, patch) pair
        grid_pitch (float): Grid spacing used, cm
        feasible_points (List[Tuple[float, float]]): Grid points with at least one feasible yaw
        excluded_yaws (Dict[Tuple[float, float], List[float]]): Yaws dropped at each scoopable grid point
    """
    candidates: List[Candidate]
    grid_pitch: float
    feasible_points: List[Tuple[float, float]] = field(default_factory=list)
    excluded_yaws: Dict[Tuple[float, float], List[float]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.candidates)

    def __getitem__(self, index: int) -> Candidate:
        return self.candidates[index]

    @property
    def actions(self) -> List[ScoopAction]:
        return [c.action for c in self.candidates]

    @property
    def patches(self) -> List[Patch]:
        return [c.patch for c in self.candidates]


@dataclass
class Ranking:
    """
    Candidates ordered best first.

    Attributes:
        order (np.ndarray): Candidate indices, best first
        scores (np.ndarray): Score per candidate index
        means (np.ndarray, optional): Predicted mean per candidate index, cm^3
        stds (np.ndarray, optional): Predicted standard deviation per candidate index, cm^3
    """
    order: np.ndarray
    scores: np.ndarray
    means: Optional[np.ndarray] = None
    stds: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.order.shape[0])

    @property
    def best(self) -> int:
        return int(self.order[0])


@dataclass(frozen=True)
class Selection:
    """Action chosen by fallback selection and how deep into the ranking it was found."""
    action: ScoopAction
    candidate_index: int
    fallback_depth: int
