"""
Training Dataset Models

Per-terrain scoop records gathered on the training terrains, the residual sets
derived from them, and episodic (support, query) samples used to train the
residual kernel.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import torch

from app.models.observation import Patch
from app.schemas.action import ScoopAction


@dataclass(frozen=True)
class TrainingRecord:
    """One executed scoop: the patch seen, the action taken and the collected volume (cm^3)."""
    terrain_id: str
    patch: Patch
    action: ScoopAction
    reward: float


@dataclass
class TerrainRecords:
    """
    Records D_i of one training terrain.

    Attributes:
        terrain_id (str): Terrain spec id
        materials (Tuple[str, ...]): Names of the materials on the terrain
        family (str): Material family used to group folds
        records (List[TrainingRecord]): Scoops in collection order
    """
    terrain_id: str
    materials: Tuple[str, ...]
    family: str
    records: List[TrainingRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


class TrainingDataset:
    """Ordered mapping of terrain id to its records."""

    def __init__(self, terrains: Iterable[TerrainRecords] = ()):
        self._terrains: Dict[str, TerrainRecords] = {}
        for terrain in terrains:
            self.add(terrain)

    def add(self, terrain: TerrainRecords) -> None:
        if terrain.terrain_id in self._terrains:
            raise ValueError(f"Duplicate terrain id '{terrain.terrain_id}'")
        self._terrains[terrain.terrain_id] = terrain

    def terrain_ids(self) -> List[str]:
        return list(self._terrains)

    def terrain(self, terrain_id: str) -> TerrainRecords:
        return self._terrains[terrain_id]

    def families(self) -> Dict[str, str]:
        return {tid: t.family for tid, t in self._terrains.items()}

    def restrict(self, terrain_ids: Iterable[str]) -> "TrainingDataset":
        """Dataset holding only the given terrains, in this dataset's order."""
        wanted = set(terrain_ids)
        return TrainingDataset(t for tid, t in self._terrains.items() if tid in wanted)

    def records(self) -> List[TrainingRecord]:
        return [r for t in self._terrains.values() for r in t.records]

    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.records()], dtype=np.float64)

    def __len__(self) -> int:
        return sum(len(t) for t in self._terrains.values())

    def __iter__(self):
        return iter(self._terrains.values())


@dataclass
class ResidualSet:
    """
    Deep-mean residuals of one terrain.

    Attributes:
        terrain_id (str): Terrain the records came from
        features (torch.Tensor): (n, F) encoded features, detached
        rewards (np.ndarray): (n,) observed volumes, cm^3
        predictions (np.ndarray): (n,) deep-mean predictions, cm^3
        reward_scale (float): Standardization scale of the model that produced them
    """
    terrain_id: str
    features: torch.Tensor
    rewards: np.ndarray
    predictions: np.ndarray
    reward_scale: float

    @property
    def residuals(self) -> np.ndarray:
        """rho = r - m_hat, cm^3."""
        return self.rewards - self.predictions

    def standardized(self) -> torch.Tensor:
        return torch.from_numpy(self.residuals / self.reward_scale)

    def __len__(self) -> int:
        return int(self.rewards.shape[0])


@dataclass(frozen=True)
class EpisodicBatch:
    """Disjoint support and query record indices drawn from one terrain."""
    terrain_id: str
    support: Tuple[int, ...]
    query: Tuple[int, ...]

    @classmethod
    def sample(cls, terrain_id: str, size: int, support_max: int, query_size: int,
               rng: np.random.Generator) -> Optional["EpisodicBatch"]:
        """
        Draw a support of size uniform in [0, support_max] and a disjoint query.

        Returns None when the terrain has fewer than two records.
        """
        if size < 2:
            return None
        support_size = int(rng.integers(0, min(support_max, size - 1) + 1))
        query = min(query_size, size - support_size)
        order = rng.permutation(size)
        return cls(terrain_id,
                   tuple(int(i) for i in order[:support_size]),
                   tuple(int(i) for i in order[support_size:support_size + query]))
