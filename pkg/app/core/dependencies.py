"""
Dependency Wiring Module

Builds the service graph from a Settings instance. Commands receive a
Services container instead of constructing services themselves, so every
command sees one consistent configuration and tests can swap in small
settings.
"""

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional

from app.config import Settings
from app.models.surrogate import SurrogateModel
from app.repositories.checkpoint import CheckpointRepository
from app.repositories.dataset import DatasetRepository
from app.repositories.raster import RasterRepository
from app.repositories.results import ResultsRepository
from app.services.harness import HarnessService
from app.services.perception import PerceptionService
from app.services.policy import PolicyService
from app.services.scenarios import ScenarioLibrary
from app.services.terrain import TerrainService
from app.services.training import TrainingService


@dataclass
class Services:
    """
    Lazily constructed services and repositories for one configuration.

    Attributes:
        settings (Settings): Configuration every service is built from
        seed (int): Master seed given on the command line
    """
    settings: Settings
    seed: int = 0

    @cached_property
    def library(self) -> ScenarioLibrary:
        return ScenarioLibrary(training_seed=self.seed)

    @cached_property
    def terrain(self) -> TerrainService:
        return TerrainService(self.settings.scoop, self.settings.workspace)

    @cached_property
    def perception(self) -> PerceptionService:
        return PerceptionService(self.settings.perception)

    @cached_property
    def policy(self) -> PolicyService:
        return PolicyService(self.settings.policy, self.settings.scoop, self.terrain, self.perception)

    @cached_property
    def training(self) -> TrainingService:
        return TrainingService(self.settings, self.terrain, self.perception, self.policy)

    @cached_property
    def harness(self) -> HarnessService:
        return HarnessService(self.settings, self.terrain, self.policy, self.library, self.results)

    @cached_property
    def checkpoints(self) -> CheckpointRepository:
        return CheckpointRepository()

    @cached_property
    def datasets(self) -> DatasetRepository:
        return DatasetRepository()

    @cached_property
    def rasters(self) -> RasterRepository:
        return RasterRepository()

    @cached_property
    def results(self) -> ResultsRepository:
        return ResultsRepository()

    def load_model(self, path: Optional[Path]) -> Optional[SurrogateModel]:
        return None if path is None else self.checkpoints.load(path)


def get_services(settings: Settings, seed: int = 0) -> Services:
    return Services(settings=settings, seed=seed)
