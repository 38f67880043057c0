"""
Application Configuration Module

This module manages all simulator, perception, training and harness settings
using Pydantic BaseSettings.

Each concern gets its own settings class with its own environment prefix so
values can be overridden from the environment or a .env file. A structured
JSON configuration file (see SCOOPING_README.md) can override any section; file
values win over environment values.
"""

import json
import math
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.exceptions import ConfigurationError


def _section_config(prefix: str) -> SettingsConfigDict:
    # Shared behaviour for every settings section; only the prefix differs
    return SettingsConfigDict(
        env_prefix=prefix,
        env_file="./.env",           # Load from .env file in project root
        env_ignore_empty=True,       # Ignore empty environment variables
        extra="ignore",              # Ignore extra fields not defined in the model
        env_file_encoding="utf-8",
    )


class ProjectSettings(BaseSettings):
    """
    Project-level configuration settings.

    Attributes:
        PROJECT_NAME (str): Human-readable name of the project
        VERSION (str): Semantic version of the application
        DEBUG (bool): Debug mode flag
        LOG_LEVEL (str): Root logging level used by the CLI
        RESULTS_DIR (str): Default directory for persisted results
    """
    PROJECT_NAME: str = "Adaptive Scooping Simulator"
    VERSION: str = "1.0.0"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"
    RESULTS_DIR: str = "results"

    model_config = _section_config("PROJECT_")


class ScoopSettings(BaseSettings):
    """
    Scoop tool geometry and excavation model parameters.

    Attributes:
        WIDTH (float): Footprint width w in cm
        LENGTH (float): Footprint travel length L in cm
        BOWL_DEPTH (float): Per-cell column capacity in cm
        CAPACITY_FACTOR (float): Total capacity as a fraction of w * L * BOWL_DEPTH
        JAM_THRESHOLD (float): Unscoopable contact fraction above which the scoop jams
        JAM_FACTOR (float): Multiplier applied to removal and collection on a jam
        FOOTPRINT_SUBSAMPLES (int): Sub-samples per cell edge for coverage fractions
        DEPTHS (List[float]): Allowed scooping depths d in cm
        YAW_COUNT (int): Number of uniformly spaced yaw angles
        STIFFNESS_LEVELS (List[str]): Stiffness values used when generating candidates

    Note:
        The depth set follows the published values; scale it (for example to
        2-8 cm) through SCOOP_DEPTHS if a deeper cut is wanted.
    """
    WIDTH: float = Field(6.0, gt=0)
    LENGTH: float = Field(12.0, gt=0)
    BOWL_DEPTH: float = Field(4.0, gt=0)
    CAPACITY_FACTOR: float = Field(0.9, gt=0)
    JAM_THRESHOLD: float = Field(0.25, ge=0, le=1)
    JAM_FACTOR: float = Field(0.0, ge=0, le=1)
    FOOTPRINT_SUBSAMPLES: int = Field(16, ge=1)
    DEPTHS: List[float] = [0.2, 0.4, 0.6, 0.8]
    YAW_COUNT: int = Field(8, ge=1)
    STIFFNESS_LEVELS: List[Literal["low", "high"]] = ["high"]

    model_config = _section_config("SCOOP_")

    @field_validator("DEPTHS")
    @classmethod
    def _depths_positive(cls, value: List[float]) -> List[float]:
        if not value or any(d <= 0 for d in value):
            raise ValueError("depth set must be non-empty and strictly positive")
        return sorted(value)

    @property
    def yaws(self) -> List[float]:
        """Uniformly spaced yaw angles in radians, starting at 0."""
        return [2.0 * math.pi * i / self.YAW_COUNT for i in range(self.YAW_COUNT)]

    @property
    def capacity(self) -> float:
        """Total volume the scoop can hold, in cm^3."""
        return self.CAPACITY_FACTOR * self.WIDTH * self.LENGTH * self.BOWL_DEPTH


class WorkspaceSettings(BaseSettings):
    """
    Reachable workspace of the arm and the simulated motion planner.

    Attributes:
        CLEARANCE (float): Margin in cm the footprint must keep from the bin walls
        REACH_ORIGIN_X (float): Arm base x in the bin frame, cm
        REACH_ORIGIN_Y (float): Arm base y in the bin frame, cm
        REACH_MIN (float): Inner radius of the reach annulus, cm
        REACH_MAX (float): Outer radius of the reach annulus, cm
        PLANNER_FAILURE_RATE (float): Probability that planning a feasible action fails
    """
    CLEARANCE: float = Field(1.0, ge=0)
    REACH_ORIGIN_X: float = 45.0
    REACH_ORIGIN_Y: float = -25.0
    REACH_MIN: float = Field(0.0, ge=0)
    REACH_MAX: float = Field(200.0, gt=0)
    PLANNER_FAILURE_RATE: float = Field(0.0, ge=0, le=1)

    model_config = _section_config("WORKSPACE_")


class PerceptionSettings(BaseSettings):
    """
    Simulated RGB-D camera and observation processing parameters.

    The default camera looks at the bin from beyond its x = 0 short edge with a
    45 degree downward tilt, so the optical axis meets the bin centre.

    Attributes:
        CAMERA_X, CAMERA_Y, CAMERA_Z (float): Camera position in the bin frame, cm
        CAMERA_PAN (float): Yaw of the optical axis from +x, radians
        CAMERA_TILT (float): Downward pitch of the optical axis, radians
        FOCAL_PX (float): Focal length in pixels
        RESOLUTION_W, RESOLUTION_H (int): Image resolution in pixels
        DEPTH_NOISE_STD (float): Additive depth noise sigma in cm
        NOISE_SEED (int): Seed for the depth noise generator
        FLOOR_HEIGHT (float): Bin floor height; points below are anomalies
        MAX_PLAUSIBLE_HEIGHT (float): Points above are anomalies
        FILL_RADIUS_CELLS (float): Inverse-distance interpolation radius in cells
        FILL_NEIGHBORS (int): Neighbours used by inverse-distance interpolation
        PATCH_SIZE (int): Patch edge P in pixels
        PATCH_EXTENT (float): Physical patch edge in cm; at least twice the scoop length so the
            patch, centred on the scoop start, covers the whole footprint
        RAY_STEP (float): Ray-marching step along the ray, cm
    """
    CAMERA_X: float = -20.0
    CAMERA_Y: float = 35.0
    CAMERA_Z: float = 70.0
    CAMERA_PAN: float = 0.0
    CAMERA_TILT: float = math.pi / 4
    FOCAL_PX: float = Field(200.0, gt=0)
    RESOLUTION_W: int = Field(320, ge=1)
    RESOLUTION_H: int = Field(240, ge=1)
    DEPTH_NOISE_STD: float = Field(0.0, ge=0)
    NOISE_SEED: int = 0
    FLOOR_HEIGHT: float = 0.0
    MAX_PLAUSIBLE_HEIGHT: float = 30.0
    FILL_RADIUS_CELLS: float = Field(8.0, gt=0)
    FILL_NEIGHBORS: int = Field(8, ge=1)
    PATCH_SIZE: int = Field(24, ge=4)
    PATCH_EXTENT: float = Field(24.0, gt=0)
    RAY_STEP: float = Field(0.25, gt=0)

    model_config = _section_config("PERCEPTION_")


class PolicySettings(BaseSettings):
    """
    Candidate generation and acquisition parameters.

    Attributes:
        GRID_PITCH (float): Spacing of candidate grid points, cm
        BETA (float): Upper-confidence exploration weight
        MAX_SLOPE (float): Largest local slope (rise over run) of a scoopable grid point
        MAX_SCOOP_HEIGHT (float): Grid points higher than this are not scooped
    """
    GRID_PITCH: float = Field(5.0, gt=0)
    BETA: float = Field(1.0, ge=0)
    MAX_SLOPE: float = Field(2.0, gt=0)
    MAX_SCOOP_HEIGHT: float = Field(18.0, gt=0)

    model_config = _section_config("POLICY_")


class TrainingSettings(BaseSettings):
    """
    Surrogate architecture and CoDeGa training schedule.

    Attributes:
        FEATURE_DIM (int): Encoder output dimension F
        CONV_CHANNELS (List[int]): Channels of the two convolution stages
        ENCODER_HIDDEN (int): Hidden width of the encoder head
        MEAN_HIDDEN (int): Hidden width of the deep mean
        ACTIONS_PER_TERRAIN (int): Scoops N recorded per training terrain
        RESET_EVERY (int): Terrain reset cadence during data collection
        FOLDS (int): Number of folds F
        MEAN_EPOCHS (int): Deep mean training epochs
        MEAN_LR (float): Deep mean learning rate
        MEAN_MOMENTUM (float): Deep mean momentum
        BATCH_SIZE (int): Deep mean mini-batch size
        KERNEL_STEPS (int): Kernel optimisation steps
        KERNEL_LR (float): Kernel learning rate
        KERNEL_MOMENTUM (float): Kernel momentum
        QUERY_SIZE (int): Query points per episodic sample
        SUPPORT_MAX (int): Largest support size sampled (k - 1)
        MARGINAL_BATCH (int): Batch size of the marginal-likelihood objective
        KERNEL_OBJECTIVE (str): "episodic" predictive NLL or "marginal" NLML
        LENGTHSCALE_MODE (str): "shared" or per-dimension "ard" lengthscales
        EVAL_INTERVAL (int): Steps between monitored kernel evaluations
        EVAL_EPISODES (int): Fixed episodes per fold in the monitored loss
        SIGNAL_VARIANCE_FLOOR (float): Lower bound of the signal variance
        NOISE_VARIANCE_FLOOR (float): Lower bound of the noise variance
    """
    FEATURE_DIM: int = Field(16, ge=1)
    CONV_CHANNELS: List[int] = [4, 8]
    ENCODER_HIDDEN: int = Field(32, ge=1)
    MEAN_HIDDEN: int = Field(32, ge=1)
    ACTIONS_PER_TERRAIN: int = Field(120, ge=0)
    RESET_EVERY: int = Field(40, ge=1)
    FOLDS: int = Field(4, ge=1)
    MEAN_EPOCHS: int = Field(80, ge=1)
    MEAN_LR: float = Field(0.01, gt=0)
    MEAN_MOMENTUM: float = Field(0.9, ge=0, lt=1)
    BATCH_SIZE: int = Field(32, ge=1)
    KERNEL_STEPS: int = Field(600, ge=0)
    KERNEL_LR: float = Field(0.01, gt=0)
    KERNEL_MOMENTUM: float = Field(0.9, ge=0, lt=1)
    QUERY_SIZE: int = Field(8, ge=1)
    SUPPORT_MAX: int = Field(4, ge=0)
    MARGINAL_BATCH: int = Field(12, ge=1)
    KERNEL_OBJECTIVE: Literal["episodic", "marginal"] = "episodic"
    LENGTHSCALE_MODE: Literal["shared", "ard"] = "shared"
    EVAL_INTERVAL: int = Field(25, ge=1)
    EVAL_EPISODES: int = Field(16, ge=1)
    SIGNAL_VARIANCE_FLOOR: float = Field(1e-6, gt=0)
    NOISE_VARIANCE_FLOOR: float = Field(1e-6, gt=0)

    model_config = _section_config("TRAINING_")

    @field_validator("CONV_CHANNELS")
    @classmethod
    def _two_stages(cls, value: List[int]) -> List[int]:
        if len(value) != 2 or any(c < 1 for c in value):
            raise ValueError("encoder expects exactly two positive convolution widths")
        return value


class HarnessSettings(BaseSettings):
    """
    Episode and experiment orchestration.

    Attributes:
        BUDGET (int): Scooping attempts k per episode
        RUNS_PER_CELL (int): Seeds per (scenario, policy) cell
        MAX_PARALLEL_EPISODES (int): Concurrent episodes in an experiment
    """
    BUDGET: int = Field(5, ge=1)
    RUNS_PER_CELL: int = Field(10, ge=1)
    MAX_PARALLEL_EPISODES: int = Field(8, ge=1)

    model_config = _section_config("HARNESS_")


class Settings(BaseModel):
    """
    Aggregate of every settings section.

    Sections are constructed independently so each one still honours its own
    environment prefix; values from a configuration file are passed as init
    arguments and therefore take precedence.
    """
    project: ProjectSettings = Field(default_factory=ProjectSettings)
    scoop: ScoopSettings = Field(default_factory=ScoopSettings)
    workspace: WorkspaceSettings = Field(default_factory=WorkspaceSettings)
    perception: PerceptionSettings = Field(default_factory=PerceptionSettings)
    policy: PolicySettings = Field(default_factory=PolicySettings)
    training: TrainingSettings = Field(default_factory=TrainingSettings)
    harness: HarnessSettings = Field(default_factory=HarnessSettings)

    def override(self, **sections: dict) -> "Settings":
        """
        Return a copy with selected fields of selected sections replaced.

        Args:
            **sections: Mapping of section name to a dict of field overrides

        Returns:
            Settings: New settings; the receiver is left untouched
        """
        update = {}
        for name, values in sections.items():
            current = getattr(self, name)
            update[name] = type(current)(**{**current.model_dump(), **values})
        return self.model_copy(update=update)


_SECTIONS = {
    "project": ProjectSettings,
    "scoop": ScoopSettings,
    "workspace": WorkspaceSettings,
    "perception": PerceptionSettings,
    "policy": PolicySettings,
    "training": TrainingSettings,
    "harness": HarnessSettings,
}


def load_settings(path: Optional[Path] = None) -> Settings:
    """
    Load settings from an optional JSON configuration file.

    Args:
        path (Path, optional): Configuration file; top-level keys are section names

    Returns:
        Settings: Validated settings

    Raises:
        ConfigurationError: If the file is unreadable, malformed or fails validation
    """
    if path is None:
        return Settings()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Cannot read configuration file {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigurationError(f"Configuration file {path} must contain a JSON object")

    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigurationError(f"Unknown configuration sections: {', '.join(unknown)}")
    try:
        return Settings(**{name: cls(**data.get(name, {})) for name, cls in _SECTIONS.items()})
    except ValidationError as e:
        raise ConfigurationError("Invalid configuration", details=e.errors())


# Default configuration instance
# Loads from environment variables and .env; the CLI replaces it when --config is given
settings = Settings()
