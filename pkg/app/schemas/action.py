"""
Scoop Action Schema Definitions

Pydantic models for the scoop motion primitive and the outcome of executing it.
"""

from enum import Enum
from typing import Dict

from pydantic import BaseModel, ConfigDict, Field


class Stiffness(str, Enum):
    """Impedance-controller stiffness level of the primitive."""
    LOW = "low"
    HIGH = "high"


class ScoopAction(BaseModel):
    """
    Scoop motion primitive parameters (x, y, theta, d, b).

    Attributes:
        x, y (float): Start of the cut in the bin frame, cm
        theta (float): Scoop heading (yaw) in radians
        depth (float): Cut depth d below the entry height, cm
        stiffness (Stiffness): Controller stiffness b
    """
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    theta: float
    depth: float = Field(..., gt=0)
    stiffness: Stiffness = Stiffness.HIGH

    def as_tuple(self) -> tuple:
        return (self.x, self.y, self.theta, self.depth, self.stiffness.value)


class ScoopOutcome(BaseModel):
    """
    Ground-truth result of one executed scoop.

    Attributes:
        volume (float): Collected volume in cm^3 (the reward)
        mass (float): Collected mass in g
        jammed (bool): The scoop met too much unscoopable material above the cut plane
        removed_volume (float): Volume removed from the heightmap in cm^3
        volumes_by_material (Dict[int, float]): Collected volume per material id
        scoopable_fraction (float): Share of the footprint lying on scoopable material
        executed_action (ScoopAction): The action that produced this outcome
    """
    volume: float = Field(..., ge=0)
    mass: float = Field(..., ge=0)
    jammed: bool
    removed_volume: float = Field(..., ge=0)
    volumes_by_material: Dict[int, float] = {}
    scoopable_fraction: float = Field(..., ge=0, le=1)
    executed_action: ScoopAction
