"""
Terrain State Model

The ground-truth world the simulator mutates: a heightmap and a material-id
grid sharing one shape, plus the spec they were synthesized from. A state is a
value; operations return new states instead of editing arrays in place.
"""

from dataclasses import dataclass

import numpy as np

from app.schemas.terrain import TerrainSpec


@dataclass(frozen=True)
class TerrainState:
    """
    Heightmap + material grid.

    Attributes:
        height (np.ndarray): (nx, ny) float64 heights in cm; cell (i, j) is centred
            at ((i + 0.5) * cell_size, (j + 0.5) * cell_size)
        material (np.ndarray): (nx, ny) uint8 material ids
        spec (TerrainSpec): Spec the state was synthesized from
    """
    height: np.ndarray
    material: np.ndarray
    spec: TerrainSpec

    def __post_init__(self):
        if self.height.shape != self.material.shape:
            raise ValueError("height and material grids must share dimensions")
        # Freeze the buffers so the value semantics hold for shared readers
        self.height.flags.writeable = False
        self.material.flags.writeable = False

    @property
    def shape(self) -> tuple:
        return self.height.shape

    @property
    def cell_size(self) -> float:
        return self.spec.cell_size

    @property
    def cell_area(self) -> float:
        return self.spec.cell_size ** 2

    def with_height(self, height: np.ndarray) -> "TerrainState":
        return TerrainState(height=height, material=self.material, spec=self.spec)

    def total_volume(self) -> float:
        """Volume of material above the bin floor, cm^3."""
        return float(self.height.sum() * self.cell_area)
