"""
Terrain Data Schema Definitions

This module defines the Pydantic models describing a terrain: the material
table, the region layout painted onto the bin, mounds, and the bin geometry.
They are read from and written to the structured JSON terrain spec files.

Schema Hierarchy:
- MaterialSpec: Physical and visual description of one simulant analog
- RectRegion / CircleRegion / PolygonRegion: Areas painted with one material
- MoundSpec: Raised circular feature
- TerrainSpec: Complete, seeded description of one bin

Geometric invariants that need the whole spec (regions tiling the bin, mounds
inside the bin, referenced materials present) are enforced by
TerrainService.validate_spec so that violations surface as
InvalidTerrainSpecError with diagnostics.
"""

from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from matplotlib.path import Path as PolygonPath
from pydantic import BaseModel, ConfigDict, Field


class MaterialSpec(BaseModel):
    """
    Simulant analog description.

    Attributes:
        id (int): Material identifier stored in the material grid (0-255)
        name (str): Human-readable label
        family (str): Grouping label used to keep similar materials in one fold
        scoopability (float): Fraction of swept volume actually collected
        density (float): Bulk density in g/cm^3
        roughness_amplitude (float): Surface feature height scale in cm
        roughness_length (float): Surface feature horizontal scale in cm
        color (Tuple[int, int, int]): RGB colour
    """
    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=0, le=255)
    name: str = Field(..., min_length=1)
    family: str = "unspecified"
    scoopability: float = Field(..., ge=0, le=1)
    density: float = Field(..., gt=0)
    roughness_amplitude: float = Field(0.0, ge=0)
    roughness_length: float = Field(1.0, gt=0)
    color: Tuple[int, int, int] = (128, 128, 128)


class _RegionBase(BaseModel):
    model_config = ConfigDict(frozen=True)

    material_id: int = Field(..., ge=0, le=255)
    raise_height: float = Field(0.0, ge=0, description="Height of the region above the base, cm")


class RectRegion(_RegionBase):
    """Axis-aligned rectangle [x0, x1] x [y0, y1] in cm."""
    kind: Literal["rect"] = "rect"
    x0: float
    y0: float
    x1: float
    y1: float

    def mask(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        return (xs >= self.x0) & (xs <= self.x1) & (ys >= self.y0) & (ys <= self.y1)


class CircleRegion(_RegionBase):
    """Disc of given radius around (cx, cy) in cm."""
    kind: Literal["circle"] = "circle"
    cx: float
    cy: float
    radius: float = Field(..., gt=0)

    def mask(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        return (xs - self.cx) ** 2 + (ys - self.cy) ** 2 <= self.radius ** 2


class PolygonRegion(_RegionBase):
    """Simple polygon given by its vertices in cm."""
    kind: Literal["polygon"] = "polygon"
    vertices: List[Tuple[float, float]] = Field(..., min_length=3)

    def mask(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        points = np.column_stack([xs.ravel(), ys.ravel()])
        inside = PolygonPath(self.vertices).contains_points(points)
        return inside.reshape(xs.shape)


Region = Annotated[Union[RectRegion, CircleRegion, PolygonRegion], Field(discriminator="kind")]


class MoundSpec(BaseModel):
    """
    Raised cosine-profile mound.

    Attributes:
        x, y (float): Centre in cm
        radius (float): Footprint radius in cm
        height (float): Height added at the centre in cm
        material_id (int, optional): Material painted under the mound
    """
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    radius: float = Field(..., gt=0)
    height: float = Field(..., ge=0)
    material_id: Optional[int] = Field(None, ge=0, le=255)


class TerrainSpec(BaseModel):
    """
    Seeded description of a simulant bin.

    Attributes:
        spec_id (str): Identifier used by scenario configs
        bin_width (float): Extent along x in cm
        bin_length (float): Extent along y in cm
        cell_size (float): Heightmap cell edge in cm
        base_height (float): Height of the flat base surface in cm
        max_height (float): Heights are clipped to [0, max_height]
        materials (List[MaterialSpec]): Material table
        background_material (int): Material of every cell no region covers
        regions (List[Region]): Regions painted in order; later regions win
        mounds (List[MoundSpec]): Mounds added on top of regions
        reset_features (int): Seeded minor bumps of the background material, redrawn on every reset
        reset_feature_height (float): Tallest reset bump in cm
        seed (int): Roughness seed; reseeding emulates a terrain reset
    """
    model_config = ConfigDict(frozen=True)

    spec_id: str = "terrain"
    bin_width: float = Field(90.0, gt=0)
    bin_length: float = Field(70.0, gt=0)
    cell_size: float = Field(1.0, gt=0)
    base_height: float = Field(5.0, ge=0)
    max_height: float = Field(20.0, gt=0)
    materials: List[MaterialSpec] = Field(..., min_length=1)
    background_material: int = Field(..., ge=0, le=255)
    regions: List[Region] = []
    mounds: List[MoundSpec] = []
    reset_features: int = Field(0, ge=0)
    reset_feature_height: float = Field(2.0, gt=0)
    seed: int = 0

    @property
    def grid_shape(self) -> Tuple[int, int]:
        """Heightmap shape (cells along x, cells along y)."""
        return (
            int(round(self.bin_width / self.cell_size)),
            int(round(self.bin_length / self.cell_size)),
        )

    def material_table(self) -> dict:
        return {m.id: m for m in self.materials}

    def with_seed(self, seed: int) -> "TerrainSpec":
        return self.model_copy(update={"seed": int(seed)})
