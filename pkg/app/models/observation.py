"""
Observation Models

Runtime containers for the perception pipeline: camera pose, point cloud,
top-down raster and action-aligned patch. They hold numpy arrays and are
treated as values; pipeline stages return new instances.
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from app.config import PerceptionSettings
from app.schemas.action import Stiffness


@dataclass(frozen=True)
class CameraPose:
    """
    Pinhole camera on a pan-tilt unit.

    Attributes:
        position (Tuple[float, float, float]): Optical centre in the bin frame, cm
        pan (float): Yaw of the optical axis from +x, radians
        tilt (float): Downward pitch of the optical axis, radians
        focal_px (float): Focal length in pixels
        resolution (Tuple[int, int]): Image (width, height) in pixels
    """
    position: Tuple[float, float, float]
    pan: float
    tilt: float
    focal_px: float
    resolution: Tuple[int, int]

    @classmethod
    def from_settings(cls, settings: PerceptionSettings) -> "CameraPose":
        return cls(
            position=(settings.CAMERA_X, settings.CAMERA_Y, settings.CAMERA_Z),
            pan=settings.CAMERA_PAN,
            tilt=settings.CAMERA_TILT,
            focal_px=settings.FOCAL_PX,
            resolution=(settings.RESOLUTION_W, settings.RESOLUTION_H),
        )

    def axes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Forward, right and down unit vectors of the image frame."""
        forward = np.array([np.cos(self.tilt) * np.cos(self.pan),
                            np.cos(self.tilt) * np.sin(self.pan),
                            -np.sin(self.tilt)])
        right = np.array([np.sin(self.pan), -np.cos(self.pan), 0.0])
        down = np.cross(forward, right)
        return forward, right, down


@dataclass(frozen=True)
class PointCloud:
    """
    Coloured points in the bin frame.

    Attributes:
        points (np.ndarray): (N, 3) float64 x, y, z in cm
        colors (np.ndarray): (N, 3) uint8 RGB
    """
    points: np.ndarray
    colors: np.ndarray

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class RasterObservation:
    """
    Top-down orthographic observation o.

    Attributes:
        depth (np.ndarray): (nx, ny) surface heights in cm
        color (np.ndarray): (nx, ny, 3) uint8 RGB
        valid (np.ndarray): (nx, ny) bool mask of observed cells
        cell_size (float): Cell edge in cm
    """
    depth: np.ndarray
    color: np.ndarray
    valid: np.ndarray
    cell_size: float

    @property
    def shape(self) -> Tuple[int, int]:
        return self.depth.shape

    @property
    def fully_valid(self) -> bool:
        return bool(self.valid.all())


@dataclass(frozen=True)
class Patch:
    """
    Action-aligned local observation fed to the surrogate.

    Attributes:
        depth_patch (np.ndarray): (P, P) heights minus the height at the centre pixel
        color_patch (np.ndarray): (P, P, 3) RGB in [0, 1]
        depth (float): Scooping depth d of the action, cm
        stiffness (Stiffness): Stiffness b of the action
    """
    depth_patch: np.ndarray
    color_patch: np.ndarray
    depth: float
    stiffness: Stiffness = field(default=Stiffness.HIGH)

    @property
    def size(self) -> int:
        return int(self.depth_patch.shape[0])

    def with_action(self, depth: float, stiffness: Stiffness) -> "Patch":
        """Same image content paired with other action parameters."""
        return Patch(self.depth_patch, self.color_patch, depth, stiffness)
