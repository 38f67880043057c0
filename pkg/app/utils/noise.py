"""Procedural value noise for terrain roughness."""

import numpy as np
from scipy.interpolate import RegularGridInterpolator


def value_noise(xs: np.ndarray, ys: np.ndarray, feature_length: float, extent: tuple,
                rng: np.random.Generator) -> np.ndarray:
    """
    Smooth random field in [-1, 1] with features of roughly `feature_length` cm.

    Random values are drawn on a lattice of spacing `feature_length` covering the
    extent and linearly interpolated at the query points.

    Args:
        xs, ys (np.ndarray): Query coordinates in cm (same shape)
        feature_length (float): Lattice spacing in cm
        extent (tuple): (width, length) of the covered area in cm
        rng (np.random.Generator): Source of lattice values

    Returns:
        np.ndarray: Noise values with the shape of xs
    """
    nx = int(np.ceil(extent[0] / feature_length)) + 2
    ny = int(np.ceil(extent[1] / feature_length)) + 2
    lattice = rng.uniform(-1.0, 1.0, size=(nx, ny))
    grid_x = np.arange(nx) * feature_length
    grid_y = np.arange(ny) * feature_length
    interpolator = RegularGridInterpolator((grid_x, grid_y), lattice, method="linear")
    points = np.column_stack([xs.ravel(), ys.ravel()])
    return interpolator(points).reshape(xs.shape)
