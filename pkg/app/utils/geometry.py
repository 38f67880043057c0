"""
Scoop footprint geometry.

The footprint of a scoop starting at (x, y) with heading theta is the rectangle
swept by a blade of width w travelling a distance L along the heading:

    p = (x, y) + u * (cos theta, sin theta) + v * (-sin theta, cos theta),
    0 <= u <= L, |v| <= w / 2

Coverage of heightmap cells is estimated by sub-sampling each cell on an S x S
lattice; the same routine backs the excavation model and the Vol-Max score.
"""

from typing import Tuple

import numpy as np


def to_local(px: np.ndarray, py: np.ndarray, x: float, y: float, theta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Express bin-frame points in the footprint frame (u along heading, v to the left)."""
    c, s = np.cos(theta), np.sin(theta)
    dx, dy = px - x, py - y
    return dx * c + dy * s, -dx * s + dy * c


def footprint_corners(x: float, y: float, theta: float, length: float, width: float,
                      margin: float = 0.0) -> np.ndarray:
    """
    Corners of the footprint rectangle grown by a margin on every side.

    Returns:
        np.ndarray: (4, 2) corner coordinates in the bin frame
    """
    c, s = np.cos(theta), np.sin(theta)
    us = np.array([-margin, length + margin, length + margin, -margin])
    vs = np.array([-(width / 2 + margin), -(width / 2 + margin), width / 2 + margin, width / 2 + margin])
    return np.column_stack([x + us * c - vs * s, y + us * s + vs * c])


def inside_box(points: np.ndarray, x_max: float, y_max: float, x_min: float = 0.0, y_min: float = 0.0) -> bool:
    """True iff every point lies in [x_min, x_max] x [y_min, y_max]."""
    return bool(np.all((points[:, 0] >= x_min) & (points[:, 0] <= x_max)
                       & (points[:, 1] >= y_min) & (points[:, 1] <= y_max)))


def inside_annulus(x: float, y: float, theta: float, length: float, width: float, margin: float,
                   origin: Tuple[float, float], r_min: float, r_max: float) -> bool:
    """
    True iff the grown footprint lies within the annulus r_min <= |p - origin| <= r_max.

    The farthest point of a rectangle is a corner; the nearest is the clamp of the
    origin onto the rectangle in its own frame.
    """
    corners = footprint_corners(x, y, theta, length, width, margin)
    far = np.hypot(corners[:, 0] - origin[0], corners[:, 1] - origin[1]).max()
    if far > r_max:
        return False
    u0, v0 = to_local(np.asarray(origin[0]), np.asarray(origin[1]), x, y, theta)
    uc = np.clip(u0, -margin, length + margin)
    vc = np.clip(v0, -(width / 2 + margin), width / 2 + margin)
    near = float(np.hypot(u0 - uc, v0 - vc))
    return near >= r_min


def footprint_coverage(x: float, y: float, theta: float, length: float, width: float,
                       cell_size: float, shape: Tuple[int, int],
                       subsamples: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Fraction of each heightmap cell covered by the footprint.

    Args:
        x, y, theta (float): Footprint start and heading
        length, width (float): Footprint dimensions in cm
        cell_size (float): Cell edge in cm
        shape (Tuple[int, int]): Grid shape (nx, ny)
        subsamples (int): Lattice points per cell edge

    Returns:
        tuple: (ii, jj, fraction) for every cell with non-zero coverage
    """
    corners = footprint_corners(x, y, theta, length, width)
    i0 = max(int(np.floor(corners[:, 0].min() / cell_size)), 0)
    i1 = min(int(np.floor(corners[:, 0].max() / cell_size)), shape[0] - 1)
    j0 = max(int(np.floor(corners[:, 1].min() / cell_size)), 0)
    j1 = min(int(np.floor(corners[:, 1].max() / cell_size)), shape[1] - 1)
    if i1 < i0 or j1 < j0:
        empty = np.zeros(0, dtype=np.intp)
        return empty, empty, np.zeros(0)

    offsets = (np.arange(subsamples) + 0.5) / subsamples * cell_size
    ci = np.arange(i0, i1 + 1)
    cj = np.arange(j0, j1 + 1)
    # (cells_x, cells_y, S, S) lattice of sample points
    px = (ci[:, None, None, None] * cell_size + offsets[None, None, :, None])
    py = (cj[None, :, None, None] * cell_size + offsets[None, None, None, :])
    px, py = np.broadcast_arrays(px, py)
    u, v = to_local(px, py, x, y, theta)
    inside = (u >= 0) & (u <= length) & (np.abs(v) <= width / 2)
    fraction = inside.sum(axis=(2, 3)) / float(subsamples * subsamples)

    hit_i, hit_j = np.nonzero(fraction)
    return hit_i + i0, hit_j + j0, fraction[hit_i, hit_j]
