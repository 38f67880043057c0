"""
Raster Repository Module

Reads and writes terrain states and top-down observations as raster files.

Layout (little-endian):

    magic        4 bytes  b"CDGR"
    version      u16
    flags        u16      bit 0: RGB plane, bit 1: valid plane, bit 2: terrain spec
    nx, ny       u32, u32
    cell_size    f64
    height       float32 * nx * ny   (row-major over [ix, iy])
    material     uint8 * nx * ny     (material ids; zeros for observations)
    rgb          uint8 * nx * ny * 3 (if bit 0)
    valid        uint8 * nx * ny     (if bit 1)
    spec_length  u32, spec JSON      (if bit 2)
"""

import logging
import struct
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError

from app.exceptions import RasterFormatError
from app.models.observation import RasterObservation
from app.models.terrain import TerrainState
from app.schemas.terrain import TerrainSpec

logger = logging.getLogger(__name__)

MAGIC = b"CDGR"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHIId")
FLAG_RGB = 1
FLAG_VALID = 2
FLAG_SPEC = 4


def encode_raster(height: np.ndarray, material: np.ndarray, cell_size: float, rgb: Optional[np.ndarray] = None,
                  valid: Optional[np.ndarray] = None, spec: Optional[TerrainSpec] = None) -> bytes:
    nx, ny = height.shape
    flags = (FLAG_RGB if rgb is not None else 0) | (FLAG_VALID if valid is not None else 0) \
        | (FLAG_SPEC if spec is not None else 0)
    parts = [
        HEADER.pack(MAGIC, FORMAT_VERSION, flags, nx, ny, float(cell_size)),
        np.ascontiguousarray(height, dtype="<f4").tobytes(),
        np.ascontiguousarray(material, dtype=np.uint8).tobytes(),
    ]
    if rgb is not None:
        parts.append(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())
    if valid is not None:
        parts.append(np.ascontiguousarray(valid, dtype=np.uint8).tobytes())
    if spec is not None:
        text = spec.model_dump_json().encode("utf-8")
        parts.append(struct.pack("<I", len(text)))
        parts.append(text)
    return b"".join(parts)


def decode_raster(payload: bytes) -> dict:
    """
    Parse raster bytes into their planes.

    Raises:
        RasterFormatError: On bad magic, unknown version or truncated planes
    """
    if len(payload) < HEADER.size:
        raise RasterFormatError("Raster file is truncated")
    magic, version, flags, nx, ny, cell_size = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise RasterFormatError("Not a raster file (bad magic)")
    if version != FORMAT_VERSION:
        raise RasterFormatError(f"Unsupported raster version {version}")

    offset = HEADER.size
    cells = nx * ny

    def take(size: int) -> bytes:
        nonlocal offset
        if offset + size > len(payload):
            raise RasterFormatError("Raster file is truncated")
        chunk = payload[offset:offset + size]
        offset += size
        return chunk

    planes = {
        "cell_size": cell_size,
        "height": np.frombuffer(take(4 * cells), dtype="<f4").reshape(nx, ny).astype(np.float64),
        "material": np.frombuffer(take(cells), dtype=np.uint8).reshape(nx, ny).copy(),
        "rgb": None,
        "valid": None,
        "spec": None,
    }
    if flags & FLAG_RGB:
        planes["rgb"] = np.frombuffer(take(3 * cells), dtype=np.uint8).reshape(nx, ny, 3).copy()
    if flags & FLAG_VALID:
        planes["valid"] = np.frombuffer(take(cells), dtype=np.uint8).reshape(nx, ny).astype(bool)
    if flags & FLAG_SPEC:
        (length,) = struct.unpack("<I", take(4))
        try:
            planes["spec"] = TerrainSpec.model_validate_json(take(length))
        except ValidationError as e:
            raise RasterFormatError("Embedded terrain spec is invalid", details=e.errors())
    return planes


class RasterRepository:
    """
    File access for terrain and observation rasters.

    Methods:
        save_terrain / load_terrain: TerrainState with its spec
        save_observation / load_observation: RasterObservation with RGB and valid planes
    """

    def save_terrain(self, state: TerrainState, path: Path) -> Path:
        return self._write(path, encode_raster(state.height, state.material, state.cell_size, spec=state.spec))

    def load_terrain(self, path: Path) -> TerrainState:
        planes = decode_raster(self._read(path))
        if planes["spec"] is None:
            raise RasterFormatError(f"Raster {path} carries no terrain spec")
        return TerrainState(height=planes["height"], material=planes["material"], spec=planes["spec"])

    def save_observation(self, raster: RasterObservation, path: Path) -> Path:
        return self._write(path, encode_raster(raster.depth, np.zeros(raster.shape, dtype=np.uint8),
                                               raster.cell_size, rgb=raster.color, valid=raster.valid))

    def load_observation(self, path: Path) -> RasterObservation:
        planes = decode_raster(self._read(path))
        if planes["rgb"] is None:
            raise RasterFormatError(f"Raster {path} has no RGB plane")
        valid = planes["valid"] if planes["valid"] is not None else np.ones(planes["height"].shape, dtype=bool)
        return RasterObservation(planes["height"], planes["rgb"], valid, planes["cell_size"])

    @staticmethod
    def _write(path: Path, payload: bytes) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(payload)
        except OSError as e:
            logger.error(f"Failed to write raster {path}: {e}", exc_info=True)
            raise RasterFormatError(f"Cannot write raster {path}: {e}")
        logger.debug(f"Wrote raster {path} ({len(payload)} bytes)")
        return path

    @staticmethod
    def _read(path: Path) -> bytes:
        try:
            return Path(path).read_bytes()
        except OSError as e:
            raise RasterFormatError(f"Cannot read raster {path}: {e}")
