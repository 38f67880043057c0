"""
Dataset Repository Module

Persists training datasets as a delimited-text index plus a binary patch file.

    <dir>/records.csv   terrain_id, materials, family, x, y, theta, depth, stiffness, patch_offset, reward
    <dir>/patches.bin   float32 little-endian; per record P*P depth values followed by
                        P*P*3 colour values, at byte offset `patch_offset`
    <dir>/meta.json     {"version": 1, "patch_size": P}

Materials are joined with "|". Floats in the index are written with repr so
they read back exactly.
"""

import csv
import json
import logging
from pathlib import Path

import numpy as np

from app.exceptions import DatasetError
from app.models.dataset import TerrainRecords, TrainingDataset, TrainingRecord
from app.models.observation import Patch
from app.schemas.action import ScoopAction, Stiffness

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
FIELDS = ["terrain_id", "materials", "family", "x", "y", "theta", "depth", "stiffness", "patch_offset", "reward"]


class DatasetRepository:
    """
    Repository for training datasets.

    Methods:
        save: Write a dataset directory
        load: Read a dataset directory
    """

    def save(self, dataset: TrainingDataset, directory: Path) -> Path:
        directory = Path(directory)
        patch_size = None
        try:
            directory.mkdir(parents=True, exist_ok=True)
            with open(directory / "records.csv", "w", newline="", encoding="utf-8") as index, \
                    open(directory / "patches.bin", "wb") as blob:
                writer = csv.writer(index, lineterminator="\n")
                writer.writerow(FIELDS)
                offset = 0
                for terrain in dataset:
                    for record in terrain.records:
                        patch = record.patch
                        patch_size = patch.size
                        payload = np.concatenate([patch.depth_patch.ravel(), patch.color_patch.ravel()])
                        data = payload.astype("<f4").tobytes()
                        blob.write(data)
                        a = record.action
                        writer.writerow([terrain.terrain_id, "|".join(terrain.materials), terrain.family,
                                         repr(a.x), repr(a.y), repr(a.theta), repr(a.depth), a.stiffness.value,
                                         offset, repr(record.reward)])
                        offset += len(data)
            meta = {"version": FORMAT_VERSION, "patch_size": patch_size,
                    "terrains": [{"terrain_id": t.terrain_id, "materials": list(t.materials), "family": t.family}
                                 for t in dataset]}
            (directory / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
        except OSError as e:
            logger.error(f"Failed to write dataset {directory}: {e}", exc_info=True)
            raise DatasetError(f"Cannot write dataset {directory}: {e}")
        logger.info(f"Saved {len(dataset)} records from {len(dataset.terrain_ids())} terrains to {directory}")
        return directory

    def load(self, directory: Path) -> TrainingDataset:
        """
        Raises:
            DatasetError: If a file is missing, the version differs or a row is malformed
        """
        directory = Path(directory)
        try:
            meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
            blob = (directory / "patches.bin").read_bytes()
            with open(directory / "records.csv", newline="", encoding="utf-8") as index:
                rows = list(csv.DictReader(index))
        except (OSError, json.JSONDecodeError) as e:
            raise DatasetError(f"Cannot read dataset {directory}: {e}")
        if meta.get("version") != FORMAT_VERSION:
            raise DatasetError(f"Unsupported dataset version {meta.get('version')}")

        terrains = {t["terrain_id"]: TerrainRecords(t["terrain_id"], tuple(t["materials"]), t["family"])
                    for t in meta.get("terrains", [])}
        size = meta.get("patch_size")
        for line, row in enumerate(rows, start=2):
            try:
                offset = int(row["patch_offset"])
                count = size * size * 4
                values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(np.float64)
                patch = Patch(values[:size * size].reshape(size, size),
                              values[size * size:].reshape(size, size, 3),
                              float(row["depth"]), Stiffness(row["stiffness"]))
                action = ScoopAction(x=float(row["x"]), y=float(row["y"]), theta=float(row["theta"]),
                                     depth=float(row["depth"]), stiffness=Stiffness(row["stiffness"]))
                reward = float(row["reward"])
            except (KeyError, ValueError, TypeError) as e:
                raise DatasetError(f"Malformed dataset row {line}: {e}")
            if reward < 0:
                raise DatasetError(f"Negative reward on dataset row {line}")
            terrain = terrains.setdefault(row["terrain_id"], TerrainRecords(
                row["terrain_id"], tuple(row["materials"].split("|")), row["family"]))
            terrain.records.append(TrainingRecord(row["terrain_id"], patch, action, reward))
        logger.info(f"Loaded {len(rows)} records from {directory}")
        return TrainingDataset(terrains.values())
