"""
Scenario Library Module

Ships the terrain specs used by training and evaluation:

- one training terrain per training material, with seeded mounds and a
  raised ridge so volume depends on geometry; on half of them the raised
  features are cemented outcrops of the same look;
- the deployment scenarios: flat Regolith with raised unscoopable Comet areas
  plus the minor bumps a bin reset leaves behind (scenario_1, scenario_2),
  and Regolith mounds as tall as the Comet areas (scenario_3);
- calibration and held-out terrains (flat_regolith, all_comet).
"""

import logging
from pathlib import Path
from typing import Dict, List

import numpy as np
from pydantic import ValidationError

from app.exceptions import InvalidTerrainSpecError
from app.models.material import COMET, MATERIAL_CATALOG, REGOLITH, TRAINING_MATERIALS, cemented
from app.schemas.terrain import CircleRegion, MoundSpec, PolygonRegion, RectRegion, TerrainSpec

logger = logging.getLogger(__name__)

COMET_RAISE = 5.0
RESET_FEATURES = 3
RESET_FEATURE_HEIGHT = 3.0
SCENARIO_IDS = ("scenario_1", "scenario_2", "scenario_3")


def _test_materials():
    return [REGOLITH, COMET]


def scenario_1() -> TerrainSpec:
    """Flat Regolith with a raised Comet band along the far wall and one Comet outcrop."""
    return TerrainSpec(
        spec_id="scenario_1",
        materials=_test_materials(),
        background_material=REGOLITH.id,
        reset_features=RESET_FEATURES,
        reset_feature_height=RESET_FEATURE_HEIGHT,
        regions=[
            RectRegion(material_id=COMET.id, raise_height=COMET_RAISE, x0=55.0, y0=0.0, x1=90.0, y1=70.0),
            CircleRegion(material_id=COMET.id, raise_height=COMET_RAISE, cx=25.0, cy=50.0, radius=9.0),
        ],
    )


def scenario_2() -> TerrainSpec:
    """Flat Regolith with an L-shaped Comet wall and a Comet island near the camera."""
    return TerrainSpec(
        spec_id="scenario_2",
        materials=_test_materials(),
        background_material=REGOLITH.id,
        reset_features=RESET_FEATURES,
        reset_feature_height=RESET_FEATURE_HEIGHT,
        regions=[
            PolygonRegion(material_id=COMET.id, raise_height=COMET_RAISE,
                          vertices=[(0.0, 45.0), (90.0, 45.0), (90.0, 70.0), (0.0, 70.0)]),
            RectRegion(material_id=COMET.id, raise_height=COMET_RAISE, x0=65.0, y0=0.0, x1=90.0, y1=45.0),
            CircleRegion(material_id=COMET.id, raise_height=COMET_RAISE, cx=22.0, cy=18.0, radius=8.0),
        ],
    )


def scenario_3() -> TerrainSpec:
    """Comet band as in scenario_1 plus three Regolith mounds of Comet-comparable height."""
    return TerrainSpec(
        spec_id="scenario_3",
        materials=_test_materials(),
        background_material=REGOLITH.id,
        regions=[
            RectRegion(material_id=COMET.id, raise_height=COMET_RAISE, x0=60.0, y0=0.0, x1=90.0, y1=70.0),
        ],
        mounds=[
            MoundSpec(x=18.0, y=20.0, radius=9.0, height=4.5, material_id=REGOLITH.id),
            MoundSpec(x=22.0, y=50.0, radius=9.0, height=4.5, material_id=REGOLITH.id),
            MoundSpec(x=43.0, y=35.0, radius=9.0, height=4.5, material_id=REGOLITH.id),
        ],
    )


def flat_regolith() -> TerrainSpec:
    return TerrainSpec(spec_id="flat_regolith", materials=[REGOLITH], background_material=REGOLITH.id)


def all_comet() -> TerrainSpec:
    return TerrainSpec(spec_id="all_comet", materials=[COMET], background_material=COMET.id)


def training_terrain(material_id: int, seed: int) -> TerrainSpec:
    """
    Single-material training terrain with seeded mounds and a raised ridge.

    On every other (material, seed) pair the mounds and the ridge are cemented
    outcrops: they look like the surrounding material but jam the scoop.

    Args:
        material_id (int): Training material id
        seed (int): Layout and roughness seed

    Returns:
        TerrainSpec: Spec with id "train_<material name>"
    """
    material = MATERIAL_CATALOG[material_id]
    outcrops = (material_id + seed) % 2 == 1
    feature = cemented(material) if outcrops else material
    rng = np.random.default_rng([seed, material_id])
    mounds = [
        MoundSpec(
            x=float(rng.uniform(15.0, 75.0)),
            y=float(rng.uniform(15.0, 55.0)),
            radius=float(rng.uniform(6.0, 12.0)),
            height=float(rng.uniform(1.0, 5.0)),
            material_id=feature.id if outcrops else None,
        )
        for _ in range(int(rng.integers(2, 4)))
    ]
    x0 = float(rng.uniform(5.0, 60.0))
    y0 = float(rng.uniform(5.0, 45.0))
    ridge = RectRegion(material_id=feature.id, raise_height=float(rng.uniform(1.5, 4.0)),
                       x0=x0, y0=y0, x1=x0 + float(rng.uniform(8.0, 25.0)), y1=y0 + float(rng.uniform(6.0, 20.0)))
    name = material.name.lower().replace(" ", "_")
    return TerrainSpec(
        spec_id=f"train_{name}",
        materials=[material, feature] if outcrops else [material],
        background_material=material.id,
        regions=[ridge],
        mounds=mounds,
        seed=seed,
    )


class ScenarioLibrary:
    """
    Registry of the shipped terrain specs.

    Methods:
        get: Look up a spec by id
        training_specs: The training terrains for a seed
        held_out_specs: Terrains built from the test materials only
    """

    def __init__(self, training_seed: int = 0):
        self._specs: Dict[str, TerrainSpec] = {
            spec.spec_id: spec
            for spec in (scenario_1(), scenario_2(), scenario_3(), flat_regolith(), all_comet())
        }
        for spec in self.training_specs(training_seed):
            self._specs[spec.spec_id] = spec

    def get(self, spec_id: str) -> TerrainSpec:
        """
        Raises:
            InvalidTerrainSpecError: If no spec has this id
        """
        try:
            return self._specs[spec_id]
        except KeyError:
            raise InvalidTerrainSpecError(f"Unknown terrain spec '{spec_id}'",
                                          details=sorted(self._specs))

    def register(self, spec: TerrainSpec) -> TerrainSpec:
        self._specs[spec.spec_id] = spec
        return spec

    def resolve(self, reference: str) -> TerrainSpec:
        """
        A spec by id, or loaded from a JSON file and registered under its own id.

        Raises:
            InvalidTerrainSpecError: If the id is unknown or the file is unreadable or invalid
        """
        path = Path(reference)
        if reference in self._specs or path.suffix.lower() != ".json":
            return self.get(reference)
        try:
            spec = TerrainSpec.model_validate_json(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise InvalidTerrainSpecError(f"Cannot read terrain spec {path}: {e}")
        except ValidationError as e:
            raise InvalidTerrainSpecError(f"Invalid terrain spec {path}", details=e.errors())
        logger.info(f"Loaded terrain spec {spec.spec_id} from {path}")
        return self.register(spec)

    def ids(self) -> List[str]:
        return sorted(self._specs)

    @staticmethod
    def training_specs(seed: int) -> List[TerrainSpec]:
        return [training_terrain(m.id, seed) for m in TRAINING_MATERIALS]

    @staticmethod
    def held_out_specs() -> List[TerrainSpec]:
        return [flat_regolith(), all_comet(), scenario_1(), scenario_2(), scenario_3()]
