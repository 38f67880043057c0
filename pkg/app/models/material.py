"""
Material Catalog

Simulant analogs used for training and testing. Training analogs follow the
grain-size classes of the materials the data-collection testbed used; the two
test analogs are the fine Regolith and the unscoopable Comet composition, whose
rugged features are painted to match the Regolith colour.

Roughness lengths follow the grain sizes; scoopability and density are chosen
so the training materials span a wide range of rewards.

A cemented variant of a training material keeps its colour and texture but
cannot be scooped. Training terrains use it for outcrops that look like the
loose ground around them, the way Comet features look like Regolith.
"""

from typing import Dict, List

from app.schemas.terrain import MaterialSpec


SAND = MaterialSpec(id=1, name="Sand", family="fine", scoopability=0.95, density=1.6,
                    roughness_amplitude=0.05, roughness_length=0.5, color=(214, 190, 140))
PEBBLES = MaterialSpec(id=2, name="Pebbles", family="rock", scoopability=0.8, density=1.7,
                       roughness_amplitude=0.4, roughness_length=1.0, color=(140, 130, 120))
SLATE = MaterialSpec(id=3, name="Slate", family="sheet", scoopability=0.3, density=2.6,
                     roughness_amplitude=1.2, roughness_length=3.0, color=(70, 75, 85))
GRAVEL = MaterialSpec(id=4, name="Gravel", family="rock", scoopability=0.55, density=1.8,
                      roughness_amplitude=0.9, roughness_length=2.2, color=(160, 150, 135))
PAPER_BALLS = MaterialSpec(id=5, name="Paper Balls", family="light", scoopability=0.6, density=0.05,
                           roughness_amplitude=2.0, roughness_length=5.0, color=(235, 235, 230))
CORN = MaterialSpec(id=6, name="Corn", family="fine", scoopability=0.85, density=0.75,
                    roughness_amplitude=0.25, roughness_length=0.5, color=(230, 190, 60))
SHREDDED_CARDBOARD = MaterialSpec(id=7, name="Shredded Cardboard", family="sheet", scoopability=0.4,
                                  density=0.1, roughness_amplitude=1.5, roughness_length=4.5,
                                  color=(180, 140, 95))
MULCH = MaterialSpec(id=8, name="Mulch", family="light", scoopability=0.65, density=0.3,
                     roughness_amplitude=0.8, roughness_length=2.0, color=(150, 60, 40))

REGOLITH = MaterialSpec(id=9, name="Regolith", family="test", scoopability=0.9, density=1.5,
                        roughness_amplitude=0.03, roughness_length=0.3, color=(196, 180, 160))
COMET = MaterialSpec(id=10, name="Comet", family="test", scoopability=0.0, density=1.0,
                     roughness_amplitude=1.2, roughness_length=2.5, color=(186, 172, 155))

TRAINING_MATERIALS: List[MaterialSpec] = [
    SAND, PEBBLES, SLATE, GRAVEL, PAPER_BALLS, CORN, SHREDDED_CARDBOARD, MULCH,
]
TEST_MATERIALS: List[MaterialSpec] = [REGOLITH, COMET]

MATERIAL_CATALOG: Dict[int, MaterialSpec] = {m.id: m for m in TRAINING_MATERIALS + TEST_MATERIALS}

CEMENTED_ID_OFFSET = 100


def cemented(material: MaterialSpec) -> MaterialSpec:
    """Unscoopable copy of a material with the same colour, texture and family."""
    return material.model_copy(update={
        "id": material.id + CEMENTED_ID_OFFSET,
        "name": f"Cemented {material.name}",
        "scoopability": 0.0,
        "density": 2.0,
    })
