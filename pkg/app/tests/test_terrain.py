import math

import numpy as np
import pytest

from app.exceptions import InfeasibleActionError, InvalidTerrainSpecError, UnknownMaterialError
from app.models.material import COMET, PEBBLES
from app.schemas.action import ScoopAction
from app.schemas.terrain import MaterialSpec, MoundSpec, RectRegion, TerrainSpec
from app.services.scenarios import ScenarioLibrary, all_comet, training_terrain
from app.services.terrain import PlannerEmulator, measure_mass
from app.tests.conftest import FLAT, WALL, voxel_volume


def test_flat_spec_gives_constant_height(services, flat_spec):
    state = services.terrain.synthesize_terrain(flat_spec)
    assert state.shape == (90, 70)
    assert np.all(state.height == flat_spec.base_height)
    assert np.all(state.material == FLAT.id)


def test_mound_raises_centre_and_leaves_outside_untouched(services, flat_spec):
    spec = flat_spec.model_copy(update={"mounds": [MoundSpec(x=45.5, y=35.5, radius=6.0, height=3.0)]})
    state = services.terrain.synthesize_terrain(spec)
    assert state.height[45, 35] == pytest.approx(spec.base_height + 3.0)
    assert state.height[55, 35] == spec.base_height
    assert state.height[45, 45] == spec.base_height


def test_synthesis_is_deterministic(services):
    spec = training_terrain(4, seed=3)
    first = services.terrain.synthesize_terrain(spec)
    second = services.terrain.synthesize_terrain(spec)
    assert np.array_equal(first.height, second.height)
    assert np.array_equal(first.material, second.material)
    reseeded = services.terrain.synthesize_terrain(spec.with_seed(4))
    assert not np.array_equal(first.height, reseeded.height)


def test_invalid_specs_are_rejected(services, flat_spec):
    outside = flat_spec.model_copy(update={"mounds": [MoundSpec(x=120.0, y=10.0, radius=3.0, height=1.0)]})
    with pytest.raises(InvalidTerrainSpecError) as e:
        services.terrain.synthesize_terrain(outside)
    assert any("outside the bin" in d for d in e.value.details)

    unknown = flat_spec.model_copy(update={"regions": [RectRegion(material_id=42, x0=0, y0=0, x1=10, y1=10)]})
    with pytest.raises(InvalidTerrainSpecError):
        services.terrain.synthesize_terrain(unknown)

    empty = flat_spec.model_copy(update={"regions": [RectRegion(material_id=FLAT.id, x0=0.1, y0=0.1,
                                                                x1=0.2, y1=0.2)]})
    with pytest.raises(InvalidTerrainSpecError):
        services.terrain.synthesize_terrain(empty)


def test_all_comet_scoop_collects_nothing(services):
    state = services.terrain.synthesize_terrain(all_comet())
    action = ScoopAction(x=40.0, y=35.0, theta=0.0, depth=0.8)
    outcome, after = services.terrain.execute_scoop(state, action)
    assert outcome.volume == 0.0
    assert outcome.mass == 0.0
    assert np.array_equal(after.height, state.height)


@pytest.mark.parametrize("theta_index", [0, 1, 3])
@pytest.mark.parametrize("depth", [0.2, 0.8])
def test_flat_scoop_matches_voxel_integration(services, flat_state, theta_index, depth):
    scoop = services.settings.scoop
    action = ScoopAction(x=40.0, y=30.0, theta=scoop.yaws[theta_index], depth=depth)
    outcome, _ = services.terrain.execute_scoop(flat_state, action)
    closed_form = scoop.WIDTH * scoop.LENGTH * depth
    oracle = voxel_volume(flat_state, action, scoop.LENGTH, scoop.WIDTH)
    assert outcome.volume == pytest.approx(oracle, rel=0.02)
    assert outcome.volume == pytest.approx(closed_form, rel=0.02)
    assert outcome.mass == pytest.approx(outcome.volume * FLAT.density)


def test_removed_volume_matches_height_change(services):
    spec = training_terrain(3, seed=1)
    state = services.terrain.synthesize_terrain(spec)
    action = ScoopAction(x=40.0, y=30.0, theta=services.settings.scoop.yaws[2], depth=0.6)
    outcome, after = services.terrain.execute_scoop(state, action)
    lowered = float((state.height - after.height).sum() * state.cell_area)
    assert lowered == pytest.approx(outcome.removed_volume, rel=1e-9, abs=1e-9)
    assert outcome.removed_volume >= outcome.volume
    assert np.all(after.height <= state.height)


def test_collected_volume_never_drops_with_depth(services, flat_spec):
    loam = MaterialSpec(id=3, name="Loam", family="fine", scoopability=0.7, density=1.4,
                        roughness_amplitude=0.8, roughness_length=2.0)
    spec = flat_spec.model_copy(update={
        "materials": [loam],
        "background_material": loam.id,
        "mounds": [MoundSpec(x=30.0, y=30.0, radius=10.0, height=4.0),
                   MoundSpec(x=60.0, y=40.0, radius=8.0, height=6.0)],
    })
    state = services.terrain.synthesize_terrain(spec)
    scoop = services.settings.scoop
    checked = 0
    for x in np.arange(10.0, 85.0, 10.0):
        for y in np.arange(10.0, 65.0, 10.0):
            for theta in scoop.yaws:
                actions = [ScoopAction(x=x, y=y, theta=theta, depth=d) for d in sorted(scoop.DEPTHS)]
                if not services.terrain.check_feasibility(state, actions[0]):
                    continue
                volumes = [services.terrain.execute_scoop(state, a)[0].volume for a in actions]
                assert all(a <= b for a, b in zip(volumes, volumes[1:])), (x, y, theta, volumes)
                checked += 1
    assert checked > 20


def test_scoop_on_scoopability_one_removes_what_it_collects(services, flat_state):
    action = ScoopAction(x=30.0, y=35.0, theta=0.0, depth=0.4)
    outcome, _ = services.terrain.execute_scoop(flat_state, action)
    assert outcome.removed_volume == pytest.approx(outcome.volume)


def test_scoop_jams_on_unscoopable_contact(services, flat_spec):
    spec = flat_spec.model_copy(update={
        "materials": [FLAT, WALL],
        "regions": [RectRegion(material_id=WALL.id, raise_height=2.0, x0=0.0, y0=35.0, x1=90.0, y1=70.0)],
    })
    state = services.terrain.synthesize_terrain(spec)
    # Half of the footprint lies on the raised unscoopable strip
    action = ScoopAction(x=30.0, y=35.0, theta=0.0, depth=0.8)
    outcome, after = services.terrain.execute_scoop(state, action)
    assert outcome.jammed
    assert outcome.volume == 0.0
    assert np.array_equal(after.height, state.height)
    assert outcome.scoopable_fraction == pytest.approx(0.5, abs=0.05)


def test_infeasible_scoop_raises(services, flat_state):
    with pytest.raises(InfeasibleActionError):
        services.terrain.execute_scoop(flat_state, ScoopAction(x=85.0, y=35.0, theta=0.0, depth=0.4))
    with pytest.raises(InfeasibleActionError):
        services.terrain.execute_scoop(flat_state, ScoopAction(x=40.0, y=35.0, theta=0.0, depth=0.5))


def test_feasibility_basic_cases(services, flat_state):
    terrain = services.terrain
    assert terrain.check_feasibility(flat_state, ScoopAction(x=40.0, y=35.0, theta=0.0, depth=0.2))
    assert not terrain.check_feasibility(flat_state, ScoopAction(x=85.0, y=35.0, theta=0.0, depth=0.2))
    assert terrain.check_feasibility(flat_state, ScoopAction(x=85.0, y=35.0, theta=math.pi, depth=0.2))


def test_corner_yaws_match_containment_oracle(services, flat_state):
    scoop = services.settings.scoop
    margin = services.settings.workspace.CLEARANCE
    x, y = 7.5, 7.5
    for theta in scoop.yaws:
        c, s = math.cos(theta), math.sin(theta)
        corners = [(x + u * c - v * s, y + u * s + v * c)
                   for u in (-margin, scoop.LENGTH + margin)
                   for v in (-(scoop.WIDTH / 2 + margin), scoop.WIDTH / 2 + margin)]
        expected = all(0.0 <= px <= 90.0 and 0.0 <= py <= 70.0 for px, py in corners)
        action = ScoopAction(x=x, y=y, theta=theta, depth=0.2)
        assert services.terrain.check_feasibility(flat_state, action) == expected


def test_reach_annulus_limits_feasibility(services, flat_state):
    workspace = services.settings.workspace.model_copy(update={"REACH_MAX": 40.0})
    near = ScoopAction(x=45.0, y=2.0, theta=math.pi / 2, depth=0.2)
    far = ScoopAction(x=45.0, y=50.0, theta=math.pi / 2, depth=0.2)
    assert services.terrain.check_feasibility(flat_state, near, workspace) is False
    assert services.terrain.check_feasibility(flat_state, far, workspace) is False
    wide = services.settings.workspace.model_copy(update={"REACH_MAX": 120.0})
    assert services.terrain.check_feasibility(flat_state, far, wide)


@pytest.mark.parametrize("volumes, expected", [
    ({}, 0.0),
    ({1: 0.0}, 0.0),
    ({1: 40.0}, 60.0),
    ({1: 30.0, 2: 10.0}, 65.0),
])
def test_measure_mass(volumes, expected):
    table = {1: FLAT, 2: WALL}
    assert measure_mass(volumes, table) == pytest.approx(expected)


def test_measure_mass_rejects_bad_input():
    with pytest.raises(UnknownMaterialError):
        measure_mass({99: 1.0}, {1: FLAT})
    with pytest.raises(ValueError):
        measure_mass({1: -1.0}, {1: FLAT})


def test_planner_emulator(services, flat_state):
    feasible = ScoopAction(x=40.0, y=35.0, theta=0.0, depth=0.2)
    infeasible = ScoopAction(x=85.0, y=35.0, theta=0.0, depth=0.2)
    always = PlannerEmulator(services.terrain, flat_state, 0.0)
    assert always(feasible) and not always(infeasible)
    never = PlannerEmulator(services.terrain, flat_state, 1.0, np.random.default_rng(1))
    assert not never(feasible)
    assert not never(infeasible)
    assert never.failures == 1
    with pytest.raises(ValueError):
        PlannerEmulator(services.terrain, flat_state, 1.5)


def test_scenario_library_resolves_ids_and_files(tmp_path, flat_spec):
    library = ScenarioLibrary()
    assert {"scenario_1", "scenario_2", "scenario_3", "flat_regolith", "all_comet"} <= set(library.ids())
    assert len(ScenarioLibrary.training_specs(0)) == 8

    path = tmp_path / "custom.json"
    path.write_text(flat_spec.model_dump_json(), encoding="utf-8")
    assert library.resolve(str(path)) == flat_spec
    assert library.get("flat_test") == flat_spec

    with pytest.raises(InvalidTerrainSpecError):
        library.resolve("no_such_terrain")
    broken = tmp_path / "broken.json"
    broken.write_text('{"spec_id": "x"}', encoding="utf-8")
    with pytest.raises(InvalidTerrainSpecError):
        library.resolve(str(broken))


def test_shipped_scenarios_mix_scoopable_and_unscoopable(services):
    library = ScenarioLibrary()
    for spec_id in ("scenario_1", "scenario_2", "scenario_3"):
        state = services.terrain.synthesize_terrain(library.get(spec_id))
        ids = set(np.unique(state.material).tolist())
        assert ids == {9, COMET.id}


def test_reset_bumps_raise_only_the_background(services, flat_spec):
    spec = flat_spec.model_copy(update={
        "materials": [FLAT, WALL],
        "regions": [RectRegion(material_id=WALL.id, raise_height=2.0, x0=0.0, y0=35.0, x1=90.0, y1=70.0)],
        "reset_features": 4,
        "reset_feature_height": 3.0,
    })
    raised = 0
    for seed in range(5):
        state = services.terrain.synthesize_terrain(spec.with_seed(seed))
        wall = state.material == WALL.id
        assert np.all(state.height[wall] == spec.base_height + 2.0)
        assert np.all(state.height[~wall] >= spec.base_height)
        raised += int((state.height[~wall] > spec.base_height).any())
    assert raised > 0
    first = services.terrain.synthesize_terrain(spec.with_seed(0))
    assert not np.array_equal(first.height, services.terrain.synthesize_terrain(spec.with_seed(1)).height)


def test_training_terrains_alternate_cemented_outcrops(services):
    loose = training_terrain(PEBBLES.id, seed=0)
    assert loose.materials == [PEBBLES]

    spec = training_terrain(PEBBLES.id, seed=1)
    host, outcrop = spec.materials
    assert host == PEBBLES
    assert outcrop.scoopability == 0.0
    assert (outcrop.color, outcrop.family, outcrop.roughness_amplitude) == (host.color, host.family,
                                                                            host.roughness_amplitude)
    state = services.terrain.synthesize_terrain(spec)
    xs, ys = np.meshgrid(np.arange(90) + 0.5, np.arange(70) + 0.5, indexing="ij")
    assert np.all(state.material[spec.regions[0].mask(xs, ys)] == outcrop.id)
    assert all(m.material_id == outcrop.id for m in spec.mounds)


def test_terrain_state_is_immutable(flat_state):
    with pytest.raises(ValueError):
        flat_state.height[0, 0] = 1.0


def test_spec_round_trips_through_json(flat_spec):
    assert TerrainSpec.model_validate_json(flat_spec.model_dump_json()) == flat_spec
