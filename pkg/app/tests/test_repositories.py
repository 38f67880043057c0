import csv

import numpy as np
import pytest

from app.exceptions import RasterFormatError, ResultsError
from app.models.candidate import Candidate, CandidateSet, Ranking
from app.models.observation import Patch, RasterObservation
from app.repositories.raster import MAGIC, RasterRepository, decode_raster, encode_raster
from app.repositories.results import ResultsRepository
from app.schemas.action import ScoopAction
from app.schemas.scenario import (AttemptRecord, EpisodeResult, ExperimentSummary, PolicyKind, ScenarioConfig,
                                  SummaryCell, mean_of)
from app.schemas.training import TrainingLogEntry
from app.services.scenarios import training_terrain


@pytest.fixture
def rough_state(services):
    return services.terrain.synthesize_terrain(training_terrain(2, seed=5))


@pytest.fixture
def sample_episode():
    attempts = [AttemptRecord(attempt=n, action=ScoopAction(x=10.0 * n, y=20.0, theta=0.7853981633974483, depth=0.6),
                              candidate_count=120, volume=12.3456789 * n, mass=18.51851835 * n, jammed=n == 2,
                              fallback_depth=n - 1, scoopable_fraction=0.75, predicted_mean=11.0 + n,
                              predicted_std=2.5)
                for n in (1, 2)]
    return EpisodeResult(config=ScenarioConfig(scenario_id="scenario_3", policy=PolicyKind.CODEGA, budget=2, seed=17,
                                               planner_failure_rate=0.1),
                         attempts=attempts, total_mass=18.51851835 + 2 * 18.51851835, support_size=2,
                         wall_clock=3.5)


def test_terrain_raster_round_trip(rough_state, tmp_path):
    repository = RasterRepository()
    path = repository.save_terrain(rough_state, tmp_path / "terrain.cdgr")
    assert path.read_bytes()[:4] == MAGIC
    loaded = repository.load_terrain(path)
    np.testing.assert_allclose(loaded.height, rough_state.height, atol=1e-5)
    assert np.array_equal(loaded.material, rough_state.material)
    assert loaded.spec == rough_state.spec


def test_observation_raster_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    depth = rng.uniform(0, 15, size=(12, 9)).astype(np.float32).astype(np.float64)
    color = rng.integers(0, 256, size=(12, 9, 3), dtype=np.uint8)
    valid = rng.random((12, 9)) > 0.2
    raster = RasterObservation(depth, color, valid, 0.5)
    repository = RasterRepository()
    loaded = repository.load_observation(repository.save_observation(raster, tmp_path / "obs.cdgr"))
    assert np.array_equal(loaded.depth, depth)
    assert np.array_equal(loaded.color, color)
    assert np.array_equal(loaded.valid, valid)
    assert loaded.cell_size == 0.5


def test_raster_format_errors(rough_state, tmp_path):
    payload = encode_raster(rough_state.height, rough_state.material, rough_state.cell_size)
    with pytest.raises(RasterFormatError, match="magic"):
        decode_raster(b"XXXX" + payload[4:])
    with pytest.raises(RasterFormatError, match="truncated"):
        decode_raster(payload[:-10])
    with pytest.raises(RasterFormatError, match="truncated"):
        decode_raster(b"")
    with pytest.raises(RasterFormatError, match="version"):
        decode_raster(payload[:4] + (9).to_bytes(2, "little") + payload[6:])

    repository = RasterRepository()
    bare = tmp_path / "bare.cdgr"
    bare.write_bytes(payload)
    with pytest.raises(RasterFormatError):
        repository.load_terrain(bare)
    with pytest.raises(RasterFormatError):
        repository.load_observation(bare)
    with pytest.raises(RasterFormatError):
        repository.load_terrain(tmp_path / "missing.cdgr")


def test_episode_round_trip(sample_episode, tmp_path):
    repository = ResultsRepository()
    path = repository.save_episode(sample_episode, tmp_path)
    assert path.name == "scenario_3__codega__seed0017.json"
    assert "wall_clock" not in path.read_text(encoding="utf-8")
    loaded = repository.load_episode(path)
    assert loaded.model_dump(exclude={"wall_clock"}) == sample_episode.model_dump(exclude={"wall_clock"})
    assert repository.load_episodes(tmp_path) == [loaded]


def test_invalid_episode_file(tmp_path):
    path = tmp_path / "episodes" / "broken.json"
    path.parent.mkdir()
    path.write_text('{"config": {"scenario_id": "x", "policy": "greedy"}}', encoding="utf-8")
    with pytest.raises(ResultsError) as e:
        ResultsRepository().load_episode(path)
    assert e.value.details
    with pytest.raises(ResultsError):
        ResultsRepository().load_episode(tmp_path / "none.json")


def test_summary_round_trip(tmp_path):
    summary = ExperimentSummary(cells=[
        SummaryCell(scenario_id="scenario_1", policy=PolicyKind.CODEGA, runs=3,
                    mean_mass=mean_of([10.1, 20.2, 30.3]), totals=[10.1, 20.2, 30.3]),
        SummaryCell(scenario_id="scenario_1", policy=PolicyKind.VOL_MAX, runs=0, mean_mass=0.0, totals=[]),
    ])
    repository = ResultsRepository()
    path = repository.save_summary(summary, tmp_path / "summary.csv")
    assert repository.load_summary(path) == summary


def test_malformed_summary(tmp_path):
    path = tmp_path / "summary.csv"
    path.write_text("scenario_id,policy,runs,mean_mass_g,totals_g\nscenario_1,greedy,1,2.0,2.0\n", encoding="utf-8")
    with pytest.raises(ResultsError):
        ResultsRepository().load_summary(path)
    with pytest.raises(ResultsError):
        ResultsRepository().load_summary(tmp_path / "missing.csv")


def test_rank_dump_appends_under_one_header(tmp_path):
    patch = Patch(np.zeros((4, 4)), np.zeros((4, 4, 3)), 0.2)
    candidates = CandidateSet([Candidate(ScoopAction(x=float(i), y=1.0, theta=0.0, depth=0.2), patch)
                               for i in range(3)], grid_pitch=5.0)
    ranking = Ranking(order=np.array([1, 2, 0]), scores=np.array([1.0, 3.0, 2.0]))
    repository = ResultsRepository()
    path = tmp_path / "ranks.csv"
    repository.save_rankings(1, ranking, candidates, path, append=True)
    repository.save_rankings(2, ranking, candidates, path, append=True)
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 6
    assert [r["candidate_index"] for r in rows[:3]] == ["1", "2", "0"]
    assert rows[3]["attempt"] == "2"
    assert rows[0]["mu"] == "" and rows[0]["score"] == "3.0"


def test_training_log(tmp_path):
    entries = [TrainingLogEntry(phase="mean", label="fold_0", step=0, loss=1.25),
               TrainingLogEntry(phase="kernel", label="codega", step=50, loss=0.5)]
    path = ResultsRepository().save_training_log(entries, tmp_path / "log.csv")
    assert path.read_text(encoding="utf-8").splitlines() == [
        "phase,label,step,loss", "mean,fold_0,0,1.25", "kernel,codega,50,0.5"]
