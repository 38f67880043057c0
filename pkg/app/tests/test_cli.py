import json

import pytest

from app.main import main
from app.repositories.raster import RasterRepository
from app.repositories.results import ResultsRepository
from app.schemas.scenario import ExperimentSummary, PolicyKind, SummaryCell


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps({
        "project": {"LOG_LEVEL": "WARNING"},
        "perception": {"RESOLUTION_W": 240, "RESOLUTION_H": 180, "FOCAL_PX": 150.0, "PATCH_SIZE": 16},
        "training": {"ACTIONS_PER_TERRAIN": 12, "RESET_EVERY": 12, "MEAN_EPOCHS": 10, "BATCH_SIZE": 16,
                     "KERNEL_STEPS": 20, "EVAL_INTERVAL": 10, "EVAL_EPISODES": 4, "FEATURE_DIM": 8},
        "harness": {"BUDGET": 2, "RUNS_PER_CELL": 1, "MAX_PARALLEL_EPISODES": 2},
    }), encoding="utf-8")
    return str(path)


@pytest.fixture
def summary_file(tmp_path):
    means = {
        "scenario_1": {PolicyKind.CODEGA: 52.2, PolicyKind.NON_ADAPTIVE: 3.5, PolicyKind.VOL_MAX: 0.0},
        "scenario_2": {PolicyKind.CODEGA: 64.2, PolicyKind.NON_ADAPTIVE: 18.8, PolicyKind.VOL_MAX: 0.0},
        "scenario_3": {PolicyKind.CODEGA: 75.4, PolicyKind.NON_ADAPTIVE: 43.6, PolicyKind.VOL_MAX: 5.6},
    }
    summary = ExperimentSummary(cells=[SummaryCell(scenario_id=s, policy=p, runs=1, mean_mass=m, totals=[m])
                                       for s, row in means.items() for p, m in row.items()])
    return ResultsRepository().save_summary(summary, tmp_path / "summary.csv")


def test_eval_prints_the_summary_table(summary_file, capsys):
    assert main(["eval", str(summary_file)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[-1].split() == ["Average", "63.9", "22.0", "1.9"]


def test_eval_plot(summary_file, tmp_path):
    assert main(["eval", str(summary_file), "--plot", str(tmp_path / "bars.png")]) == 0
    assert (tmp_path / "bars.png").stat().st_size > 0


def test_version(capsys):
    assert main(["--version"]) == 0
    assert "Adaptive Scooping Simulator" in capsys.readouterr().out


def test_usage_errors_exit_with_two(capsys):
    assert main(["dig"]) == 2
    assert main([]) == 2
    assert main(["run-episode", "--scenario", "scenario_1", "--policy", "greedy"]) == 2


def test_application_errors_exit_with_one(tmp_path, config_file, capsys):
    assert main(["eval", str(tmp_path / "missing.csv")]) == 1
    assert "error:" in capsys.readouterr().err

    assert main(["--config", config_file, "run-episode", "--scenario", "scenario_1", "--policy", "codega"]) == 1
    assert "--model is required" in capsys.readouterr().err

    assert main(["--config", config_file, "generate-terrain", "--spec", "atlantis",
                 "--out", str(tmp_path / "x.cdgr")]) == 1
    assert main(["--log-level", "chatty", "eval", str(tmp_path / "missing.csv")]) == 1
    assert main(["--config", str(tmp_path / "nope.json"), "eval", str(tmp_path / "missing.csv")]) == 1


def test_value_and_os_errors_exit_with_one(tmp_path, config_file, capsys):
    assert main(["--config", config_file, "collect-data", "--out", str(tmp_path / "data"),
                 "--terrains", "flat_regolith", "--actions", "-1"]) == 1
    assert "actions per terrain must be >= 0" in capsys.readouterr().err

    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory", encoding="utf-8")
    assert main(["--config", config_file, "generate-terrain", "--spec", "flat_regolith",
                 "--out", str(tmp_path / "x.cdgr"), "--plot", str(blocker / "terrain.png")]) == 1
    assert "error:" in capsys.readouterr().err


def test_generate_terrain(tmp_path, config_file, capsys):
    out = tmp_path / "terrain.cdgr"
    code = main(["--config", config_file, "--seed", "3", "generate-terrain", "--spec", "scenario_2",
                 "--out", str(out), "--observation", str(tmp_path / "obs.cdgr"), "--plot", str(tmp_path / "t.png")])
    assert code == 0
    state = RasterRepository().load_terrain(out)
    assert state.spec.spec_id == "scenario_2"
    assert state.spec.seed == 3
    assert RasterRepository().load_observation(tmp_path / "obs.cdgr").shape == state.shape
    assert (tmp_path / "t.png").exists()
    assert "scenario_2" in capsys.readouterr().out


def test_run_experiment_is_reproducible(tmp_path, config_file):
    args = ["--config", config_file, "run-experiment", "--scenarios", "flat_regolith", "scenario_1",
            "--policies", "vol_max", "--runs", "2", "--budget", "1"]
    assert main(args + ["--out", str(tmp_path / "first")]) == 0
    assert main(args + ["--out", str(tmp_path / "second")]) == 0
    first = (tmp_path / "first" / "summary.csv").read_bytes()
    assert first == (tmp_path / "second" / "summary.csv").read_bytes()
    assert len(list((tmp_path / "first" / "episodes").glob("*.json"))) == 4


def test_run_experiment_defaults_to_the_results_dir(tmp_path, config_file, monkeypatch):
    monkeypatch.setenv("PROJECT_RESULTS_DIR", str(tmp_path / "default"))
    assert main(["--config", config_file, "run-experiment", "--scenarios", "all_comet", "--policies", "vol_max",
                 "--runs", "1", "--budget", "1"]) == 0
    assert (tmp_path / "default" / "summary.csv").exists()


def test_run_episode_persists_and_plots(tmp_path, config_file, capsys):
    code = main(["--config", config_file, "run-episode", "--scenario", "scenario_3", "--policy", "vol_max",
                 "--out", str(tmp_path / "results"), "--plot", str(tmp_path / "episode.png"),
                 "--dump-rankings", str(tmp_path / "ranks.csv")])
    assert code == 0
    out = capsys.readouterr().out
    assert "attempt 1:" in out and "attempt 2:" in out
    episodes = ResultsRepository().load_episodes(tmp_path / "results")
    assert len(episodes) == 1 and len(episodes[0].attempts) == 2
    assert (tmp_path / "episode.png").exists()
    header, *rows = (tmp_path / "ranks.csv").read_text(encoding="utf-8").splitlines()
    assert header.startswith("attempt,rank,candidate_index")
    assert {row.split(",")[0] for row in rows} == {"1", "2"}


@pytest.mark.slow
def test_collect_train_and_deploy(tmp_path, config_file, capsys):
    data, model = tmp_path / "data", tmp_path / "model.ckpt"
    assert main(["--config", config_file, "collect-data", "--out", str(data)]) == 0
    assert main(["--config", config_file, "train", "--data", str(data), "--out", str(model), "--folds", "4"]) == 0
    assert model.exists()
    assert model.with_suffix(".log.csv").exists()
    assert json.loads(model.with_suffix(".report.json").read_text(encoding="utf-8"))["mode"] == "codega"

    results = tmp_path / "results"
    assert main(["--config", config_file, "run-experiment", "--out", str(results), "--model", str(model),
                 "--scenarios", "scenario_1", "--runs", "1"]) == 0
    assert main(["eval", str(results), "--adaptation"]) == 0
    out = capsys.readouterr().out
    assert "CoDeGa" in out and "Vol-Max" in out
