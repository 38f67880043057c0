"""
Results Repository Module

Persists experiment artifacts as text:

- one JSON document per episode, named <scenario>__<policy>__seed<seed>.json
- summary.csv: scenario_id, policy, runs, mean_mass_g, totals_g (totals joined with ";")
- rank dumps: attempt, rank, candidate_index, x, y, theta, depth, mu, s, score
- training logs: phase, label, step, loss

Floats are written with repr so re-reading them reproduces the stored values
exactly; wall clock times are never persisted.
"""

import csv
import io
import logging
from pathlib import Path
from typing import Iterable, List

from pydantic import ValidationError

from app.exceptions import ResultsError
from app.models.candidate import CandidateSet, Ranking
from app.schemas.scenario import EpisodeResult, ExperimentSummary, PolicyKind, SummaryCell
from app.schemas.training import TrainingLogEntry

logger = logging.getLogger(__name__)

SUMMARY_FIELDS = ["scenario_id", "policy", "runs", "mean_mass_g", "totals_g"]
RANK_FIELDS = ["attempt", "rank", "candidate_index", "x", "y", "theta", "depth", "mu", "s", "score"]


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


class ResultsRepository:
    """
    File access for episode results, summaries, rank dumps and training logs.
    """

    @staticmethod
    def episode_filename(result: EpisodeResult) -> str:
        c = result.config
        return f"{c.scenario_id}__{c.policy.value}__seed{c.seed:04d}.json"

    def save_episode(self, result: EpisodeResult, directory: Path) -> Path:
        path = Path(directory) / "episodes" / self.episode_filename(result)
        self._write(path, result.model_dump_json(indent=2) + "\n")
        return path

    def load_episode(self, path: Path) -> EpisodeResult:
        try:
            return EpisodeResult.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ResultsError(f"Cannot read episode file {path}: {e}")
        except ValidationError as e:
            raise ResultsError(f"Invalid episode file {path}", details=e.errors())

    def load_episodes(self, directory: Path) -> List[EpisodeResult]:
        return [self.load_episode(p) for p in sorted((Path(directory) / "episodes").glob("*.json"))]

    def save_summary(self, summary: ExperimentSummary, path: Path) -> Path:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(SUMMARY_FIELDS)
        for cell in summary.cells:
            writer.writerow([cell.scenario_id, cell.policy.value, cell.runs, repr(cell.mean_mass),
                             ";".join(repr(t) for t in cell.totals)])
        self._write(Path(path), buffer.getvalue())
        return Path(path)

    def load_summary(self, path: Path) -> ExperimentSummary:
        """
        Read a summary table.

        Raises:
            ResultsError: If the file is unreadable or a row is malformed
        """
        try:
            with open(path, newline="", encoding="utf-8") as handle:
                rows = list(csv.DictReader(handle))
        except OSError as e:
            raise ResultsError(f"Cannot read summary {path}: {e}")
        cells = []
        for line, row in enumerate(rows, start=2):
            try:
                totals = [float(t) for t in row["totals_g"].split(";") if t]
                cells.append(SummaryCell(scenario_id=row["scenario_id"], policy=PolicyKind(row["policy"]),
                                         runs=int(row["runs"]), mean_mass=float(row["mean_mass_g"]),
                                         totals=totals))
            except (KeyError, ValueError, AttributeError) as e:
                raise ResultsError(f"Malformed summary row {line} in {path}: {e}")
        return ExperimentSummary(cells=cells)

    def save_rankings(self, attempt: int, ranking: Ranking, candidates: CandidateSet, path: Path,
                      append: bool = False) -> Path:
        path = Path(path)
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        if not append or not path.exists():
            writer.writerow(RANK_FIELDS)
        for rank, index in enumerate(ranking.order):
            index = int(index)
            a = candidates[index].action
            writer.writerow([attempt, rank, index, repr(a.x), repr(a.y), repr(a.theta), repr(a.depth),
                             _fmt(None if ranking.means is None else ranking.means[index]),
                             _fmt(None if ranking.stds is None else ranking.stds[index]),
                             repr(float(ranking.scores[index]))])
        self._write(path, buffer.getvalue(), append=append)
        return path

    def save_training_log(self, entries: Iterable[TrainingLogEntry], path: Path) -> Path:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["phase", "label", "step", "loss"])
        for entry in entries:
            writer.writerow([entry.phase, entry.label, entry.step, repr(entry.loss)])
        self._write(Path(path), buffer.getvalue())
        return Path(path)

    @staticmethod
    def _write(path: Path, text: str, append: bool = False) -> None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "a" if append else "w", encoding="utf-8", newline="") as handle:
                handle.write(text)
        except OSError as e:
            logger.error(f"Failed to write {path}: {e}", exc_info=True)
            raise ResultsError(f"Cannot write {path}: {e}")
