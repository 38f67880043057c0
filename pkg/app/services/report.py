"""
Report Service Module

Turns experiment output into tables, plots and the adaptation statistics.

Display rounding happens only here; stored means keep full precision.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence

import matplotlib
import matplotlib.pyplot as plt
import numpy as np
from pydantic import BaseModel, Field

from app.models.observation import RasterObservation
from app.models.terrain import TerrainState
from app.schemas.action import ScoopAction
from app.schemas.scenario import EpisodeResult, ExperimentSummary, PolicyKind
from app.utils.geometry import footprint_corners

matplotlib.use("Agg")

logger = logging.getLogger(__name__)

LOW_VOLUME_FRACTION = 0.1
EARLY_ATTEMPTS = 2


class AdaptationReport(BaseModel):
    policy: PolicyKind = Field(..., description="Policy the statistics belong to")
    calibration_volume: float = Field(..., description="Reference flat-Regolith scoop volume, cm^3")
    eligible_episodes: int = Field(0, description="Episodes whose first attempts all fell below the threshold")
    remaining_attempts: int = Field(0, description="Later attempts of eligible episodes")
    scoopable_majority: int = Field(0, description="Later attempts with most of the footprint on scoopable material")

    @property
    def fraction(self) -> Optional[float]:
        return self.scoopable_majority / self.remaining_attempts if self.remaining_attempts else None


def format_table(summary: ExperimentSummary) -> str:
    """
    Mean mass per scenario and policy, plus the average of the per-scenario means.

    Values are shown with one decimal.
    """
    policies = summary.policies()
    scenarios = summary.scenarios()
    width = max([len("Average")] + [len(s) for s in scenarios]) + 2
    header = "Scenario".ljust(width) + "".join(p.label.rjust(14) for p in policies)
    lines = [header, "-" * len(header)]
    for scenario in scenarios:
        cells = []
        for policy in policies:
            value = summary.mean(scenario, policy)
            cells.append(("-" if value is None else f"{value:.1f}").rjust(14))
        lines.append(scenario.ljust(width) + "".join(cells))
    lines.append("-" * len(header))
    lines.append("Average".ljust(width) + "".join(f"{summary.policy_average(p):.1f}".rjust(14) for p in policies))
    if summary.failures:
        lines.append(f"({summary.failures} failed episodes excluded)")
    return "\n".join(lines)


def analyze_adaptation(results: Sequence[EpisodeResult], calibration_volume: float,
                       policy: PolicyKind = PolicyKind.CODEGA) -> AdaptationReport:
    """
    Where a policy lands after its first attempts came back nearly empty.

    An episode is eligible when each of its first EARLY_ATTEMPTS attempts
    collected less than LOW_VOLUME_FRACTION of the calibration volume. For
    the later attempts of eligible episodes, count those whose footprint lies
    mostly on scoopable material.
    """
    threshold = LOW_VOLUME_FRACTION * calibration_volume
    report = AdaptationReport(policy=policy, calibration_volume=calibration_volume)
    for result in results:
        if result.config.policy != policy or len(result.attempts) <= EARLY_ATTEMPTS:
            continue
        if all(a.volume < threshold for a in result.attempts[:EARLY_ATTEMPTS]):
            later = result.attempts[EARLY_ATTEMPTS:]
            report.eligible_episodes += 1
            report.remaining_attempts += len(later)
            report.scoopable_majority += sum(a.scoopable_fraction > 0.5 for a in later)
    return report


def plot_summary(summary: ExperimentSummary, path: Path) -> Path:
    """Grouped bar chart of mean mass per scenario and policy."""
    scenarios = summary.scenarios()
    policies = summary.policies()
    x = np.arange(len(scenarios) + 1)
    width = 0.8 / max(len(policies), 1)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for k, policy in enumerate(policies):
        values = [summary.mean(s, policy) or 0.0 for s in scenarios] + [summary.policy_average(policy)]
        ax.bar(x + (k - (len(policies) - 1) / 2) * width, values, width, label=policy.label)
    ax.set_xticks(x)
    ax.set_xticklabels(scenarios + ["Average"])
    ax.set_ylabel("Mean scooped mass (g)")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)


def plot_terrain(state: TerrainState, path: Path) -> Path:
    """Height and material maps of a terrain side by side."""
    fig, (left, right) = plt.subplots(1, 2, figsize=(12, 4.5))
    extent = (0, state.shape[0] * state.cell_size, 0, state.shape[1] * state.cell_size)
    image = left.imshow(state.height.T, cmap="terrain", origin="lower", extent=extent)
    fig.colorbar(image, ax=left, label="Height (cm)")
    left.set_title(f"{state.spec.spec_id} height")
    names = {m.id: m.name for m in state.spec.materials}
    ids = sorted(names)
    lookup = np.zeros(256, dtype=int)
    lookup[ids] = np.arange(len(ids))
    image = right.imshow(lookup[state.material].T, cmap="tab10", origin="lower", extent=extent,
                         vmin=-0.5, vmax=len(ids) - 0.5)
    bar = fig.colorbar(image, ax=right, ticks=range(len(ids)))
    bar.ax.set_yticklabels([names[i] for i in ids])
    right.set_title("Material")
    for ax in (left, right):
        ax.set_xlabel("x (cm)")
        ax.set_ylabel("y (cm)")
    return _save(fig, path)


def plot_episode(raster: RasterObservation, actions: List[ScoopAction], length: float, width: float,
                 path: Path, title: str = "") -> Path:
    """Executed scoop footprints drawn over a top-down depth raster."""
    fig, ax = plt.subplots(figsize=(8, 6))
    extent = (0, raster.shape[0] * raster.cell_size, 0, raster.shape[1] * raster.cell_size)
    image = ax.imshow(raster.depth.T, cmap="terrain", origin="lower", extent=extent)
    fig.colorbar(image, ax=ax, label="Height (cm)")
    for n, action in enumerate(actions, start=1):
        corners = footprint_corners(action.x, action.y, action.theta, length, width)
        closed = np.vstack([corners, corners[:1]])
        ax.plot(closed[:, 0], closed[:, 1], color="red", linewidth=1.5)
        ax.annotate(str(n), (action.x, action.y), color="white", fontsize=9, ha="center", va="center")
    ax.set_xlabel("x (cm)")
    ax.set_ylabel("y (cm)")
    ax.set_title(title)
    return _save(fig, path)


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info(f"Wrote plot {path}")
    return path
