"""
Experiment Command Module

`run-episode`: one episode, printed attempt by attempt, optionally persisted,
plotted and with per-attempt rankings dumped.
`run-experiment`: scenarios x policies x seeds, persisted under a results directory.
`eval`: summary table (and optional plot and adaptation statistics) from results.
"""

import argparse
import asyncio
import logging
from pathlib import Path

from app.core.dependencies import Services
from app.exceptions import ConfigurationError
from app.schemas.scenario import PolicyKind, ScenarioConfig
from app.services.report import analyze_adaptation, format_table, plot_episode, plot_summary
from app.services.scenarios import SCENARIO_IDS

logger = logging.getLogger(__name__)

POLICY_CHOICES = [p.value for p in PolicyKind]


def register(subparsers) -> None:
    episode = subparsers.add_parser("run-episode", help="Run one scooping episode")
    episode.add_argument("--scenario", required=True, help="Scenario id or JSON spec file")
    episode.add_argument("--policy", required=True, choices=POLICY_CHOICES)
    episode.add_argument("--model", type=Path, help="Checkpoint (required by codega and non_adaptive)")
    episode.add_argument("--budget", type=int, help="Attempts k (default: HARNESS_BUDGET)")
    episode.add_argument("--failure-rate", type=float, help="Simulated planner failure rate")
    episode.add_argument("--beta", type=float, help="UCB weight (default: POLICY_BETA)")
    episode.add_argument("--perception", default="default", help="Perception config id")
    episode.add_argument("--out", type=Path, help="Results directory to persist the episode in")
    episode.add_argument("--plot", type=Path, help="Plot executed footprints over the first observation")
    episode.add_argument("--dump-rankings", type=Path, help="CSV of every attempt's candidate ranking")
    episode.set_defaults(handler=run_episode)

    experiment = subparsers.add_parser("run-experiment", help="Run scenarios x policies x seeds")
    experiment.add_argument("--out", type=Path, help="Results directory (default: PROJECT_RESULTS_DIR)")
    experiment.add_argument("--model", type=Path, help="Checkpoint (required by codega and non_adaptive)")
    experiment.add_argument("--scenarios", nargs="+", default=list(SCENARIO_IDS))
    experiment.add_argument("--policies", nargs="+", choices=POLICY_CHOICES, default=POLICY_CHOICES)
    experiment.add_argument("--runs", type=int, help="Seeds per cell (default: HARNESS_RUNS_PER_CELL)")
    experiment.add_argument("--budget", type=int, help="Attempts k (default: HARNESS_BUDGET)")
    experiment.add_argument("--failure-rate", type=float, help="Simulated planner failure rate")
    experiment.add_argument("--beta", type=float, help="UCB weight (default: POLICY_BETA)")
    experiment.set_defaults(handler=run_experiment)

    evaluate = subparsers.add_parser("eval", help="Summarize experiment results")
    evaluate.add_argument("results", type=Path, help="Results directory or summary CSV file")
    evaluate.add_argument("--plot", type=Path, help="Write a bar chart of the table (PNG)")
    evaluate.add_argument("--adaptation", action="store_true",
                          help="Report where CoDeGa lands after two near-empty scoops")
    evaluate.set_defaults(handler=evaluate_results)


def run_episode(args: argparse.Namespace, services: Services) -> int:
    spec = services.library.resolve(args.scenario)
    policy = PolicyKind(args.policy)
    if policy.needs_model and args.model is None:
        raise ConfigurationError(f"--model is required for policy {policy.value}")
    config = ScenarioConfig(
        scenario_id=spec.spec_id,
        policy=policy,
        budget=args.budget or services.settings.harness.BUDGET,
        seed=args.seed or 0,
        planner_failure_rate=(services.settings.workspace.PLANNER_FAILURE_RATE
                              if args.failure_rate is None else args.failure_rate),
        perception_config=args.perception,
        beta=args.beta,
    )
    model = services.load_model(args.model) if policy.needs_model else None
    trace = []
    result = services.harness.run_episode(config, model, trace=trace)

    for a in result.attempts:
        predicted = "" if a.predicted_mean is None else f"  predicted {a.predicted_mean:.1f} +/- {a.predicted_std:.1f}"
        print(f"attempt {a.attempt}: ({a.action.x:.1f}, {a.action.y:.1f}, {a.action.theta:.2f}, d={a.action.depth}) "
              f"{a.volume:.1f} cm3 {a.mass:.1f} g{' jammed' if a.jammed else ''}"
              f"{f' fallback {a.fallback_depth}' if a.fallback_depth else ''}{predicted}")
    print(f"{result.status}: total {result.total_mass:.1f} g in {len(result.attempts)} attempts"
          f"{'' if result.abort_reason is None else f' ({result.abort_reason})'}")

    if args.out:
        services.results.save_episode(result, args.out)
    if args.dump_rankings:
        if args.dump_rankings.exists():
            args.dump_rankings.unlink()
        for item in trace:
            services.results.save_rankings(item.attempt, item.ranking, item.candidates, args.dump_rankings,
                                           append=True)
    if args.plot and trace:
        scoop = services.settings.scoop
        plot_episode(trace[0].raster, [a.action for a in result.attempts], scoop.LENGTH, scoop.WIDTH, args.plot,
                     title=f"{spec.spec_id} / {policy.label} / seed {config.seed}")
    return 0


def run_experiment(args: argparse.Namespace, services: Services) -> int:
    policies = [PolicyKind(p) for p in args.policies]
    needs_model = any(p.needs_model for p in policies)
    if needs_model and args.model is None:
        raise ConfigurationError("--model is required when codega or non_adaptive is among the policies")
    scenario_ids = [services.library.resolve(ref).spec_id for ref in args.scenarios]
    model = services.load_model(args.model) if needs_model else None
    output_dir = args.out or Path(services.settings.project.RESULTS_DIR)
    runs = args.runs or services.settings.harness.RUNS_PER_CELL
    base = args.seed or 0
    seeds = list(range(base, base + runs))

    summary, _ = asyncio.run(services.harness.run_experiment(
        scenario_ids, policies, seeds, model, output_dir=output_dir, budget=args.budget,
        planner_failure_rate=args.failure_rate, beta=args.beta))
    print(format_table(summary))
    print(f"results -> {output_dir}")
    return 0


def evaluate_results(args: argparse.Namespace, services: Services) -> int:
    path = args.results
    summary_path = path / "summary.csv" if path.is_dir() else path
    summary = services.results.load_summary(summary_path)
    print(format_table(summary))
    if args.plot:
        plot_summary(summary, args.plot)
    if args.adaptation:
        if not path.is_dir():
            raise ConfigurationError("--adaptation needs a results directory with episode files")
        episodes = services.results.load_episodes(path)
        calibration = services.harness.calibration_volume()
        for policy in (PolicyKind.CODEGA, PolicyKind.NON_ADAPTIVE):
            report = analyze_adaptation(episodes, calibration, policy)
            share = "n/a" if report.fraction is None else f"{100 * report.fraction:.0f}%"
            print(f"{policy.label}: {report.eligible_episodes} episodes started with two low scoops; "
                  f"{report.scoopable_majority}/{report.remaining_attempts} later attempts mostly on "
                  f"scoopable material ({share})")
    return 0
