"""
Training Command Module

`collect-data`: record scoops on the training terrains into a dataset directory.
`train`: train a surrogate from a dataset and write its checkpoint, loss log
and report; optionally score it on held-out terrains.
"""

import argparse
import logging
from pathlib import Path

from app.core.dependencies import Services
from app.services.scenarios import ScenarioLibrary

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    collect = subparsers.add_parser("collect-data", help="Record training scoops on the training terrains")
    collect.add_argument("--out", required=True, type=Path, help="Dataset directory to write")
    collect.add_argument("--terrains", nargs="+", help="Spec ids or JSON files (default: every training terrain)")
    collect.add_argument("--actions", type=int, help="Scoops per terrain (default: TRAINING_ACTIONS_PER_TERRAIN)")
    collect.set_defaults(handler=collect_data)

    train = subparsers.add_parser("train", help="Train a surrogate model from a dataset")
    train.add_argument("--data", required=True, type=Path, help="Dataset directory")
    train.add_argument("--out", required=True, type=Path, help="Checkpoint file to write")
    train.add_argument("--mode", choices=["codega", "joint"], default="codega",
                       help="Fold-split kernel training or the joint no-split ablation")
    train.add_argument("--folds", type=int, help="Number of folds (default: TRAINING_FOLDS)")
    train.add_argument("--log", type=Path, help="Loss log CSV (default: next to the checkpoint)")
    train.add_argument("--heldout-actions", type=int, default=0,
                       help="Scoops per held-out terrain for an episodic NLL evaluation (0 skips it)")
    train.set_defaults(handler=train_model)


def collect_data(args: argparse.Namespace, services: Services) -> int:
    seed = args.seed or 0
    if args.terrains:
        specs = [services.library.resolve(ref) for ref in args.terrains]
    else:
        specs = ScenarioLibrary.training_specs(seed)
    dataset = services.training.collect_training_data(specs, args.actions, seed)
    services.datasets.save(dataset, args.out)
    print(f"{len(dataset)} records from {len(dataset.terrain_ids())} terrains -> {args.out}")
    return 0


def train_model(args: argparse.Namespace, services: Services) -> int:
    seed = args.seed or 0
    dataset = services.datasets.load(args.data)
    result = services.training.train(dataset, mode=args.mode, seed=seed, folds=args.folds)
    services.checkpoints.save(result.model, args.out)

    log_path = args.log or args.out.with_suffix(".log.csv")
    services.results.save_training_log(result.report.log, log_path)
    report_path = args.out.with_suffix(".report.json")
    report_path.write_text(result.report.model_dump_json(indent=2, exclude={"log"}) + "\n", encoding="utf-8")
    if result.report.plan is not None:
        for f, fold in enumerate(result.report.plan.folds):
            print(f"fold {f}: {', '.join(fold)}")
    print(f"{args.mode} model -> {args.out} (signal {result.report.signal_variance:.4g}, "
          f"noise {result.report.noise_variance:.4g})")

    if args.heldout_actions > 0:
        heldout = services.training.collect_training_data(ScenarioLibrary.held_out_specs(), args.heldout_actions,
                                                          seed + 1)
        nll = services.training.evaluate_episodic_nll(result.model, heldout, seed=seed)
        print(f"held-out episodic predictive NLL: {nll:.4f}")
    return 0
