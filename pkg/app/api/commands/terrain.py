"""
Terrain Command Module

`generate-terrain`: synthesize a terrain from a spec id or JSON spec file and
write it as a raster file, optionally with its processed observation and a plot.
"""

import argparse
import logging
from pathlib import Path

from app.core.dependencies import Services
from app.core.random import rng_for
from app.services.report import plot_terrain

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("generate-terrain", help="Synthesize a terrain raster from a spec")
    parser.add_argument("--spec", required=True, help="Spec id (e.g. scenario_1) or path to a JSON spec file")
    parser.add_argument("--out", required=True, type=Path, help="Terrain raster file to write")
    parser.add_argument("--observation", type=Path, help="Also write the processed top-down observation here")
    parser.add_argument("--plot", type=Path, help="Write a height/material plot (PNG)")
    parser.set_defaults(handler=generate_terrain)


def generate_terrain(args: argparse.Namespace, services: Services) -> int:
    spec = services.library.resolve(args.spec)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    state = services.terrain.synthesize_terrain(spec)
    services.rasters.save_terrain(state, args.out)
    print(f"{spec.spec_id}: grid {state.shape[0]}x{state.shape[1]}, volume {state.total_volume():.1f} cm3 -> {args.out}")

    if args.observation:
        raster = services.perception.observe(state, rng=rng_for(spec.seed, "noise"))
        services.rasters.save_observation(raster, args.observation)
        print(f"observation -> {args.observation}")
    if args.plot:
        plot_terrain(state, args.plot)
    return 0
