"""
istn command line

    istn run <config|recipe> [--seed N] [--snapshots N] [--out DIR] [--methods LIST] [--jobs N]
    istn recipes

Exit status: 0 on full success, 1 when any cell failed or output could not be
written, 2 when the config could not be loaded.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

sys.path.append(str(Path(__file__).parent))

from experiments import (
    ParseError,
    ValidationError,
    emit,
    list_recipes,
    load_config,
    resolve_config_path,
    run_experiment,
)
from recommendations import get_recommendations

EXIT_OK = 0
EXIT_CELL_FAILURE = 1
EXIT_CONFIG_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="istn",
        description="Coverage and association analysis for integrated satellite-terrestrial networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run an experiment config or a built-in recipe")
    run.add_argument("config", help="Path to a JSON config, or a recipe name such as fading_check")
    run.add_argument("--seed", type=int, default=None, help="Master Monte-Carlo seed")
    run.add_argument("--snapshots", type=int, default=None, help="Monte-Carlo snapshots per cell")
    run.add_argument("--out", default=None, help="Output directory")
    run.add_argument("--methods", default=None,
                     help="Comma-separated subset of exact,approx,closed_form,mc,grid_baseline")
    run.add_argument("--jobs", type=int, default=None, help="joblib workers (-1 for all cores)")
    run.add_argument("--quiet", action="store_true", help="Hide progress bars")

    sub.add_parser("recipes", help="List the built-in figure recipes")
    return parser


def cmd_recipes(args) -> int:
    recipes = list_recipes()
    if not recipes:
        print("⚠️ No recipes found")
        return EXIT_OK
    print(f"📋 {len(recipes)} built-in recipe(s):")
    width = max(len(name) for name, _ in recipes)
    for name, description in recipes:
        print(f"   {name.ljust(width)}  {description}")
    return EXIT_OK


def cmd_run(args) -> int:
    overrides = {
        "seed": args.seed,
        "snapshots": args.snapshots,
        "output_dir": args.out,
        "methods": args.methods,
        "n_jobs": args.jobs,
    }
    try:
        path = resolve_config_path(args.config)
        cfg = load_config(path, overrides)
    except ValidationError as e:
        print(f"❌ Invalid config '{args.config}': {len(e.problems)} problem(s)")
        for problem in e.problems:
            print(f"   • {problem}")
        return EXIT_CONFIG_ERROR
    except ParseError as e:
        print(f"❌ {e}")
        return EXIT_CONFIG_ERROR

    print(f"✅ Loaded '{cfg.name}' from {path} ({len(cfg.scenarios)} scenario(s), "
          f"methods: {', '.join(cfg.methods)})")

    table = run_experiment(cfg, progress=not args.quiet, report=print)

    written = []
    try:
        for fmt in cfg.formats:
            written.extend(emit(table, fmt, cfg.output_dir))
    except OSError as e:
        print(f"❌ Could not write results to {cfg.output_dir}: {e}")
        return EXIT_CELL_FAILURE
    print(f"💾 Wrote {len(written)} file(s) to {cfg.output_dir}")

    for line in get_recommendations(table):
        print(line)

    if table.failed:
        print(f"⚠️ {len(table.failures)} cell(s) failed")
        for failure in table.failures[:10]:
            where = "all values" if failure["sweep_value"] is None else f"{failure['sweep_value']:g}"
            print(f"   • {failure['scenario']} / {failure['method']} @ {where}: {failure['error']}")
        return EXIT_CELL_FAILURE
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "recipes":
        return cmd_recipes(args)
    return cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
