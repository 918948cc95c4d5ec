"""
Command Line Interface
    python cli.py list [--json]
    python cli.py run <scenario> [--output-dir DIR] [--seed N] [--threads N] [--emit-fields]
"""

import argparse
import json
import os
import sys
import traceback

from dotenv import load_dotenv

from engine.errors import ConfigError, OuLabError
from experiments import list_scenarios
from experiments.scenario_loader import scenarios_dir
from runner import EXIT_ERROR, ScenarioRunner

# Load environment variables
load_dotenv()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oulab",
        description="Cost-uniform approximate null-controllability experiments")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run one scenario file")
    run.add_argument("scenario", help="scenario YAML file or the name of a shipped scenario")
    run.add_argument("--output-dir", default=None,
                     help="artifact root (default: $OULAB_OUTPUT_DIR or ./outputs)")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--threads", type=int, default=None,
                     help="worker threads for FFTs and per-center maps (default: $OULAB_THREADS or 1)")
    run.add_argument("--emit-fields", action="store_true",
                     help="also write binary field dumps and 1-D slices")

    listing = commands.add_parser("list", help="list shipped scenarios")
    listing.add_argument("--json", action="store_true", help="machine-readable listing")
    return parser


def resolve_scenario(name: str) -> str:
    """A path as given, or a shipped scenario by name"""
    if os.path.exists(name):
        return name
    shipped = os.path.join(scenarios_dir(), f"{name}.yaml")
    if os.path.exists(shipped):
        return shipped
    return name


def list_command(as_json: bool) -> int:
    catalog = list_scenarios()
    if as_json:
        print(json.dumps(catalog, indent=2, sort_keys=True))
        return 0
    print("\n" + "="*60)
    print("SHIPPED SCENARIOS")
    print("="*60 + "\n")
    for i, item in enumerate(catalog, 1):
        print(f"[{i}] {item['name']}  ({item['experiment']}, example: {item['example']})")
        print(f"    {item['description']}")
    print(f"\n[OK] {len(catalog)} scenarios\n")
    return 0


def main(argv=None) -> int:
    """Parse arguments and dispatch; returns the process exit status"""
    args = build_parser().parse_args(argv)
    if args.command == "list":
        return list_command(args.json)

    try:
        runner = ScenarioRunner(output_dir=args.output_dir, threads=args.threads,
                                emit_fields=args.emit_fields, seed=args.seed)
        return runner.run(resolve_scenario(args.scenario)).exit_code
    except ConfigError as e:
        print(f"\n[ERROR] Invalid scenario: {e}")
        return EXIT_ERROR
    except OuLabError as e:
        print(f"\n[ERROR] {e}")
        traceback.print_exc()
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
