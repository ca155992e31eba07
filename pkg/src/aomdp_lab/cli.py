"""Command-line front end.

Subcommands: simulate (run a plan), gen-users (materialize a synthetic
population), oracle (theory self-checks), calibrate (report achieved effect
sizes). Exit codes: 0 success, 1 usage error, 2 runtime failure. The
environment variable AOMDP_LAB_SEED overrides the plan seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .heartsteps import (NEGATIVE_TARGETS, POSITIVE_TARGETS, ScenarioConfig,
                         generate_users, negative_effect_size,
                         positive_effect_size, scenario_from_json, users_to_json)
from .harness import RunPlan, plan_from_json, run_plan
from .oracle import oracle_report


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="aomdp-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run an experiment plan")
    sim.add_argument("--plan", required=True, help="plan JSON path")
    sim.add_argument("--desk", action="store_true",
                     help="small preset: 8 users, 10 reps, horizon 60")
    sim.add_argument("--out", default=None, help="output directory")
    sim.add_argument("--workers", type=int, default=None, help="worker count")

    gen = sub.add_parser("gen-users", help="generate a synthetic population")
    gen.add_argument("--scenario", required=True, help="scenario JSON path")
    gen.add_argument("--out", required=True, help="users JSON output path")

    orc = sub.add_parser("oracle", help="run the theory self-checks")
    orc.add_argument("--out", default=None, help="JSON report output path")
    orc.add_argument("--seed", type=int, default=0)

    cal = sub.add_parser("calibrate", help="report achieved effect sizes")
    cal.add_argument("--scenario", required=True, help="scenario JSON path")
    return parser


def _seed_override() -> Optional[int]:
    raw = os.environ.get("AOMDP_LAB_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise _UsageError(f"AOMDP_LAB_SEED must be an integer, got {raw!r}") from exc


def _cmd_simulate(args: argparse.Namespace) -> int:
    plan = plan_from_json(Path(args.plan).read_text(encoding="utf-8"))
    scenario = plan.scenario
    if args.desk:
        scenario = dataclasses.replace(scenario, n_users=8, horizon=60)
        plan = dataclasses.replace(plan, scenario=scenario, reps=10)
    override = _seed_override()
    if override is not None:
        plan = dataclasses.replace(plan, seed=override)
    if args.out is not None:
        plan = dataclasses.replace(plan, output_dir=args.out)
    if args.workers is not None:
        if args.workers < 1:
            raise _UsageError("--workers must be >= 1")
        plan = dataclasses.replace(plan, parallelism=args.workers)
    return run_plan(plan)


def _cmd_gen_users(args: argparse.Namespace) -> int:
    scenario = scenario_from_json(Path(args.scenario).read_text(encoding="utf-8"))
    seed = _seed_override()
    root = scenario.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence(entropy=root, spawn_key=(0xA11CE,)))
    users = generate_users(scenario, rng)
    Path(args.out).write_text(users_to_json(users), encoding="utf-8")
    print(f"wrote {len(users)} users to {args.out}")
    return 0


def _cmd_oracle(args: argparse.Namespace) -> int:
    report = oracle_report(seed=args.seed)
    for name in ("revealing", "negative_control", "decomposition", "jensen"):
        ok = report[f"{name}_ok"]
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    if args.out is not None:
        Path(args.out).write_text(json.dumps(report, indent=1, default=float) + "\n",
                                  encoding="utf-8")
    return 0 if report["all_ok"] else 2


def _cmd_calibrate(args: argparse.Namespace) -> int:
    scenario = scenario_from_json(Path(args.scenario).read_text(encoding="utf-8"))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=scenario.seed,
                                                       spawn_key=(0xA11CE,)))
    users = generate_users(scenario, rng)
    pos = float(np.mean([positive_effect_size(u) for u in users]))
    neg = float(np.mean([abs(negative_effect_size(u)) for u in users]))
    print(f"positive level {scenario.positive_level}: achieved {pos:.4f} "
          f"(target {POSITIVE_TARGETS[scenario.positive_level]:.4f})")
    print(f"negative level {scenario.negative_level}: achieved {neg:.4f} "
          f"(target {NEGATIVE_TARGETS[scenario.negative_level]:.4f})")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    handlers = {
        "simulate": _cmd_simulate,
        "gen-users": _cmd_gen_users,
        "oracle": _cmd_oracle,
        "calibrate": _cmd_calibrate,
    }
    try:
        return handlers[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        kind = type(exc).__name__
        print(f"usage error ({kind}): {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
