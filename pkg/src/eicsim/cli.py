"""Command-line entry point: ``eicsim <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import alloc
from .pipeline import RunConfig, StageError, TASKS, run_loop
from .predict import Tier
from .scene import SceneGenConfig, generate_scene, save_scene

logger = logging.getLogger("eicsim")

_SINGLE = {"coverage": 1, "predict-csi": 2, "beam": 3, "allocate": 4}


def _tasks(text: str) -> tuple[int, ...]:
    try:
        out = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad task list {text!r}") from None
    if not out or any(t not in TASKS for t in out):
        raise argparse.ArgumentTypeError(f"tasks must be a comma list drawn from {TASKS}")
    return out


def _tier(text: str) -> Tier:
    for t in Tier:
        if text.lower() in (t.value.lower(), t.name.lower()):
            return t
    raise argparse.ArgumentTypeError(f"unknown tier {text!r}; choose from {[t.value for t in Tier]}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eicsim", description="Environment-aware channel prediction and scheduling.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--grid-gap", type=float, default=2.0, help="Rx grid spacing in metres")

    g = sub.add_parser("gen-scene", parents=[common], help="generate a scene and write it as JSON")
    g.add_argument("--out", required=True, help="output JSON path")

    for name in (*_SINGLE, "run-all"):
        sp = sub.add_parser(name, parents=[common], help=f"run {name}")
        sp.add_argument("--scene", help="scene JSON (default: generate from --seed)")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--tier", type=_tier, action="append",
                        help="predictor tier; repeat to select several (default: all)")
        sp.add_argument("--exact-alloc-limit", type=float, default=alloc.EXACT_LIMIT,
                        help="run the exact allocator only when N**(T*R) is at most this")
        if name == "run-all":
            sp.add_argument("--tasks", type=_tasks, default=TASKS, help="comma list of task ids, e.g. 1,2,4")
    return p


def config_from_args(args) -> RunConfig:
    tasks = args.tasks if args.command == "run-all" else (_SINGLE[args.command],)
    return RunConfig(
        seed=args.seed,
        tasks=tasks,
        out_dir=args.out,
        scene_path=args.scene,
        scene=replace(SceneGenConfig(), rx_gap=args.grid_gap),
        tiers=tuple(args.tier) if args.tier else tuple(Tier),
        exact_alloc_limit=int(args.exact_alloc_limit),
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-scene":
            try:
                scene = generate_scene(replace(SceneGenConfig(), rx_gap=args.grid_gap), args.seed)
                Path(args.out).parent.mkdir(parents=True, exist_ok=True)
                save_scene(scene, args.out)
            except Exception as e:  # noqa: BLE001
                raise StageError("gen-scene", e) from e
            print(f"wrote {args.out}: {len(scene.scatterers)} scatterers, {len(scene.rx_points)} rx points")
            return 0
        try:
            cfg = config_from_args(args)
        except ValueError as e:
            raise StageError("config", e) from e
        report = run_loop(cfg)
        for f in report.files:
            print(Path(cfg.out_dir) / f)
        return 0
    except StageError as e:
        print(f"eicsim: error {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
