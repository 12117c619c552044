"""Command-line entry point: ``gpcov run|sweep|demo-1d``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .experiment import Demo1D, demo_1d, emit, emit_demo_1d, run, sweep
from .filtering import FilterConfig
from .robot import STRATEGIES
from .scenario import Scenario, ScenarioError, load_scenario


def _apply_overrides(sc: Scenario, args) -> Scenario:
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    if args.ticks is not None:
        if args.ticks < 1:
            raise ScenarioError("ticks: must be at least 1")
        sc = replace(sc, ticks=args.ticks)
    if getattr(args, "strategy", None):
        sc = replace(sc, strategy=replace(sc.strategy, kind=args.strategy))
    if args.no_filter:
        f = sc.filter
        sc = replace(sc, filter=FilterConfig(f.e_add, f.e_remove, f.z_score, f.mu_max_floor, enabled=False))
    return sc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpcov", description="Coverage control with time-decayed GP estimation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log GP failures and progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, strategy_help):
        sp.add_argument("--scenario", required=True, help="scenario JSON file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--ticks", type=int, help="override the number of ticks")
        sp.add_argument("--strategy", choices=STRATEGIES, help=strategy_help)
        sp.add_argument("--no-filter", action="store_true", help="keep every sample (disable admission/eviction)")

    common(sub.add_parser("run", help="simulate one scenario"), "override the strategy")
    sw = sub.add_parser("sweep", help="run strategies over a range of seeds")
    common(sw, "restrict the sweep to one strategy")
    sw.add_argument("--seeds", type=int, default=20, help="number of seeds, starting at --seed (default 0)")

    demo = sub.add_parser("demo-1d", help="1-D decay demo curves")
    demo.add_argument("--out", required=True, help="output directory")
    demo.add_argument("--epsilon", type=float, default=1e-4)
    demo.add_argument("--tau", type=float, default=1e2)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "demo-1d":
            from .gp import DecayParams

            demo = Demo1D(decay=DecayParams(epsilon=args.epsilon, tau=args.tau))
            for path in emit_demo_1d(demo_1d(demo), demo, args.out):
                print(path)
            return 0
        sc = load_scenario(args.scenario)
        sc = _apply_overrides(sc, args)
        if args.command == "run":
            art = run(sc)
            emit(art, args.out)
            print(json.dumps({"out": args.out, "final_H": art.metrics[-1].H}))
        else:
            start = args.seed or 0
            strategies = (args.strategy,) if args.strategy else STRATEGIES
            summary = sweep(sc, strategies, range(start, start + args.seeds), args.out)
            for kind, row in summary["strategies"].items():
                print(f"{kind:9s} final H {row['final_H_mean']:.4f} +/- {row['final_H_se']:.4f}")
        return 0
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"gpcov: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
