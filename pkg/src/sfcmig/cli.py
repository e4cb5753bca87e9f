"""Command line entry point: ``sfcmig run|sweep|compare|validate``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import harness
from .errors import SfcError


def _scenario(args):
    sc = harness.load_scenario(args.scenario)
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    if args.episodes is not None:
        sc = replace(sc, episodes=args.episodes)
    if getattr(args, "policy", None):
        sc = replace(sc, policy=args.policy)
    harness.validate_scenario(sc)
    return sc


def _out_dir(args, sc):
    return args.out_dir or sc.output_dir


def cmd_run(args):
    sc = _scenario(args)
    summary = harness.run_scenario(sc, _out_dir(args, sc))
    sys.stdout.write(harness.summary_table([summary]))


def cmd_sweep(args):
    sc = _scenario(args)
    values = [v for v in args.values.split(",") if v.strip()]
    points = harness.sweep(sc, args.axis, values, _out_dir(args, sc))
    sys.stdout.write(harness.sweep_table(args.axis, points))
    if all(p.summary is None for p in points):
        raise SystemExit(1)


def cmd_compare(args):
    sc = _scenario(args)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    summaries = harness.compare(policies, sc, _out_dir(args, sc))
    sys.stdout.write(harness.summary_table(summaries))


def cmd_validate(args):
    sc = _scenario(args)
    problem = harness.build_problem(sc)
    from .state import initial_placement
    initial_placement(problem)
    print(f"ok: {len(problem.topology.nodes)} nodes, {len(problem.function_nodes)} function nodes, "
          f"{len(problem.chains)} chains, {len(problem.flows)} flows")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sfcmig", description="SFC migration experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir")
        sp.add_argument("--episodes", type=int)

    sp = sub.add_parser("run", help="run the scenario's policy")
    common(sp)
    sp.add_argument("--policy", choices=harness.POLICIES)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run the scenario along one axis")
    common(sp)
    sp.add_argument("--axis", required=True, choices=sorted(harness.AXES))
    sp.add_argument("--values", required=True, help="comma separated")
    sp.add_argument("--policy", choices=harness.POLICIES)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("compare", help="run several policies on the same traffic")
    common(sp)
    sp.add_argument("--policies", required=True, help="comma separated")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("validate", help="check a scenario file and its inputs")
    common(sp)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except SfcError as exc:
        print(f"error [{exc.module}]: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
