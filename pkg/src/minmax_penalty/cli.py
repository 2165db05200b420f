"""Command-line entry point: ``minmax-penalty <command> ...``.

Exit codes: 0 success, 2 parse/validation failure, 3 uncontrollable MDP,
4 policy-enumeration cap exceeded.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import analysis, experiments
from .envs import DEFAULT_LAYOUT, GridSpec, LayoutError, build_chain_walk, build_gridworld, load_layout
from .learner import (
    LearnerConfig,
    behaviour_failure_rate,
    converged_failure_rate,
    run_fixed_penalty,
    run_training,
)
from .mdp import InvalidMdpError, MdpParseError, read_mdp, write_mdp

EXIT_OK, EXIT_INVALID, EXIT_UNCONTROLLABLE, EXIT_CAP = 0, 2, 3, 4


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from e


def _layout(path):
    return DEFAULT_LAYOUT if path is None else load_layout(path)


def cmd_analyze(args) -> int:
    try:
        mdp = read_mdp(Path(args.mdp).read_text())
        sa = analysis.minmax_penalty(mdp, cap=args.policy_cap, variant=args.controllability_variant)
    except (MdpParseError, InvalidMdpError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except analysis.UncontrollableMdpError as e:
        print(f"error: C = 0 ({e})", file=sys.stderr)
        return EXIT_UNCONTROLLABLE
    except analysis.PolicyCapExceeded as e:
        print(f"error: {e}; raise --policy-cap to enumerate", file=sys.stderr)
        return EXIT_CAP
    report = sa.report()
    print(json.dumps(report, indent=2))
    if args.out:
        out = Path(args.out)
        if args.format == "json":
            experiments.write_json(out / "analysis.json", report)
        else:
            cols = ["C", "D", "r_min", "r_max", "minmax_penalty", "n_proper_policies"]
            experiments.write_csv(out / "analysis.csv", cols, [[report[c] for c in cols]])
    return EXIT_OK


def cmd_chainwalk(args) -> int:
    try:
        rows = experiments.chainwalk_penalty_study(args.p, args.penalty)
    except analysis.UncontrollableMdpError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_UNCONTROLLABLE
    cols = experiments.CHAINWALK_COLUMNS
    body = [[r[c] for c in cols] for r in rows]
    print(",".join(cols))
    for row in body:
        print(",".join(str(experiments._cell(v)) for v in row))
    if args.out:
        out = Path(args.out)
        if args.format == "json":
            experiments.write_json(out / "chainwalk.json", {"rows": rows})
        else:
            experiments.write_csv(out / "chainwalk.csv", cols, body)
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        layout = _layout(args.map)
        GridSpec(layout)
    except (OSError, LayoutError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    cfg = LearnerConfig(
        epsilon=args.epsilon, alpha=args.alpha, episodes=args.episodes, step_cap=args.step_cap
    )
    result = experiments.grid_sweep(
        args.kind, args.settings, seeds=args.seeds, base_seed=args.seed, layout=layout, slip=args.slip, cfg=cfg
    )
    cols, body = experiments.sweep_table(result)
    print(",".join(cols))
    for row in body:
        print(",".join(str(experiments._cell(v)) for v in row))
    if args.out:
        for path in experiments.emit_sweep(result, args.out, args.format):
            print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        cfg = LearnerConfig.from_file(args.config) if args.config else LearnerConfig()
        overrides = {k: getattr(args, k) for k in ("epsilon", "alpha", "episodes", "step_cap", "seed")}
        cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
        if args.mdp:
            mdp = read_mdp(Path(args.mdp).read_text())
        elif args.env == "chainwalk":
            mdp = build_chain_walk(args.p)
        else:
            mdp = build_gridworld(GridSpec(_layout(args.map), slip_prob=args.slip)).mdp
    except (OSError, ValueError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    if args.penalty == "adaptive":
        res = run_training(mdp, cfg)
    else:
        res = run_fixed_penalty(mdp, float(args.penalty), cfg)
    summary = {
        "episodes": cfg.episodes,
        "seed": cfg.seed,
        "final_penalty": res.final_penalty if res.estimate is not None else float(args.penalty),
        "converged_failure_rate": converged_failure_rate(mdp, res),
        "behaviour_failure_rate": behaviour_failure_rate(res.logs),
        "steps_to_convergence": res.steps_to_convergence,
        "greedy_policy": res.greedy.tolist(),
    }
    print(json.dumps(summary, indent=2))
    if args.log:
        experiments.write_episode_log(args.log, res.logs)
    return EXIT_OK


def cmd_make_mdp(args) -> int:
    try:
        if args.env == "chainwalk":
            mdp = build_chain_walk(args.p)
        else:
            mdp = build_gridworld(GridSpec(_layout(args.map), slip_prob=args.slip)).mdp
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    text = write_mdp(mdp)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minmax-penalty", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def output_flags(p):
        p.add_argument("--out", help="directory for result files")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("analyze", help="controllability, diameter and Minmax penalty of an MDP file")
    p.add_argument("--mdp", required=True)
    p.add_argument("--policy-cap", type=int, default=analysis.DEFAULT_POLICY_CAP)
    p.add_argument("--controllability-variant", choices=analysis.VARIANTS, default="pairs-max")
    output_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("chainwalk", help="optimal-policy failure rates on the chain walk for several penalties")
    p.add_argument("--p", type=_floats, required=True)
    p.add_argument("--penalty", type=_floats, default=[])
    output_flags(p)
    p.set_defaults(func=cmd_chainwalk)

    p = sub.add_parser("sweep", help="lava gridworld penalty or slip sweep")
    p.add_argument("--kind", choices=("penalty", "slip"), required=True)
    p.add_argument("--map", help="map file (default: built-in 5x5 layout)")
    p.add_argument("--settings", type=_floats, required=True)
    p.add_argument("--seeds", type=int, default=70)
    p.add_argument("--seed", type=int, default=0, help="base seed; run i uses seed + i")
    p.add_argument("--slip", type=float, default=0.25, help="slip probability for penalty sweeps")
    p.add_argument("--episodes", type=int, default=10_000)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--step-cap", type=int, default=1_000)
    output_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="one Q-learning run with the adaptive or a fixed unsafe penalty")
    p.add_argument("--env", choices=("chainwalk", "grid"), default="grid")
    p.add_argument("--mdp", help="MDP file (overrides --env)")
    p.add_argument("--p", type=float, default=0.0)
    p.add_argument("--map")
    p.add_argument("--slip", type=float, default=0.25)
    p.add_argument("--penalty", default="adaptive", help="'adaptive' or a fixed unsafe reward")
    p.add_argument("--config", help="JSON learner config; flags below override it")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--episodes", type=int)
    p.add_argument("--step-cap", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--log", help="CSV file for the per-episode log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("make-mdp", help="write a chain-walk or gridworld MDP file")
    p.add_argument("env", choices=("chainwalk", "grid"))
    p.add_argument("--p", type=float, default=0.0)
    p.add_argument("--map")
    p.add_argument("--slip", type=float, default=0.25)
    p.add_argument("--out")
    p.set_defaults(func=cmd_make_mdp)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
