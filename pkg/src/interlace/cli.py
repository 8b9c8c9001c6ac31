"""Command line entry point: ``interlace <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys

from .coarse import ScaleParams, check_count_recurrence, lambda_choice, scale_table
from .experiments import ExperimentConfig, run
from .lattice import Box, SiteSet
from .potential import equilibrium

CAMPAIGNS = {"vacant-law", "diam-tail", "vol-tail", "sausage-stats", "ubiquity"}


def _campaign(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    if cfg.kind != args.command:
        raise SystemExit(f"config kind {cfg.kind!r} does not match subcommand {args.command!r}")
    if args.workers is not None:
        cfg.workers = args.workers
    if args.seed is not None:
        cfg.seed = args.seed
    if args.replicas is not None:
        cfg.replicas = args.replicas
    cfg.validate()
    report = run(cfg)
    out = args.output or cfg.output
    if out:
        for p in report.write(out):
            print(p)
    else:
        sys.stdout.write(report.csv_text())
    return 0


def _scales(args) -> int:
    p = ScaleParams(args.L, args.L0, args.factor)
    print(json.dumps({"params": p.as_dict(), "lambda": lambda_choice(args.L, args.d),
                      "count_recurrence": check_count_recurrence(args.kmax, args.L, args.d),
                      "levels": scale_table(p, args.kmax, args.d)}, indent=1))
    return 0


def _cap(args) -> int:
    d = args.d
    if args.ball is not None:
        K = Box.ball((0,) * d, args.ball).sites()
    elif args.segment is not None:
        K = SiteSet([(j,) + (0,) * (d - 1) for j in range(args.segment + 1)], d=d)
    else:
        K = SiteSet(json.loads(args.points), d=d)
    sol = equilibrium(K)
    print(json.dumps({"d": d, "sites": len(K), "capacity": sol.capacity,
                      "residual": sol.residual, "condition": sol.condition,
                      "n_clamped": sol.n_clamped, "green_accuracy": sol.green_accuracy},
                     indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="interlace")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in sorted(CAMPAIGNS):
        sp = sub.add_parser(name, help=f"run a {name} campaign from a JSON config")
        sp.add_argument("config")
        sp.add_argument("--output", help="output prefix (writes PREFIX.csv and PREFIX.json)")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replicas", type=int)
        sp.set_defaults(func=_campaign)
    sp = sub.add_parser("scales", help="scale table L_kappa and skeleton count checks")
    sp.add_argument("--L", type=int, default=40)
    sp.add_argument("--L0", type=int, default=1)
    sp.add_argument("--factor", type=int)
    sp.add_argument("--kmax", type=int, default=3)
    sp.add_argument("--d", type=int, default=5)
    sp.set_defaults(func=_scales)
    sp = sub.add_parser("cap", help="capacity of a ball, a segment or a point list")
    sp.add_argument("--d", type=int, default=3)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--ball", type=int, help="radius of the l-inf ball B(0, r)")
    g.add_argument("--segment", type=int, help="N for {j e_1 : 0 <= j <= N}")
    g.add_argument("--points", help="JSON list of points")
    sp.set_defaults(func=_cap)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AssertionError as e:
        print(f"internal assertion failed: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
