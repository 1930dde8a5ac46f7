"""Command-line entry point: ``perimlab <verb> [options]``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
The output root defaults to the config's ``output_dir`` and can be
overridden with the ``PERIMLAB_OUTPUT_ROOT`` environment variable.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config, profile_config
from .demand import DemandError, write_trips
from .network import GeometryError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("perimlab")


def _config(args, **overrides):
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.config:
        return load_config(args.config, **overrides)
    return profile_config(args.profile, **overrides)


def _add_common(p):
    p.add_argument("--config", help="INI scenario file")
    p.add_argument("--profile", default="desk", help="profile when no --config is given")
    p.add_argument("--out", help="output directory")


def cmd_build_net(args):
    from .experiment import build_network, output_root

    cfg = _config(args)
    net = build_network(cfg)
    out = Path(args.out) if args.out else output_root(cfg) / "network.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(net.to_text())
    print(f"{len(net.links)} links, {len(net.cordon_signals)} cordon signals, "
          f"{len(net.gate_links)} gates -> {out}")


def cmd_gen_demand(args):
    from .experiment import build_network, make_trips, output_root

    cfg = _config(args, seed=args.seed, demand=args.demand)
    net = build_network(cfg)
    trips = make_trips(cfg, net)
    out = Path(args.out) if args.out else output_root(cfg) / f"trips_{cfg.demand}_seed{cfg.seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trips(trips, out)
    print(f"{len(trips)} trips -> {out}")


def cmd_train(args):
    from .experiment import train_agents

    cfg = _config(args, episodes=args.episodes)
    out, _, curve = train_agents(cfg, args.out)
    print(f"trained {len({s for _, s, _ in curve})} agents for {cfg.episodes} episodes -> {out}")


def cmd_run(args):
    from .experiment import run

    cfg = _config(args, controller=args.controller, seed=args.seed, weights_dir=args.weights)
    out = run(cfg, args.out, plot=args.plot)
    print(f"{cfg.controller} seed {cfg.seed} -> {out}")


def cmd_compare(args):
    from .experiment import compare, write_table

    rows = compare(args.runs)
    sys.stdout.write(write_table(rows, args.out))


def cmd_sweep(args):
    from .experiment import sweep

    cfg = _config(args, weights_dir=args.weights, controller=args.controller)
    best, results = sweep(cfg, args.param, args.values, args.out)
    for v, en, pn in results:
        print(f"{args.param}={v:g} en_ttt={en:.1f} pn_ttt={pn:.1f}")
    print(f"selected {args.param} = {best:g}")


def cmd_calibrate(args):
    from .experiment import calibrate_ttt, output_root, write_calibration

    cfg = _config(args)
    crit, points = calibrate_ttt(cfg, scales=args.scales)
    out = write_calibration(crit, points, args.out or output_root(cfg) / "calibration")
    print(f"critical PN-TTT = {crit:g} veh*s from {len(points)} points -> {out}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="perimlab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("build-net", help="write the network description")
    _add_common(p)
    p.set_defaults(func=cmd_build_net)

    p = sub.add_parser("gen-demand", help="write a trip table")
    _add_common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--demand", choices=("demand1", "demand2", "custom"))
    p.set_defaults(func=cmd_gen_demand)

    p = sub.add_parser("train", help="train the cordon agents")
    _add_common(p)
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run one controller")
    _add_common(p)
    p.add_argument("--controller")
    p.add_argument("--seed", type=int)
    p.add_argument("--weights", help="trained weights directory")
    p.add_argument("--plot", action="store_true", help="also render plots.svg")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="KPI table over paired runs")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", help="write the table to this file too")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="one run per parameter value")
    _add_common(p)
    p.add_argument("--param", choices=("k_s", "seed"), required=True)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--controller")
    p.add_argument("--weights")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate-ttt", help="estimate the critical PN-TTT")
    _add_common(p)
    p.add_argument("--scales", type=float, nargs="+", default=[0.8, 1.2, 1.6, 2.0, 2.4, 2.8])
    p.set_defaults(func=cmd_calibrate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, GeometryError, DemandError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
