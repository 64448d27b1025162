"""Command-line entry point: ``nmcontrol {simulate,map,converge,sweep,bath-check}``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import config as cfgmod
from . import pipeline
from .heom import HierarchyTooLarge, PropagationAbort

log = logging.getLogger("nmcontrol")


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--preset", choices=cfgmod.PRESETS)
    common.add_argument("--out", help="output directory (default: outputs.directory)")
    common.add_argument("--threads", type=int, help="compiled-kernel threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nmcontrol", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="single propagation")
    m = sub.add_parser("map", parents=[common], help="tomography, volume and rate")
    m.add_argument("--reference", help="earlier map run to compare against")
    c = sub.add_parser("converge", parents=[common], help="volume vs hierarchy depth")
    c.add_argument("--levels", type=_ints, default=[3, 4, 5, 6], help="e.g. 3,4,5,6")
    s = sub.add_parser("sweep", parents=[common], help="intensity x sign grid of map runs")
    s.add_argument("--intensities", type=_floats, default=[5e11, 1e12, 2e12, 3.5e12],
                   help="W/cm^2, comma separated")
    s.add_argument("--signs", type=_ints, default=[1, -1], help="e.g. 1,-1")
    s.add_argument("--workers", type=int, default=1, help="parallel sweep points")
    sub.add_parser("bath-check", parents=[common], help="spectral density and correlation check")
    return p


def load_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.preset(args.preset) if args.preset else cfgmod.RunConfig()
    if args.config:
        with open(args.config) as fh:
            overrides = cfgmod.yaml.safe_load(fh) or {}
        cfg = cfgmod.merge(cfg, overrides)
    cfg = cfgmod.apply_env(cfg)
    if args.threads is not None:
        cfg = cfgmod.merge(cfg, {"threads": args.threads})
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
    except (cfgmod.ConfigError, OSError, cfgmod.yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return pipeline.EXIT_INVALID

    pipeline.set_threads(cfg.threads)
    try:
        if args.command == "simulate":
            rep = pipeline.cmd_simulate(cfg, args.out)
        elif args.command == "map":
            rep = pipeline.cmd_map(cfg, args.out, args.reference)
        elif args.command == "converge":
            rep = pipeline.cmd_converge(cfg, args.levels, args.out)
        elif args.command == "sweep":
            if any(s not in (1, -1) for s in args.signs):
                print("config error: signs must be +1 or -1", file=sys.stderr)
                return pipeline.EXIT_INVALID
            rep = pipeline.cmd_sweep(cfg, args.intensities, args.signs, args.out, args.workers)
        else:
            rep = pipeline.cmd_bath_check(cfg, args.out)
    except (cfgmod.ConfigError, HierarchyTooLarge) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return pipeline.EXIT_INVALID
    except ValueError as exc:
        print(f"invalid request: {exc}", file=sys.stderr)
        return pipeline.EXIT_INVALID
    except PropagationAbort as exc:
        print(f"numerical abort at t = {exc.time_au:.3f} a.u.: {exc}", file=sys.stderr)
        return pipeline.EXIT_ABORT

    flags = ", ".join(f"{k}={v}" for k, v in rep.flags.items())
    print(f"{rep.command}: status {rep.status}, {rep.wall_time_s:.1f} s ({flags})")
    return rep.status


if __name__ == "__main__":
    sys.exit(main())
