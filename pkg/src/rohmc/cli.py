"""Command-line driver for twin experiments.

Exit codes: 0 success, 1 I/O or contract failure, 2 configuration error,
3 model divergence or non-physical state, 4 sampler abort.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import (ConfigError, ContractError, ModelDivergenceError, NonPhysicalStateError,
                     SamplerAbort)

__all__ = ["EXIT_CONFIG", "EXIT_DIVERGENCE", "EXIT_IO", "EXIT_OK", "EXIT_SAMPLER", "build_parser",
           "main"]

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_SAMPLER = 4

log = logging.getLogger("rohmc")


def _global_flags(suppress):
    # Parent parser so the flags work before or after the subcommand.
    p = argparse.ArgumentParser(add_help=False)
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default,
                   help="JSON config file or builtin:NAME (default: builtin:swe)")
    p.add_argument("--seed", type=int, default=default, help="override the master seed")
    p.add_argument("--out", default=default, help="experiment root directory")
    p.add_argument("--mode", default=default,
                   help="run mode for assimilate and tune-step")
    p.add_argument("-v", "--verbose", action="store_true",
                   default=argparse.SUPPRESS if suppress else False)
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="rohmc", parents=[_global_flags(False)],
                                     description="HMC smoothers and 4D-Var twin experiments")
    parser.add_argument("--version", action="version", version=f"rohmc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_flags(True)
    sub.add_parser("generate-truth", parents=[common], help="integrate the truth trajectory")
    sub.add_parser("observe", parents=[common], help="synthesize observations and background")
    sub.add_parser("assimilate", parents=[common], help="run 4D-Var or an HMC smoother")
    d = sub.add_parser("diagnose", parents=[common], help="compare run directories")
    d.add_argument("run_dirs", nargs="+", help="assimilation output directories")
    sub.add_parser("tune-step", parents=[common], help="scan HMC step sizes")
    return parser


def _run(args):
    from . import experiment as ex

    overrides = {"seed": args.seed} if args.seed is not None else None
    cfg = load_config(args.config or "builtin:swe", overrides=overrides)
    root = Path(args.out or cfg["output"]["directory"])
    cmd = args.command
    if cmd == "generate-truth":
        ex.generate_truth(cfg, root)
    elif cmd == "observe":
        ex.observe(cfg, root)
    elif cmd in ("assimilate", "tune-step"):
        if not args.mode:
            raise ConfigError("mode", f"{cmd} requires --mode")
        if cmd == "assimilate":
            ex.assimilate(cfg, root, args.mode)
        else:
            res = ex.tune_step(cfg, root, args.mode)
            print(f"step_size {res.step_size:.6g}")
    elif cmd == "diagnose":
        ex.diagnose(cfg, root, args.run_dirs)
    log.info("%s finished; outputs under %s", cmd, root)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelDivergenceError, NonPhysicalStateError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except SamplerAbort as exc:
        print(f"sampler abort: {exc}", file=sys.stderr)
        for k, v in sorted(getattr(exc, "diagnostics", {}).items()):
            print(f"  {k}: {v}", file=sys.stderr)
        return EXIT_SAMPLER
    except (OSError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
