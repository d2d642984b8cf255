"""Command line harness: ``semcom {train,sweep,visualize,oracle}``.

Every command resolves its config from (defaults <- preset <- config
file <- repeated --set overrides) and echoes the result next to its
outputs.  Exit codes: 0 success, 2 config error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config, parse_set_overrides, resolve_config
from .data import DATA_ROOT_ENV
from .errors import ConfigError, DataError, SemcomError
from .experiments import run_oracle, run_sweep, run_train, run_visualize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH",
                        help="JSON config file (see README for keys)")
    parser.add_argument("--preset", metavar="NAME",
                        help="named starting point, e.g. smoke, mnist-fixed")
    parser.add_argument("--set", dest="overrides", action="append",
                        metavar="SECTION.KEY=VALUE", default=[],
                        help="override a config key (repeatable)")


def _resolved_config(args) -> dict:
    overrides = parse_set_overrides(args.overrides)
    if args.config is not None:
        return load_config(args.config, preset=args.preset,
                           overrides=overrides)
    return resolve_config(preset=args.preset, overrides=overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semcom",
        description="Train and evaluate the diffusion-decoded semantic "
                    "communication link.",
        epilog=f"Dataset files are searched under ${DATA_ROOT_ENV} "
               "unless data.root is set in the config.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a pipeline, write checkpoint "
                                     "+ CSV log")
    _add_config_flags(p)
    p.add_argument("--out", metavar="DIR",
                   help="output directory (overrides out_dir)")

    p = sub.add_parser("sweep", help="evaluate a checkpoint over an "
                                     "SNR/CBR/interference grid")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True, metavar="FILE")
    p.add_argument("--out", metavar="CSV", help="output CSV path "
                   "(default: sweep.csv next to the checkpoint)")

    p = sub.add_parser("visualize", help="write original/reconstruction "
                                         "image pairs with metric captions")
    p.add_argument("--checkpoint", required=True, metavar="FILE")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--out", metavar="DIR", default="runs/visualize")

    p = sub.add_parser("oracle", help="run the linear-Gaussian consistency "
                                      "experiment, write mse-vs-n CSV")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out", metavar="DIR", default="runs/oracle")

    return parser


def _dispatch(args) -> int:
    if args.command == "train":
        cfg = _resolved_config(args)
        if args.out is not None:
            cfg["out_dir"] = args.out
        result = run_train(cfg)
        print(f"checkpoint: {result['checkpoint']}")
        print(f"train log:  {result['log']}")
    elif args.command == "sweep":
        cfg = _resolved_config(args)
        out = args.out
        if out is None:
            out = Path(args.checkpoint).parent / "sweep.csv"
        records = run_sweep(cfg, args.checkpoint, out_path=out)
        print(f"wrote {len(records)} rows to {out}")
    elif args.command == "visualize":
        rows = run_visualize(args.checkpoint, args.count, args.out,
                             snr_db=args.snr_db)
        print(f"wrote {len(rows)} image pairs to {args.out}")
    elif args.command == "oracle":
        rows = run_oracle(out_dir=args.out, seeds=args.seeds)
        print(f"wrote {len(rows)} rows to {Path(args.out) / 'oracle.csv'}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SemcomError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
