"""Command-line driver.

Exit codes: 0 success, 1 usage error, 2 data/artifact error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .attack import SCENARIOS
from .config import config_hash, load_config, stage_hashes
from .errors import ConfigError, DataError

log = logging.getLogger("noskim")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON experiment config")
    common.add_argument("--seed", type=int, help="override the global seed")
    common.add_argument("--output-dir", help="override output_dir")
    common.add_argument("--force", action="store_true",
                        help="recompute up-to-date stages and accept config-hash mismatches")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="noskim", description="Efficiency-robustness attacks on a token-skimming classifier.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth-data", parents=[common], help="generate the synthetic keyword corpus")
    sub.add_parser("train", parents=[common], help="train the skimming classifier")
    a = sub.add_parser("attack", parents=[common], help="run attack campaigns over the budget sweep")
    a.add_argument("--scenario", action="append", choices=list(SCENARIOS),
                   help="restrict to a scenario (repeatable)")
    a.add_argument("--budget", type=int, action="append", choices=range(1, 6), metavar="{1..5}",
                   help="restrict to a budget (repeatable)")
    a.add_argument("--black-box-mode", choices=("counted", "wall_clock"))
    e = sub.add_parser("evaluate", parents=[common], help="compute metrics for attack outputs")
    e.add_argument("--no-wall-clock", action="store_true", help="skip the wall-clock correlation")
    sub.add_parser("report", parents=[common], help="render SVG/CSV from the metrics report")
    r = sub.add_parser("run", parents=[common], help="all stages in order")
    r.add_argument("--black-box-mode", choices=("counted", "wall_clock"))
    sub.add_parser("show-config", parents=[common], help="print the resolved config and hashes")
    return p


def _config(args) -> dict:
    over: dict = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.output_dir is not None:
        over["output_dir"] = args.output_dir
    mode = getattr(args, "black_box_mode", None)
    if mode is not None:
        over["attack"] = {"black_box_mode": mode}
    return load_config(args.config, overrides=over)


def _dispatch(args, cfg):
    if args.command == "synth-data":
        return pipeline.cmd_synth_data(cfg, args.force)
    if args.command == "train":
        return pipeline.cmd_train(cfg, args.force)
    if args.command == "attack":
        budgets = sorted(set(args.budget)) if args.budget else None
        return pipeline.cmd_attack(cfg, args.scenario, budgets, args.force)
    if args.command == "evaluate":
        return pipeline.cmd_evaluate(cfg, args.force, wall_clock_correlation=not args.no_wall_clock)
    if args.command == "report":
        return pipeline.cmd_report(cfg, args.force)
    if args.command == "run":
        return pipeline.run_all(cfg, args.force)
    print(json.dumps({"config": cfg, "config_hash": config_hash(cfg), "stage_hashes": stage_hashes(cfg)},
                     indent=1, sort_keys=True))
    return None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"noskim: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        out = _dispatch(args, cfg)
    except DataError as exc:
        print(f"noskim: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the runtime exit code
        log.debug("failure", exc_info=True)
        print(f"noskim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if out is not None:
        for p in out if isinstance(out, list) else [out]:
            print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
