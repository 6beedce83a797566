"""``ddfem`` command line: gen-data | train | solve | sweep | reproduce.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure,
3 I/O failure (missing, unreadable or corrupt artifacts).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import PipelineConfig, load_config
from .errors import ConfigError, DDFEMError
from .evaluation import csv_text
from .pipeline import REPRODUCIBLE, cmd_gen_data, cmd_reproduce, cmd_solve, cmd_sweep, cmd_train

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("ddfem")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ddfem", description="Data-driven finite element pipeline.")
    parser.add_argument("--version", action="version", version=f"ddfem {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, metavar="PATH",
                       help="key = value configuration file")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
        p.add_argument("--threads", type=int, metavar="N", help="worker threads, 0 = auto")
        return p

    common(sub.add_parser("gen-data", help="sample 2x2 patches and write the snapshot archive"))
    common(sub.add_parser("train", help="compress snapshots into a basis archive"))
    common(sub.add_parser("solve", help="assemble, solve, compare with the full-order model"))
    common(sub.add_parser("sweep", help="basis-size sweep and layout extrapolation study"))
    rep = common(sub.add_parser("reproduce", help="run a pinned reference study with pass/fail checks"),
                 config_required=False)
    rep.add_argument("name", choices=REPRODUCIBLE)
    return parser


def _run(args) -> int:
    if args.threads is not None and args.threads < 0:
        raise ConfigError("--threads must be >= 0")
    cfg = load_config(args.config) if args.config else None
    if args.command == "reproduce":
        reports, checks = cmd_reproduce(args.name, args.out, args.threads, overrides=cfg)
        sys.stdout.write(csv_text(reports))
        for c in checks:
            print(c.line())
        ok = all(c.passed for c in checks)
        print(f"{args.name}: {'PASS' if ok else 'FAIL'}")
        return EXIT_OK if ok else EXIT_NUMERICAL
    assert isinstance(cfg, PipelineConfig)
    if args.command == "gen-data":
        print(cmd_gen_data(cfg, args.out, args.threads))
    elif args.command == "train":
        print(cmd_train(cfg, args.out, args.threads))
    else:
        fn = cmd_solve if args.command == "solve" else cmd_sweep
        sys.stdout.write(csv_text(fn(cfg, args.out, args.threads)))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except DDFEMError as exc:
        print(f"ddfem {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ddfem {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
