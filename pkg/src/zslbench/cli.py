"""Command-line entry point.

    zslbench run --config bench.json
    zslbench report --input results.json --format table|ranks|raw
    zslbench audit --split splits.json --names names.txt --pretrain pretrain.txt
    zslbench synth --config synth.json --out DIR

Exit codes: 0 success, 1 a run cell (or audit) failed, 2 bad configuration.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .benchmark import BenchmarkConfig, ConfigError, emit_report, read_results, run_benchmark
from .datamodel import DatasetError, SplitSpec, save_dataset
from .splitgen import SyntheticConfig, audit_overlap, make_synthetic, read_name_list

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def cmd_run(args) -> int:
    cfg = BenchmarkConfig.from_file(args.config)
    if args.output_dir:
        cfg = BenchmarkConfig(**{**cfg.__dict__, "output_dir": args.output_dir})
    records, failures = run_benchmark(cfg)
    print(f"{len(records)} records written to {os.path.join(cfg.output_dir, 'results.json')}")
    for f in failures:
        print(f"FAILED {f.method}/{f.dataset}/fold{f.fold}: {f.error}", file=sys.stderr)
    return EXIT_FAIL if failures else EXIT_OK


def cmd_report(args) -> int:
    try:
        records = read_results(args.input)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"cannot read results {args.input}: {exc}") from None
    out = args.out or os.path.dirname(os.path.abspath(args.input))
    for path in emit_report(records, args.format, out):
        print(path)
    if args.format == "table":
        with open(os.path.join(out, "table.txt"), encoding="utf-8") as fh:
            print(fh.read(), end="")
    return EXIT_OK


def cmd_audit(args) -> int:
    try:
        with open(args.split, encoding="utf-8") as fh:
            split = SplitSpec.from_dict(json.load(fh))
        names = read_name_list(args.names)
        pretrain = read_name_list(args.pretrain) if args.pretrain else []
    except (OSError, json.JSONDecodeError, DatasetError) as exc:
        raise ConfigError(str(exc)) from None
    violations = audit_overlap(split, names, pretrain)
    for v in violations:
        print(v)
    print(f"{len(violations)} violation(s)")
    return EXIT_FAIL if violations else EXIT_OK


def cmd_synth(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = SyntheticConfig.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synthetic config: {exc}") from None
    save_dataset(make_synthetic(cfg), args.out)
    print(f"wrote synthetic dataset to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zslbench", description="Zero-shot learning benchmark harness")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a benchmark config")
    r.add_argument("--config", required=True)
    r.add_argument("--output-dir", help="override the config's output_dir")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="render tables / rank matrices from results.json")
    rep.add_argument("--input", required=True)
    rep.add_argument("--format", choices=["table", "ranks", "raw"], required=True)
    rep.add_argument("--out", help="output directory (default: next to the input)")
    rep.set_defaults(func=cmd_report)

    a = sub.add_parser("audit", help="check a split for pretraining leakage")
    a.add_argument("--split", required=True)
    a.add_argument("--names", required=True)
    a.add_argument("--pretrain")
    a.set_defaults(func=cmd_audit)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
